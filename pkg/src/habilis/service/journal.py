"""Append-only command journal, periodic snapshots and the audit trail.

Layout of a data directory::

    journal.jsonl   one applied command per line, the source of truth
    snapshot.json   {"sequence": n, "store": {...}}, replay accelerator
    audit.jsonl     one record per received command, applied or rejected

Replay is fail-stop: a record that does not parse, lacks its newline, breaks
sequence order, or no longer reproduces its recorded generation halts the boot
with the byte offset of the record.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Iterator, Optional, Tuple

from ..errors import CommandRejected, JournalCorrupt, MalformedStore
from ..model import EntitlementStore, dumps_canonical
from .commands import apply_command

log = logging.getLogger(__name__)

JOURNAL = "journal.jsonl"
SNAPSHOT = "snapshot.json"
AUDIT = "audit.jsonl"


class Journal:
    def __init__(self, data_dir, durable: bool = True):
        self.dir = Path(data_dir)
        self.durable = durable
        self.dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.dir, os.W_OK):
            raise PermissionError(f"data directory {self.dir} is not writable")

    @property
    def journal_path(self) -> Path:
        return self.dir / JOURNAL

    @property
    def snapshot_path(self) -> Path:
        return self.dir / SNAPSHOT

    @property
    def audit_path(self) -> Path:
        return self.dir / AUDIT

    def _append(self, path: Path, doc: dict) -> None:
        with open(path, "ab") as fh:
            fh.write(dumps_canonical(doc) + b"\n")
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())

    def append(self, entry: dict) -> None:
        self._append(self.journal_path, entry)

    def append_audit(self, record: dict) -> None:
        self._append(self.audit_path, record)

    def write_snapshot(self, sequence: int, store: EntitlementStore) -> None:
        tmp = self.snapshot_path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(dumps_canonical({"sequence": sequence, "store": store.to_doc()}))
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())
        os.replace(tmp, self.snapshot_path)

    def read_snapshot(self) -> Tuple[int, EntitlementStore]:
        if not self.snapshot_path.exists():
            return 0, EntitlementStore()
        try:
            doc = json.loads(self.snapshot_path.read_bytes())
            return int(doc["sequence"]), EntitlementStore.from_doc(doc["store"])
        except (ValueError, KeyError, TypeError, MalformedStore) as exc:
            raise JournalCorrupt(self.snapshot_path, 0, f"unreadable snapshot: {exc}") from None

    def entries(self) -> Iterator[Tuple[int, dict]]:
        """Yield ``(byte_offset, entry)`` for every journal record."""
        if not self.journal_path.exists():
            return
        offset = 0
        last_sequence = 0
        with open(self.journal_path, "rb") as fh:
            for line in fh:
                if not line.endswith(b"\n"):
                    raise JournalCorrupt(self.journal_path, offset, "truncated record")
                try:
                    entry = json.loads(line)
                except (ValueError, UnicodeDecodeError):
                    raise JournalCorrupt(self.journal_path, offset, "record is not valid JSON") from None
                if (
                    not isinstance(entry, dict)
                    or not isinstance(entry.get("sequence"), int)
                    or not isinstance(entry.get("generation"), int)
                    or not isinstance(entry.get("kind"), str)
                ):
                    raise JournalCorrupt(self.journal_path, offset, "record lacks sequence/generation/kind")
                if entry["sequence"] <= last_sequence:
                    raise JournalCorrupt(self.journal_path, offset, "sequence does not increase")
                last_sequence = entry["sequence"]
                yield offset, entry
                offset += len(line)

    def last_audit_sequence(self) -> int:
        if not self.audit_path.exists():
            return 0
        last = 0
        with open(self.audit_path, "rb") as fh:
            for line in fh:
                try:
                    last = max(last, int(json.loads(line)["sequence"]))
                except (ValueError, KeyError, TypeError):
                    log.warning("skipping unreadable audit line in %s", self.audit_path)
        return last

    def replay(self) -> Tuple[int, EntitlementStore, int]:
        """Rebuild the store: snapshot, then every journal record past it.

        Returns ``(last_sequence, store, records_replayed)``.
        """
        sequence, store = self.read_snapshot()
        replayed = 0
        for offset, entry in self.entries():
            if entry["sequence"] <= sequence:
                continue
            try:
                store = apply_command(store, entry["kind"], entry.get("payload"))
            except CommandRejected as exc:
                raise JournalCorrupt(self.journal_path, offset, f"record no longer applies: {exc.message}") from None
            if store.generation != entry["generation"]:
                raise JournalCorrupt(
                    self.journal_path,
                    offset,
                    f"replay reached generation {store.generation}, record says {entry['generation']}",
                )
            sequence = entry["sequence"]
            replayed += 1
        return sequence, store, replayed


def open_journal(data_dir: Optional[os.PathLike], durable: bool = True) -> Optional[Journal]:
    return None if data_dir is None else Journal(data_dir, durable)
