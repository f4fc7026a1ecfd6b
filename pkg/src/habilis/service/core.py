"""The habilitation service: grant retrieval, decisions and admin mutation.

Transport-agnostic. :meth:`HabilitationService.handle` maps a request
(method, path, headers, raw body) to a :class:`Response`; the HTTP server and
the in-memory transport both go through it, so they speak identical documents.

Readers take one reference to the current immutable store and compute
entirely against it. Writers are serialized by a lock and publish the next
store with a single attribute assignment.
"""

from __future__ import annotations

import hmac
import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional
from urllib.parse import unquote

from ..engine import expand_macro_functions, legacy_authorize, macro_authorize
from ..errors import CommandRejected, HabilisError, MalformedRequest, Unauthorized, UnknownUser
from ..model import EntitlementStore
from .commands import CommandKind, apply_command, parse_kind
from .journal import Journal

log = logging.getLogger(__name__)

MODES = ("LEGACY", "MACRO")


@dataclass(frozen=True)
class Response:
    status: int
    body: dict


def _error(status: int, code: str, message: str, **extra) -> Response:
    return Response(status, {"code": code, "message": message, **extra})


def now_ms() -> int:
    return int(time.time() * 1000)


class HabilitationService:
    def __init__(
        self,
        data_dir=None,
        admin_secret: Optional[str] = None,
        snapshot_every: int = 100,
        *,
        durable: bool = True,
        clock: Callable[[], int] = now_ms,
        store: Optional[EntitlementStore] = None,
    ):
        if snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")
        self.journal = Journal(data_dir, durable) if data_dir is not None else None
        self.admin_secret = admin_secret
        self.snapshot_every = snapshot_every
        self.clock = clock
        self.audit: list = []
        self._store = store if store is not None else EntitlementStore()
        self._sequence = 0
        self._last_applied = 0
        self._since_snapshot = 0
        self._write_lock = threading.Lock()
        self._started = time.monotonic()
        self._ready = self.journal is None

    # -- lifecycle -----------------------------------------------------------

    @property
    def ready(self) -> bool:
        return self._ready

    @property
    def store(self) -> EntitlementStore:
        return self._store

    @property
    def sequence(self) -> int:
        return self._sequence

    def load(self) -> EntitlementStore:
        """Replay the data directory. Raises JournalCorrupt on a bad record."""
        with self._write_lock:
            if self.journal is not None:
                sequence, store, replayed = self.journal.replay()
                self._store = store
                self._last_applied = sequence
                self._sequence = max(sequence, self.journal.last_audit_sequence())
                self._since_snapshot = replayed
                log.info("replayed %d journal records, generation %d", replayed, store.generation)
            self._ready = True
            return self._store

    def snapshot(self) -> None:
        if self.journal is None:
            return
        with self._write_lock:
            self.journal.write_snapshot(self._last_applied, self._store)
            self._since_snapshot = 0

    def close(self) -> None:
        if self.journal is not None and self._ready:
            self.snapshot()

    # -- operations ----------------------------------------------------------

    def get_user_grants(self, user: str) -> dict:
        store = self._store
        return expand_macro_functions(store, user).to_doc()

    def authorize(self, request: Mapping) -> dict:
        user, action, geo, mode = _parse_authorize(request)
        store = self._store
        if mode == "LEGACY":
            decision = legacy_authorize(store, user, action, geo)
        else:
            decision = macro_authorize(store, user, action)
        return {**decision.to_doc(), "generation": store.generation}

    def health(self) -> dict:
        return {
            "status": "ok",
            "generation": self._store.generation,
            "uptimeSeconds": round(time.monotonic() - self._started, 3),
        }

    def apply_admin(self, command: Mapping) -> dict:
        """Validate, journal and apply one command.

        Returns ``{"outcome": "APPLIED", "generation", "sequence"}``; raises
        CommandRejected (after auditing it) when the command cannot apply.
        """
        if not isinstance(command, Mapping):
            raise MalformedRequest("command must be a JSON object")
        with self._write_lock:
            sequence = command.get("sequence")
            issued_at = command.get("issuedAt")
            if issued_at is None:
                issued_at = self.clock()
            kind = command.get("kind")
            try:
                if sequence is None:
                    sequence = self._sequence + 1
                elif not isinstance(sequence, int) or isinstance(sequence, bool) or sequence <= self._sequence:
                    bad, sequence = sequence, self._sequence + 1
                    raise CommandRejected(
                        "NON_INCREASING_SEQUENCE", f"sequence {bad!r} is not greater than {self._sequence}"
                    )
                if not isinstance(issued_at, int) or isinstance(issued_at, bool):
                    raise CommandRejected("MALFORMED_COMMAND", "issuedAt must be integer milliseconds")
                kind = parse_kind(kind).value
                store = apply_command(self._store, kind, command.get("payload"))
            except CommandRejected as exc:
                self._sequence = sequence
                self._audit(sequence, issued_at, kind, "REJECTED", f"{exc.constraint}: {exc.message}")
                raise
            if self.journal is not None:
                self.journal.append(
                    {
                        "sequence": sequence,
                        "issuedAt": issued_at,
                        "kind": kind,
                        "payload": command.get("payload"),
                        "generation": store.generation,
                    }
                )
            self._store = store
            self._sequence = sequence
            self._last_applied = sequence
            self._audit(sequence, issued_at, kind, "APPLIED", None)
            self._since_snapshot += 1
            if self.journal is not None and self._since_snapshot >= self.snapshot_every:
                self.journal.write_snapshot(sequence, store)
                self._since_snapshot = 0
            return {"outcome": "APPLIED", "generation": store.generation, "sequence": sequence}

    def _audit(self, sequence, issued_at, kind, outcome, reason) -> None:
        record = {
            "sequence": sequence,
            "issuedAt": issued_at,
            "kind": kind if isinstance(kind, str) else repr(kind),
            "outcome": outcome,
            "reason": reason,
        }
        self.audit.append(record)
        if self.journal is not None:
            self.journal.append_audit(record)

    # -- request dispatch ----------------------------------------------------

    def handle(self, method: str, path: str, headers: Optional[Mapping] = None, body: bytes = b"") -> Response:
        headers = {k.lower(): v for k, v in (headers or {}).items()}
        if not self._ready:
            return _error(503, "UNAVAILABLE", "store is loading")
        path = path.split("?", 1)[0].rstrip("/")
        parts = path.split("/")
        try:
            if path == "/v1/health":
                _expect(method, "GET")
                return Response(200, self.health())
            if len(parts) == 5 and parts[:3] == ["", "v1", "users"] and parts[4] == "grants":
                _expect(method, "GET")
                return self._grants_response(unquote(parts[3]), headers.get("x-known-generation"))
            if path == "/v1/authorize":
                _expect(method, "POST")
                return Response(200, self.authorize(_json_body(body)))
            if path.startswith("/v1/admin/"):
                _expect(method, "POST")
                self._check_admin(headers.get("authorization"))
                if path == "/v1/admin/commands":
                    command = _json_body(body)
                elif path == "/v1/admin/import":
                    command = {"kind": CommandKind.BULK_IMPORT.value, "payload": _json_body(body)}
                elif path == "/v1/admin/migrate":
                    command = {"kind": CommandKind.MIGRATE.value, "payload": {}}
                else:
                    return _error(404, "NOT_FOUND", f"no route for {path}")
                return Response(200, self.apply_admin(command))
            return _error(404, "NOT_FOUND", f"no route for {path}")
        except _MethodNotAllowed as exc:
            return _error(405, "METHOD_NOT_ALLOWED", str(exc))
        except UnknownUser as exc:
            return _error(404, exc.code, exc.message)
        except MalformedRequest as exc:
            return _error(400, exc.code, exc.message)
        except Unauthorized as exc:
            return _error(401, exc.code, exc.message)
        except CommandRejected as exc:
            return Response(409, {**exc.to_doc(), "generation": self._store.generation})
        except HabilisError as exc:  # pragma: no cover - defensive
            return _error(500, exc.code, exc.message)

    def _grants_response(self, user: str, known) -> Response:
        store = self._store
        if known is not None:
            try:
                known = int(known)
            except ValueError:
                raise MalformedRequest("X-Known-Generation must be an integer") from None
            if user not in store.users:
                raise UnknownUser(f"unknown user {user!r}")
            if known == store.generation:
                return Response(200, {"unchanged": True, "generation": known})
        return Response(200, expand_macro_functions(store, user).to_doc())

    def _check_admin(self, header) -> None:
        if not self.admin_secret:
            raise Unauthorized("admin endpoints are disabled: no admin secret configured")
        if not header or not header.startswith("Bearer "):
            raise Unauthorized("missing bearer token")
        if not hmac.compare_digest(header[len("Bearer "):].encode(), self.admin_secret.encode()):
            raise Unauthorized("wrong admin token")


class _MethodNotAllowed(Exception):
    pass


def _expect(method: str, allowed: str) -> None:
    if method.upper() != allowed:
        raise _MethodNotAllowed(f"{method} not allowed, use {allowed}")


def _json_body(body) -> dict:
    if isinstance(body, Mapping):
        return dict(body)
    try:
        doc = json.loads(body or b"")
    except (ValueError, UnicodeDecodeError):
        raise MalformedRequest("request body is not valid JSON") from None
    if not isinstance(doc, dict):
        raise MalformedRequest("request body must be a JSON object")
    return doc


def _parse_authorize(request: Mapping):
    if not isinstance(request, Mapping):
        raise MalformedRequest("authorize body must be an object")
    user, action, geo, mode = (request.get(k) for k in ("user", "action", "geo", "mode"))
    if not isinstance(user, str) or not user:
        raise MalformedRequest("user must be a non-empty string")
    if not isinstance(action, str) or not action:
        raise MalformedRequest("action must be a non-empty string")
    if geo is not None and not isinstance(geo, str):
        raise MalformedRequest("geo must be a string when present")
    if mode not in MODES:
        raise MalformedRequest(f"mode must be one of {', '.join(MODES)}")
    return user, action, geo, mode
