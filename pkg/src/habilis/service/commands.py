"""Admin commands: pure ``store -> store`` transitions, validated whole."""

from __future__ import annotations

import dataclasses
import enum
from typing import Mapping

from ..errors import CommandRejected, MalformedStore
from ..migration import migrate_grants
from ..model import EntitlementStore, validate


class CommandKind(str, enum.Enum):
    UPSERT_TENANT = "UPSERT_TENANT"
    UPSERT_GEO = "UPSERT_GEO"
    UPSERT_PERMISSION = "UPSERT_PERMISSION"
    UPSERT_ROLE = "UPSERT_ROLE"
    UPSERT_PROFILE = "UPSERT_PROFILE"
    UPSERT_FUNCTION = "UPSERT_FUNCTION"
    UPSERT_MACRO_FUNCTION = "UPSERT_MACRO_FUNCTION"
    UPSERT_USER = "UPSERT_USER"
    GRANT = "GRANT"
    REVOKE = "REVOKE"
    BULK_IMPORT = "BULK_IMPORT"
    MIGRATE = "MIGRATE"


# kind -> (fixture collection key, store attribute)
_UPSERTS = {
    CommandKind.UPSERT_TENANT: ("tenants", "tenants"),
    CommandKind.UPSERT_GEO: ("geoEntities", "geo_entities"),
    CommandKind.UPSERT_PERMISSION: ("permissions", "permissions"),
    CommandKind.UPSERT_ROLE: ("roles", "roles"),
    CommandKind.UPSERT_PROFILE: ("profiles", "profiles"),
    CommandKind.UPSERT_FUNCTION: ("functions", "functions"),
    CommandKind.UPSERT_MACRO_FUNCTION: ("macroFunctions", "macro_functions"),
    CommandKind.UPSERT_USER: ("users", "users"),
}


def parse_kind(value) -> CommandKind:
    try:
        return CommandKind(value)
    except ValueError:
        raise CommandRejected("UNKNOWN_COMMAND_KIND", f"unknown command kind {value!r}") from None


def _parse_entity(collection: str, payload: Mapping):
    try:
        parsed = EntitlementStore.from_doc({collection: [payload]})
    except MalformedStore as exc:
        raise CommandRejected("MALFORMED_PAYLOAD", exc.message) from None
    if collection == "permissions":
        return next(iter(parsed.permissions))
    if collection == "functions":
        return next(iter(parsed.functions))
    attr = _UPSERTS_BY_COLLECTION[collection]
    return next(iter(getattr(parsed, attr).values()))


_UPSERTS_BY_COLLECTION = {coll: attr for coll, attr in _UPSERTS.values()}


def _grant(store: EntitlementStore, payload: Mapping, add: bool) -> EntitlementStore:
    uid = payload.get("user")
    user = store.users.get(uid) if isinstance(uid, str) else None
    if user is None:
        raise CommandRejected("UNRESOLVED_USER", f"unknown user {uid!r}")
    targets = [k for k in ("macroFunction", "profile") if k in payload]
    if len(targets) != 1 or not isinstance(payload[targets[0]], str):
        raise CommandRejected("MALFORMED_PAYLOAD", "grant payload needs exactly one of macroFunction, profile")
    key = targets[0]
    attr = "macro_functions" if key == "macroFunction" else "profiles"
    current = getattr(user, attr)
    value = payload[key]
    updated = current | {value} if add else current - {value}
    users = dict(store.users)
    users[uid] = dataclasses.replace(user, **{attr: updated})
    return store.replace(users=users)


def apply_command(store: EntitlementStore, kind, payload) -> EntitlementStore:
    """Apply one command, returning the next store (generation + 1).

    Raises :class:`CommandRejected` naming the violated constraint; the input
    store is never modified.
    """
    kind = parse_kind(kind)
    if payload is None:
        payload = {}
    if not isinstance(payload, Mapping):
        raise CommandRejected("MALFORMED_PAYLOAD", "payload must be an object")

    if kind in _UPSERTS:
        collection, attr = _UPSERTS[kind]
        candidate = store.with_entity(attr, _parse_entity(collection, payload))
    elif kind in (CommandKind.GRANT, CommandKind.REVOKE):
        candidate = _grant(store, payload, add=kind is CommandKind.GRANT)
    elif kind is CommandKind.BULK_IMPORT:
        try:
            candidate = EntitlementStore.from_doc(payload).replace(generation=store.generation)
        except MalformedStore as exc:
            raise CommandRejected("MALFORMED_PAYLOAD", exc.message) from None
    else:  # MIGRATE
        try:
            return migrate_grants(store)
        except MalformedStore as exc:
            raise CommandRejected(exc.violations[0].constraint if exc.violations else "MALFORMED_STORE", exc.message) from None

    violations = validate(candidate)
    if violations:
        first = violations[0]
        raise CommandRejected(first.constraint, "; ".join(map(str, violations[:5])))
    return candidate.bump()
