"""Entitlement domain model.

The store is an immutable snapshot. Every change produces a new store value
with ``generation + 1``; nothing in here mutates in place, so a snapshot can be
shared freely between threads.

Both grant models live side by side in one store:

* legacy: user -> profiles -> (role, geographic scope) associations -> permissions
* macro-function: user -> macro-functions -> functions

Permissions and functions share one identifier space (``resource:verb``).
"""

from __future__ import annotations

import dataclasses
import enum
import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Any, Iterable, Mapping, NamedTuple, Optional

from .errors import MalformedStore

ACTION_RE = re.compile(r"^[a-z0-9][a-z0-9_.-]*:[a-z0-9][a-z0-9_.-]*$")

COLLECTIONS = (
    "tenants",
    "geoEntities",
    "permissions",
    "roles",
    "profiles",
    "functions",
    "macroFunctions",
    "users",
)


def is_action_id(value: object) -> bool:
    return isinstance(value, str) and ACTION_RE.match(value) is not None


def resource_of(action: str) -> str:
    """``"account:read"`` -> ``"account"``."""
    return action.partition(":")[0]


class Reason(str, enum.Enum):
    ALLOWED_BY_ROLE = "ALLOWED_BY_ROLE"
    ALLOWED_BY_MACRO_FUNCTION = "ALLOWED_BY_MACRO_FUNCTION"
    DENY_NO_GRANT = "DENY_NO_GRANT"
    DENY_UNKNOWN_USER = "DENY_UNKNOWN_USER"
    DENY_UNKNOWN_ACTION = "DENY_UNKNOWN_ACTION"
    DENY_OUT_OF_GEO_SCOPE = "DENY_OUT_OF_GEO_SCOPE"
    DENY_CROSS_TENANT = "DENY_CROSS_TENANT"
    DENY_UPSTREAM_UNREACHABLE = "DENY_UPSTREAM_UNREACHABLE"

    @property
    def allows(self) -> bool:
        return self.value.startswith("ALLOWED_")


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Reason
    trace: Optional[str] = None

    def __post_init__(self):
        if self.allowed != self.reason.allows:
            raise ValueError(f"inconsistent decision: allowed={self.allowed} with {self.reason.value}")

    @classmethod
    def allow(cls, reason: Reason, trace: Optional[str] = None) -> "Decision":
        return cls(True, reason, trace)

    @classmethod
    def deny(cls, reason: Reason, trace: Optional[str] = None) -> "Decision":
        return cls(False, reason, trace)

    def to_doc(self) -> dict:
        return {"allowed": self.allowed, "reason": self.reason.value, "trace": self.trace}

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "Decision":
        return cls(bool(doc["allowed"]), Reason(doc["reason"]), doc.get("trace"))


@dataclass(frozen=True)
class Tenant:
    id: str
    name: str


@dataclass(frozen=True)
class GeographicEntity:
    id: str
    parent: Optional[str] = None


@dataclass(frozen=True)
class Role:
    id: str
    name: str
    permissions: frozenset = frozenset()


class Association(NamedTuple):
    role: str
    scope: str


@dataclass(frozen=True)
class Profile:
    id: str
    name: str
    associations: frozenset = frozenset()  # of Association


@dataclass(frozen=True)
class MacroFunction:
    id: str
    name: str
    functions: frozenset = frozenset()


@dataclass(frozen=True)
class User:
    id: str
    tenant: str
    profiles: frozenset = frozenset()
    macro_functions: frozenset = frozenset()
    preferred_geo: Optional[str] = None


class Violation(NamedTuple):
    constraint: str
    message: str

    def __str__(self):
        return f"{self.constraint}: {self.message}"


def _frozen_map(items) -> Mapping:
    if isinstance(items, MappingProxyType):
        return items
    if not isinstance(items, Mapping):
        items = {item.id: item for item in items}
    return MappingProxyType(dict(items))


@dataclass(frozen=True)
class EntitlementStore:
    generation: int = 0
    tenants: Mapping[str, Tenant] = field(default_factory=dict)
    geo_entities: Mapping[str, GeographicEntity] = field(default_factory=dict)
    permissions: frozenset = frozenset()
    roles: Mapping[str, Role] = field(default_factory=dict)
    profiles: Mapping[str, Profile] = field(default_factory=dict)
    functions: frozenset = frozenset()
    macro_functions: Mapping[str, MacroFunction] = field(default_factory=dict)
    users: Mapping[str, User] = field(default_factory=dict)

    __hash__ = None  # type: ignore[assignment]

    def __post_init__(self):
        for name in ("tenants", "geo_entities", "roles", "profiles", "macro_functions", "users"):
            object.__setattr__(self, name, _frozen_map(getattr(self, name)))
        object.__setattr__(self, "permissions", frozenset(self.permissions))
        object.__setattr__(self, "functions", frozenset(self.functions))

    def replace(self, **changes) -> "EntitlementStore":
        return dataclasses.replace(self, **changes)

    def bump(self, **changes) -> "EntitlementStore":
        """New store with ``changes`` applied and the generation advanced by one."""
        return dataclasses.replace(self, generation=self.generation + 1, **changes)

    def with_entity(self, collection: str, entity) -> "EntitlementStore":
        """Insert or replace one entity; no generation change."""
        if collection in ("permissions", "functions"):
            return self.replace(**{collection: getattr(self, collection) | {entity}})
        updated = dict(getattr(self, collection))
        updated[entity.id] = entity
        return self.replace(**{collection: updated})

    @cached_property
    def geo_chains(self) -> Mapping[str, tuple]:
        """Each geo id mapped to its ancestor chain, itself first and root last."""
        chains: dict[str, tuple] = {}
        for gid in self.geo_entities:
            chain = [gid]
            seen = {gid}
            parent = self.geo_entities[gid].parent
            while parent is not None and parent in self.geo_entities and parent not in seen:
                chain.append(parent)
                seen.add(parent)
                parent = self.geo_entities[parent].parent
            chains[gid] = tuple(chain)
        return MappingProxyType(chains)

    @cached_property
    def actions(self) -> tuple:
        """Every known action identifier (permissions and functions), sorted."""
        return tuple(sorted(self.permissions | self.functions))

    # -- serialization -------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "generation": self.generation,
            "tenants": [{"id": t.id, "name": t.name} for t in _sorted(self.tenants)],
            "geoEntities": [
                {"id": g.id, "parent": g.parent} for g in _sorted(self.geo_entities)
            ],
            "permissions": [{"id": p} for p in sorted(self.permissions)],
            "roles": [
                {"id": r.id, "name": r.name, "permissions": sorted(r.permissions)}
                for r in _sorted(self.roles)
            ],
            "profiles": [
                {
                    "id": p.id,
                    "name": p.name,
                    "associations": [
                        {"role": a.role, "scope": a.scope} for a in sorted(p.associations)
                    ],
                }
                for p in _sorted(self.profiles)
            ],
            "functions": [{"id": f} for f in sorted(self.functions)],
            "macroFunctions": [
                {"id": m.id, "name": m.name, "functions": sorted(m.functions)}
                for m in _sorted(self.macro_functions)
            ],
            "users": [
                {
                    "id": u.id,
                    "tenant": u.tenant,
                    "profiles": sorted(u.profiles),
                    "macroFunctions": sorted(u.macro_functions),
                    "preferredGeo": u.preferred_geo,
                }
                for u in _sorted(self.users)
            ],
        }

    def canonical_bytes(self) -> bytes:
        # Python sorts str by code point, which coincides with UTF-8 byte order.
        return dumps_canonical(self.to_doc())

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "EntitlementStore":
        """Parse a store fixture document. Shape errors raise :class:`MalformedStore`.

        Referential integrity is *not* checked here; see :func:`validate`.
        """
        if not isinstance(doc, Mapping):
            raise MalformedStore("store document must be a JSON object")
        unknown = set(doc) - set(COLLECTIONS) - {"generation"}
        if unknown:
            raise MalformedStore(f"unknown top-level keys: {sorted(unknown)}")
        try:
            generation = doc.get("generation", 0)
            if not isinstance(generation, int) or isinstance(generation, bool) or generation < 0:
                raise MalformedStore("generation must be a non-negative integer")
            return cls(
                generation=generation,
                tenants=_unique(
                    Tenant(_id(t), _text(t.get("name", ""), "tenant name")) for t in _items(doc, "tenants")
                ),
                geo_entities=_unique(
                    GeographicEntity(_id(g), _opt_id(g.get("parent"))) for g in _items(doc, "geoEntities")
                ),
                permissions=_unique_ids(_id(p) for p in _items(doc, "permissions")),
                roles=_unique(
                    Role(_id(r), _text(r.get("name", r.get("id")), "role name"), _idset(r.get("permissions", [])))
                    for r in _items(doc, "roles")
                ),
                profiles=_unique(
                    Profile(
                        _id(p),
                        _text(p.get("name", p.get("id")), "profile name"),
                        _associations(p.get("associations", [])),
                    )
                    for p in _items(doc, "profiles")
                ),
                functions=_unique_ids(_id(f) for f in _items(doc, "functions")),
                macro_functions=_unique(
                    MacroFunction(
                        _id(m), _text(m.get("name", m.get("id")), "macro-function name"), _idset(m.get("functions", []))
                    )
                    for m in _items(doc, "macroFunctions")
                ),
                users=_unique(
                    User(
                        _id(u),
                        _id(u.get("tenant"), "user tenant"),
                        _idset(u.get("profiles", [])),
                        _idset(u.get("macroFunctions", [])),
                        _opt_id(u.get("preferredGeo")),
                    )
                    for u in _items(doc, "users")
                ),
            )
        except (AttributeError, TypeError) as exc:
            raise MalformedStore(f"malformed store document: {exc}") from exc

    @classmethod
    def from_json(cls, text) -> "EntitlementStore":
        try:
            doc = json.loads(text)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise MalformedStore(f"invalid JSON: {exc}") from exc
        return cls.from_doc(doc)


def dumps_canonical(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _sorted(mapping: Mapping) -> list:
    return [mapping[k] for k in sorted(mapping)]


def _items(doc: Mapping, key: str) -> list:
    value = doc.get(key, [])
    if not isinstance(value, list):
        raise MalformedStore(f"{key} must be a list")
    for item in value:
        if not isinstance(item, Mapping):
            raise MalformedStore(f"{key} entries must be objects")
    return value


def _id(value, what: str = "id") -> str:
    if isinstance(value, Mapping):
        value = value.get("id")
    if not isinstance(value, str) or not value:
        raise MalformedStore(f"{what} must be a non-empty string, got {value!r}")
    return value


def _opt_id(value) -> Optional[str]:
    return None if value is None else _id(value)


def _text(value, what: str) -> str:
    if not isinstance(value, str):
        raise MalformedStore(f"{what} must be a string")
    return value


def _idset(values) -> frozenset:
    if not isinstance(values, list):
        raise MalformedStore("expected a list of identifiers")
    ids = [_id(v) for v in values]
    if len(set(ids)) != len(ids):
        raise MalformedStore(f"duplicate identifiers in {sorted(ids)}")
    return frozenset(ids)


def _associations(values) -> frozenset:
    if not isinstance(values, list):
        raise MalformedStore("associations must be a list")
    pairs = [Association(_id(a["role"], "association role"), _id(a["scope"], "association scope")) for a in values]
    if len(set(pairs)) != len(pairs):
        raise MalformedStore("duplicate (role, scope) association")
    return frozenset(pairs)


def _unique(entities: Iterable) -> dict:
    out: dict = {}
    for entity in entities:
        if entity.id in out:
            raise MalformedStore(f"duplicate id {entity.id!r}")
        out[entity.id] = entity
    return out


def _unique_ids(ids: Iterable[str]) -> frozenset:
    seen: set = set()
    for i in ids:
        if i in seen:
            raise MalformedStore(f"duplicate id {i!r}")
        seen.add(i)
    return frozenset(seen)


def validate(store: EntitlementStore) -> list:
    """Return every integrity violation in ``store`` (empty list when consistent)."""
    out: list[Violation] = []
    add = lambda constraint, message: out.append(Violation(constraint, message))  # noqa: E731

    for t in _sorted(store.tenants):
        if not t.name:
            add("EMPTY_NAME", f"tenant {t.id} has an empty name")
    for g in _sorted(store.geo_entities):
        if g.parent is not None and g.parent not in store.geo_entities:
            add("UNRESOLVED_GEO_ENTITY", f"geo entity {g.id} has unknown parent {g.parent}")
    for gid in sorted(store.geo_entities):
        seen = {gid}
        parent = store.geo_entities[gid].parent
        while parent is not None and parent in store.geo_entities:
            if parent in seen:
                add("GEO_CYCLE", f"geo entity {gid} is part of a parent cycle")
                break
            seen.add(parent)
            parent = store.geo_entities[parent].parent
    for p in sorted(store.permissions):
        if not is_action_id(p):
            add("MALFORMED_ACTION_ID", f"permission {p!r} is not of the form resource:verb")
    for f in sorted(store.functions):
        if not is_action_id(f):
            add("MALFORMED_ACTION_ID", f"function {f!r} is not of the form resource:verb")
    for r in _sorted(store.roles):
        for p in sorted(r.permissions - store.permissions):
            add("UNRESOLVED_PERMISSION", f"role {r.id} references unknown permission {p}")
    for p in _sorted(store.profiles):
        for a in sorted(p.associations):
            if a.role not in store.roles:
                add("UNRESOLVED_ROLE", f"profile {p.id} references unknown role {a.role}")
            if a.scope not in store.geo_entities:
                add("UNRESOLVED_GEO_ENTITY", f"profile {p.id} references unknown geo entity {a.scope}")
    for m in _sorted(store.macro_functions):
        if not m.name:
            add("EMPTY_NAME", f"macro-function {m.id} has an empty name")
        for f in sorted(m.functions - store.functions):
            add("UNRESOLVED_FUNCTION", f"macro-function {m.id} references unknown function {f}")
    for u in _sorted(store.users):
        if u.tenant not in store.tenants:
            add("UNRESOLVED_TENANT", f"user {u.id} references unknown tenant {u.tenant}")
        for p in sorted(u.profiles):
            if p not in store.profiles:
                add("UNRESOLVED_PROFILE", f"user {u.id} references unknown profile {p}")
        for m in sorted(u.macro_functions):
            if m not in store.macro_functions:
                add("UNRESOLVED_MACRO_FUNCTION", f"user {u.id} references unknown macro-function {m}")
        if u.preferred_geo is not None and u.preferred_geo not in store.geo_entities:
            add("UNRESOLVED_GEO_ENTITY", f"user {u.id} prefers unknown geo entity {u.preferred_geo}")
    return out


def check_integrity(store: EntitlementStore) -> EntitlementStore:
    violations = validate(store)
    if violations:
        raise MalformedStore("; ".join(map(str, violations[:5])), violations)
    return store
