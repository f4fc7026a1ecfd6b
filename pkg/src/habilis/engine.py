"""Pure decision logic over an :class:`EntitlementStore` snapshot."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .errors import UnknownGeoEntity, UnknownUser
from .model import Decision, EntitlementStore, Reason


@dataclass(frozen=True)
class GrantSet:
    """A user's expanded function set, pinned to the store generation it came from."""

    user: str
    generation: int
    functions: frozenset
    macro_functions: Mapping[str, frozenset]

    __hash__ = None  # type: ignore[assignment]

    def to_doc(self) -> dict:
        return {
            "user": self.user,
            "generation": self.generation,
            "macroFunctions": [
                {"id": mid, "functions": sorted(self.macro_functions[mid])}
                for mid in sorted(self.macro_functions)
            ],
            "functions": sorted(self.functions),
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "GrantSet":
        macro = {m["id"]: frozenset(m["functions"]) for m in doc.get("macroFunctions", [])}
        return cls(
            user=doc.get("user", ""),
            generation=int(doc["generation"]),
            functions=frozenset(doc["functions"]),
            macro_functions=macro,
        )


def geo_within(store: EntitlementStore, candidate: str, scope: str) -> bool:
    """True when ``scope`` is ``candidate`` or one of its ancestors."""
    chains = store.geo_chains
    for gid in (candidate, scope):
        if gid not in chains:
            raise UnknownGeoEntity(f"unknown geographic entity {gid!r}", id=gid)
    return scope in chains[candidate]


def legacy_authorize(
    store: EntitlementStore, user: str, action: str, geo: Optional[str] = None
) -> Decision:
    """Profile/role decision with optional geographic scoping.

    Deny by default. An unknown ``geo`` lies inside no scope, so it only ever
    narrows the answer.
    """
    u = store.users.get(user)
    if u is None:
        return Decision.deny(Reason.DENY_UNKNOWN_USER)
    if action not in store.permissions:
        return Decision.deny(Reason.DENY_UNKNOWN_ACTION)

    chain = store.geo_chains.get(geo, ()) if geo is not None else None
    out_of_scope = None
    for pid in sorted(u.profiles):
        profile = store.profiles.get(pid)
        if profile is None:
            continue
        for assoc in sorted(profile.associations):
            role = store.roles.get(assoc.role)
            if role is None or action not in role.permissions:
                continue
            trace = f"{pid}/{assoc.role}"
            if chain is None or assoc.scope in chain:
                return Decision.allow(Reason.ALLOWED_BY_ROLE, trace)
            if out_of_scope is None:
                out_of_scope = trace
    if out_of_scope is not None:
        return Decision.deny(Reason.DENY_OUT_OF_GEO_SCOPE, out_of_scope)
    return Decision.deny(Reason.DENY_NO_GRANT)


def expand_macro_functions(store: EntitlementStore, user: str) -> GrantSet:
    u = store.users.get(user)
    if u is None:
        raise UnknownUser(f"unknown user {user!r}", id=user)
    granted = {
        mid: store.macro_functions[mid].functions
        for mid in u.macro_functions
        if mid in store.macro_functions
    }
    functions = frozenset().union(*granted.values())
    return GrantSet(user, store.generation, functions, granted)


def ms_authorize(grants: GrantSet, action: str) -> Decision:
    """Membership of ``action`` in the retrieved function set."""
    if action not in grants.functions:
        return Decision.deny(Reason.DENY_NO_GRANT)
    trace = next(
        (mid for mid in sorted(grants.macro_functions) if action in grants.macro_functions[mid]),
        None,
    )
    return Decision.allow(Reason.ALLOWED_BY_MACRO_FUNCTION, trace)


def macro_authorize(store: EntitlementStore, user: str, action: str) -> Decision:
    """``expand_macro_functions`` + ``ms_authorize``, unknown users denied."""
    try:
        grants = expand_macro_functions(store, user)
    except UnknownUser:
        return Decision.deny(Reason.DENY_UNKNOWN_USER)
    return ms_authorize(grants, action)
