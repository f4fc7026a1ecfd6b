"""Legacy-to-macro-function migration compiler and the equivalence check."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from .engine import legacy_authorize, macro_authorize
from .errors import NotMigrated
from .model import Decision, EntitlementStore, MacroFunction, check_integrity

MACRO_PREFIX = "mf:"


def macro_function_id(role_id: str) -> str:
    return MACRO_PREFIX + role_id


def reachable_roles(store: EntitlementStore, user_id: str) -> set:
    user = store.users[user_id]
    return {
        assoc.role
        for pid in user.profiles
        if pid in store.profiles
        for assoc in store.profiles[pid].associations
    }


def lowest_common_ancestor(store: EntitlementStore, scopes) -> Optional[str]:
    """Deepest geo entity that is an ancestor-or-self of every scope; None across trees."""
    scopes = sorted(set(scopes))
    if not scopes:
        return None
    chains = [store.geo_chains[s] for s in scopes]
    common = set(chains[0]).intersection(*chains[1:])
    # chain runs self -> root, so the first common element is the deepest
    return next((g for g in chains[0] if g in common), None)


def migrate_grants(store: EntitlementStore) -> EntitlementStore:
    """Compile legacy grants into macro-functions.

    Each role ``r`` becomes macro-function ``mf:r`` carrying the role's
    permissions as functions. Legacy collections are kept so both engines can
    run against the result.
    """
    check_integrity(store)
    macro = dict(store.macro_functions)
    for role in store.roles.values():
        mid = macro_function_id(role.id)
        macro[mid] = MacroFunction(mid, role.name or role.id, role.permissions)

    users = {}
    for uid, user in store.users.items():
        scopes = {
            assoc.scope
            for pid in user.profiles
            for assoc in store.profiles[pid].associations
        }
        users[uid] = dataclasses.replace(
            user,
            macro_functions=frozenset(macro_function_id(r) for r in reachable_roles(store, uid)),
            preferred_geo=lowest_common_ancestor(store, scopes),
        )
    return store.bump(
        functions=store.functions | store.permissions,
        macro_functions=macro,
        users=users,
    )


def require_migrated(store: EntitlementStore) -> None:
    for uid in sorted(store.users):
        for role in sorted(reachable_roles(store, uid)):
            if macro_function_id(role) not in store.macro_functions:
                raise NotMigrated(
                    f"user {uid} holds role {role} but {macro_function_id(role)} is absent",
                    user=uid,
                    role=role,
                )


@dataclass(frozen=True)
class Mismatch:
    user: str
    action: str
    legacy: Decision
    macro: Decision

    def to_doc(self) -> dict:
        return {
            "user": self.user,
            "action": self.action,
            "legacy": self.legacy.to_doc(),
            "macro": self.macro.to_doc(),
        }


@dataclass
class EquivalenceReport:
    generation: int
    pairs: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def equivalent(self) -> bool:
        return not self.mismatches

    def to_doc(self) -> dict:
        return {
            "generation": self.generation,
            "pairs": self.pairs,
            "equivalent": self.equivalent,
            "mismatches": [m.to_doc() for m in self.mismatches],
        }


def decisions_equivalent(store: EntitlementStore) -> EquivalenceReport:
    """Compare both engines on every (user, action) pair, geo absent."""
    require_migrated(store)
    report = EquivalenceReport(store.generation)
    for uid in sorted(store.users):
        for action in store.actions:
            legacy = legacy_authorize(store, uid, action)
            macro = macro_authorize(store, uid, action)
            report.pairs += 1
            if legacy.allowed != macro.allowed:
                report.mismatches.append(Mismatch(uid, action, legacy, macro))
    return report
