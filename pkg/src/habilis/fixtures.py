"""Demo fixture and seeded random store generators."""

from __future__ import annotations

import random

from .guard import OwnedResource, ResourceRegistry
from .model import Association, EntitlementStore, GeographicEntity, Profile, Role, Tenant, User

DEMO_DOC = {
    "tenants": [
        {"id": "acme", "name": "ACME"},
        {"id": "globex", "name": "GLOBEX"},
    ],
    "geoEntities": [
        {"id": "FR", "parent": None},
        {"id": "FR-IDF", "parent": "FR"},
        {"id": "Paris", "parent": "FR-IDF"},
        {"id": "FR-SUD", "parent": "FR"},
        {"id": "Marseille", "parent": "FR-SUD"},
        {"id": "BE", "parent": None},
        {"id": "Bruxelles", "parent": "BE"},
    ],
    "permissions": [
        {"id": "account:read"},
        {"id": "account:write"},
        {"id": "report:read"},
        {"id": "report:export"},
    ],
    "roles": [
        {"id": "gestionnaire", "name": "Gestionnaire", "permissions": ["account:read", "account:write"]},
        {"id": "lecteur", "name": "Lecteur", "permissions": ["account:read"]},
        {"id": "auditeur", "name": "Auditeur", "permissions": ["report:read"]},
    ],
    "profiles": [
        {"id": "p-gestionnaire-idf", "name": "Gestionnaire IDF",
         "associations": [{"role": "gestionnaire", "scope": "FR-IDF"}]},
        {"id": "p-lecteur-fr", "name": "Lecteur France",
         "associations": [{"role": "lecteur", "scope": "FR"}]},
        {"id": "p-lecteur-sud", "name": "Lecteur Sud",
         "associations": [{"role": "lecteur", "scope": "FR-SUD"}]},
        {"id": "p-auditeur-be", "name": "Auditeur Belgique",
         "associations": [{"role": "auditeur", "scope": "BE"}]},
        {"id": "p-lecteur-paris", "name": "Lecteur Paris",
         "associations": [{"role": "lecteur", "scope": "Paris"}, {"role": "auditeur", "scope": "FR-IDF"}]},
    ],
    "functions": [],
    "macroFunctions": [],
    "users": [
        {"id": "alice", "tenant": "acme", "profiles": ["p-gestionnaire-idf"]},
        {"id": "bob-lecteur", "tenant": "acme", "profiles": ["p-lecteur-fr"]},
        {"id": "carol", "tenant": "globex", "profiles": ["p-lecteur-sud"]},
        {"id": "dave", "tenant": "globex", "profiles": ["p-gestionnaire-idf", "p-auditeur-be"]},
        {"id": "erin", "tenant": "acme", "profiles": []},
        {"id": "frank", "tenant": "globex", "profiles": ["p-lecteur-paris", "p-gestionnaire-idf"]},
    ],
}

DEMO_RESOURCES = [
    {"id": "acme-account-paris", "ownerTenant": "acme", "kind": "account", "geoTag": "Paris"},
    {"id": "acme-account-marseille", "ownerTenant": "acme", "kind": "account", "geoTag": "Marseille"},
    {"id": "acme-account-hq", "ownerTenant": "acme", "kind": "account"},
    {"id": "globex-account-paris", "ownerTenant": "globex", "kind": "account", "geoTag": "Paris"},
    {"id": "globex-account-sud", "ownerTenant": "globex", "kind": "account", "geoTag": "FR-SUD"},
    {"id": "acme-report-be", "ownerTenant": "acme", "kind": "report", "geoTag": "Bruxelles"},
    {"id": "globex-report-q1", "ownerTenant": "globex", "kind": "report"},
]


def demo_store() -> EntitlementStore:
    return EntitlementStore.from_doc(DEMO_DOC)


def demo_resources() -> ResourceRegistry:
    return ResourceRegistry.of(OwnedResource.from_doc(d) for d in DEMO_RESOURCES)


def random_geo_forest(rng: random.Random, size: int, root_prob: float = 0.15) -> list:
    nodes = []
    for i in range(size):
        parent = None
        if i and rng.random() >= root_prob:
            parent = nodes[rng.randrange(i)].id
        nodes.append(GeographicEntity(f"geo-{i:02d}", parent))
    return nodes


def random_store(
    seed: int,
    *,
    max_users: int = 100,
    max_roles: int = 20,
    max_permissions: int = 30,
    max_geo: int = 15,
    max_tenants: int = 3,
) -> EntitlementStore:
    """A consistent legacy-only store drawn from ``seed``.

    Sizes are drawn from the upper half of each bound so instances stay dense.
    """
    rng = random.Random(seed)
    draw = lambda hi: rng.randint(max(1, hi // 2), hi)  # noqa: E731

    tenants = [Tenant(f"tenant-{i}", f"Tenant {i}") for i in range(draw(max_tenants))]
    geo = random_geo_forest(rng, draw(max_geo))
    permissions = [f"res{i % 6}:verb{i // 6}" for i in range(draw(max_permissions))]
    roles = [
        Role(f"role-{i:02d}", f"Role {i}", frozenset(rng.sample(permissions, rng.randint(0, min(6, len(permissions))))))
        for i in range(draw(max_roles))
    ]
    profiles = []
    for i in range(max(1, len(roles) * 3 // 2)):
        assocs = {
            Association(rng.choice(roles).id, rng.choice(geo).id)
            for _ in range(rng.randint(0, 3))
        }
        profiles.append(Profile(f"profile-{i:02d}", f"Profile {i}", frozenset(assocs)))
    users = [
        User(
            f"user-{i:03d}",
            rng.choice(tenants).id,
            frozenset(p.id for p in rng.sample(profiles, rng.randint(0, min(3, len(profiles))))),
        )
        for i in range(draw(max_users))
    ]
    return EntitlementStore(
        tenants=tenants,
        geo_entities=geo,
        permissions=permissions,
        roles=roles,
        profiles=profiles,
        users=users,
    )


def random_resources(store: EntitlementStore, seed: int, count: int = 50) -> ResourceRegistry:
    rng = random.Random(seed)
    kinds = sorted({a.partition(":")[0] for a in store.actions}) or ["account"]
    tenants = sorted(store.tenants) or ["tenant-0"]
    geo = sorted(store.geo_entities)
    out = []
    for i in range(count):
        tag = rng.choice(geo) if geo and rng.random() < 0.7 else None
        out.append(OwnedResource(f"res-{i:04d}", rng.choice(tenants), rng.choice(kinds), tag))
    return ResourceRegistry.of(out)
