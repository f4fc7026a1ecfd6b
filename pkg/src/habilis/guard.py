"""Data-access layer: tenant ownership on top of the action check."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .engine import GrantSet, geo_within, ms_authorize
from .errors import UnknownGeoEntity
from .model import Decision, EntitlementStore, Reason, User, resource_of


@dataclass(frozen=True)
class OwnedResource:
    id: str
    owner_tenant: str
    kind: str
    geo_tag: Optional[str] = None

    def to_doc(self) -> dict:
        doc = {"id": self.id, "ownerTenant": self.owner_tenant, "kind": self.kind}
        if self.geo_tag is not None:
            doc["geoTag"] = self.geo_tag
        return doc

    @classmethod
    def from_doc(cls, doc: Mapping) -> "OwnedResource":
        for key in ("id", "ownerTenant", "kind"):
            if not isinstance(doc.get(key), str) or not doc[key]:
                raise ValueError(f"resource field {key!r} must be a non-empty string")
        geo = doc.get("geoTag")
        if geo is not None and not isinstance(geo, str):
            raise ValueError("resource geoTag must be a string")
        return cls(doc["id"], doc["ownerTenant"], doc["kind"], geo)


class ResourceRegistry(dict):
    """OwnedResource values indexed by id, insertion-ordered."""

    @classmethod
    def of(cls, resources: Iterable[OwnedResource]) -> "ResourceRegistry":
        registry = cls()
        for r in resources:
            if r.id in registry:
                raise ValueError(f"duplicate resource id {r.id!r}")
            registry[r.id] = r
        return registry

    @classmethod
    def from_json(cls, text) -> "ResourceRegistry":
        docs = json.loads(text)
        if not isinstance(docs, list):
            raise ValueError("resource fixture must be a JSON array")
        return cls.of(OwnedResource.from_doc(d) for d in docs)

    def to_json(self) -> str:
        return json.dumps([r.to_doc() for r in self.values()], indent=2, ensure_ascii=False)

    def validate(self, store: EntitlementStore) -> list:
        return [
            f"resource {r.id} is owned by unknown tenant {r.owner_tenant}"
            for r in self.values()
            if r.owner_tenant not in store.tenants
        ]


def enforce_ownership(decision: Decision, user: User, action: str, resource: OwnedResource) -> Decision:
    """Second layer applied to an action-level decision.

    Shape first (resource kind must match the action), then the action-level
    verdict, then tenant equality. Shared by both migration phases.
    """
    if resource.kind != resource_of(action):
        return Decision.deny(Reason.DENY_UNKNOWN_ACTION, "layer:shape")
    if not decision.allowed:
        return Decision.deny(decision.reason, "layer:action")
    if resource.owner_tenant != user.tenant:
        return Decision.deny(Reason.DENY_CROSS_TENANT, "layer:tenant")
    return decision


def _within(store: EntitlementStore, tag: str, scope: str) -> bool:
    try:
        return geo_within(store, tag, scope)
    except UnknownGeoEntity:
        return False


def guard(
    user: User,
    action: str,
    resource: OwnedResource,
    grants: GrantSet,
    *,
    strict_geo: bool = False,
    store: Optional[EntitlementStore] = None,
) -> Decision:
    decision = enforce_ownership(ms_authorize(grants, action), user, action, resource)
    if (
        strict_geo
        and decision.allowed
        and user.preferred_geo is not None
        and resource.geo_tag is not None
    ):
        if store is None:
            raise ValueError("strict_geo needs the store for geographic containment")
        if not _within(store, resource.geo_tag, user.preferred_geo):
            return Decision.deny(Reason.DENY_OUT_OF_GEO_SCOPE, "layer:geo")
    return decision


def filter_visible(
    user: User,
    resources: Sequence[OwnedResource],
    grants: GrantSet,
    read_action: str,
    store: Optional[EntitlementStore] = None,
) -> list:
    """Resources the user may read, narrowed to their preferred geography.

    Untagged resources always pass the geographic filter.
    """
    visible = [r for r in resources if guard(user, read_action, r, grants).allowed]
    if user.preferred_geo is None:
        return visible
    if store is None:
        raise ValueError("filtering by preferred geography needs the store")
    return [r for r in visible if r.geo_tag is None or _within(store, r.geo_tag, user.preferred_geo)]
