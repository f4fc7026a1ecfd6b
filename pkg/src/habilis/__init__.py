"""Centralized entitlement service with a legacy RBAC engine and migration tooling."""

from .client import AuthzClient, ClientConfig, FailPolicy, HttpTransport, InMemoryTransport, Mode
from .engine import GrantSet, expand_macro_functions, geo_within, legacy_authorize, macro_authorize, ms_authorize
from .errors import (
    CommandRejected,
    HabilisError,
    JournalCorrupt,
    MalformedRequest,
    MalformedStore,
    NotMigrated,
    UnknownGeoEntity,
    UnknownUser,
    UpstreamUnreachable,
)
from .guard import OwnedResource, ResourceRegistry, filter_visible, guard
from .migration import EquivalenceReport, decisions_equivalent, migrate_grants
from .model import (
    Association,
    Decision,
    EntitlementStore,
    GeographicEntity,
    MacroFunction,
    Profile,
    Reason,
    Role,
    Tenant,
    User,
    check_integrity,
    validate,
)

__version__ = "0.1.0"
