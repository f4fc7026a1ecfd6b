"""Authorization client embedded in each microservice.

PHASE1 forwards every check to the service's legacy engine and passes the
boolean through. PHASE2 fetches the user's grant set once per TTL window and
answers by local membership.
"""

from __future__ import annotations

import enum
import json
import math
import threading
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Tuple
from urllib.parse import quote

from .engine import GrantSet, ms_authorize
from .errors import UpstreamUnreachable
from .model import Decision, Reason

STALE = "STALE"


class Mode(str, enum.Enum):
    PHASE1 = "PHASE1"
    PHASE2 = "PHASE2"


class FailPolicy(str, enum.Enum):
    FAIL_CLOSED = "FAIL_CLOSED"
    FAIL_OPEN = "FAIL_OPEN"


@dataclass(frozen=True)
class ClientConfig:
    mode: Mode = Mode.PHASE2
    endpoint: str = "inmemory://hs"
    cache_ttl: float = 30_000  # ms; math.inf never expires
    fail_policy: FailPolicy = FailPolicy.FAIL_CLOSED

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "fail_policy", FailPolicy(self.fail_policy))
        if not self.cache_ttl >= 0:
            raise ValueError("cache_ttl must be >= 0")
        if not self.endpoint:
            raise ValueError("endpoint must be non-empty")


@dataclass
class CachedGrants:
    user: str
    grants: GrantSet
    fetched_at: float

    @property
    def generation(self) -> int:
        return self.grants.generation


class Transport(Protocol):
    calls: int

    def send(self, method: str, path: str, body=None, headers: Optional[dict] = None) -> Tuple[int, dict]:
        ...


class InMemoryTransport:
    """Calls ``service.handle`` directly with the same JSON documents as HTTP."""

    def __init__(self, service):
        self.service = service
        self.available = True
        self.calls = 0
        self.failures = 0
        self.bytes_received = 0

    def send(self, method, path, body=None, headers=None):
        self.calls += 1
        if not self.available:
            self.failures += 1
            raise UpstreamUnreachable("in-memory upstream marked unavailable")
        raw = b"" if body is None else json.dumps(body).encode("utf-8")
        response = self.service.handle(method, path, headers or {}, raw)
        payload = json.dumps(response.body).encode("utf-8")
        self.bytes_received += len(payload)
        return response.status, json.loads(payload)


class HttpTransport:
    def __init__(self, base_url: str, timeout: float = 5.0, headers: Optional[dict] = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.headers = dict(headers or {})
        self.calls = 0
        self.failures = 0
        self.bytes_received = 0

    def send(self, method, path, body=None, headers=None):
        self.calls += 1
        data = None if body is None else json.dumps(body).encode("utf-8")
        request = urllib.request.Request(
            self.base_url + path,
            data=data,
            method=method,
            headers={"Content-Type": "application/json", **self.headers, **(headers or {})},
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                status, payload = resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            status, payload = exc.code, exc.read()
        except (urllib.error.URLError, OSError) as exc:
            self.failures += 1
            raise UpstreamUnreachable(f"{self.base_url}: {exc}") from None
        self.bytes_received += len(payload)
        try:
            return status, json.loads(payload or b"{}")
        except ValueError:
            self.failures += 1
            raise UpstreamUnreachable(f"{self.base_url}: non-JSON response (status {status})") from None


@dataclass
class ClientStats:
    checks: int = 0
    network_calls: int = 0
    grant_fetches: int = 0
    full_transfers: int = 0
    revalidations: int = 0
    cache_hits: int = 0
    stale_served: int = 0
    allows: int = 0
    denies: Counter = field(default_factory=Counter)

    def to_doc(self) -> dict:
        return {
            "checks": self.checks,
            "networkCalls": self.network_calls,
            "grantFetches": self.grant_fetches,
            "fullTransfers": self.full_transfers,
            "revalidations": self.revalidations,
            "cacheHits": self.cache_hits,
            "staleServed": self.stale_served,
            "allows": self.allows,
            "denies": dict(sorted(self.denies.items())),
        }


class _UnknownUser(Exception):
    pass


def monotonic_ms() -> float:
    return time.monotonic() * 1000


class AuthzClient:
    def __init__(
        self,
        config: ClientConfig,
        transport: Transport,
        clock: Callable[[], float] = monotonic_ms,
    ):
        self.config = config
        self.transport = transport
        self.clock = clock
        self.stats = ClientStats()
        self._cache: dict[str, CachedGrants] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    # -- public API ----------------------------------------------------------

    def check(self, user: str, action: str, geo: Optional[str] = None) -> Decision:
        if self.config.mode is Mode.PHASE1:
            decision = self._check_remote(user, action, geo)
        else:
            decision = self._check_local(user, action)
        with self._guard:
            self.stats.checks += 1
            if decision.allowed:
                self.stats.allows += 1
            else:
                self.stats.denies[decision.reason.value] += 1
        return decision

    def invalidate(self, user: str) -> None:
        with self._guard:
            self._cache.pop(user, None)

    def revalidate(self, user: str) -> bool:
        """Conditional refetch. Returns True when the grant set changed.

        Raises LookupError without a cache entry and UpstreamUnreachable when
        the service cannot be reached (the entry is then left untouched).
        """
        entry = self._cache.get(user)
        if entry is None:
            raise LookupError(f"no cached grants for {user!r}")
        with self._user_lock(user):
            status, doc = self._send(
                "GET", _grants_path(user), headers={"X-Known-Generation": str(entry.generation)}
            )
            with self._guard:
                self.stats.revalidations += 1
            if status == 404:
                self.invalidate(user)
                return True
            if doc.get("unchanged"):
                entry.fetched_at = self.clock()
                return False
            grants = GrantSet.from_doc(doc)
            with self._guard:
                self.stats.full_transfers += 1
                self._cache[user] = CachedGrants(user, grants, self.clock())
            return (grants.functions, grants.macro_functions) != (entry.grants.functions, entry.grants.macro_functions)

    def cached(self, user: str) -> Optional[CachedGrants]:
        return self._cache.get(user)

    # -- internals -----------------------------------------------------------

    def _send(self, method, path, headers=None, body=None):
        with self._guard:
            self.stats.network_calls += 1
        return self.transport.send(method, path, body, headers)

    def _check_remote(self, user, action, geo) -> Decision:
        body = {"user": user, "action": action, "mode": "LEGACY"}
        if geo is not None:
            body["geo"] = geo
        try:
            status, doc = self._send("POST", "/v1/authorize", body=body)
        except UpstreamUnreachable:
            return Decision.deny(Reason.DENY_UPSTREAM_UNREACHABLE)
        if status != 200:
            return Decision.deny(Reason.DENY_UPSTREAM_UNREACHABLE, f"status:{status}:{doc.get('code')}")
        return Decision.from_doc(doc)

    def _fresh(self, entry: Optional[CachedGrants]) -> bool:
        if entry is None:
            return False
        ttl = self.config.cache_ttl
        return math.isinf(ttl) or self.clock() - entry.fetched_at <= ttl

    def _user_lock(self, user: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(user, threading.Lock())

    def _check_local(self, user, action) -> Decision:
        entry = self._cache.get(user)
        if self._fresh(entry):
            with self._guard:
                self.stats.cache_hits += 1
            return ms_authorize(entry.grants, action)
        # one in-flight fetch per user; concurrent misses wait and reuse it
        with self._user_lock(user):
            entry = self._cache.get(user)
            if self._fresh(entry):
                with self._guard:
                    self.stats.cache_hits += 1
                return ms_authorize(entry.grants, action)
            try:
                entry = self._fetch(user)
            except _UnknownUser:
                return Decision.deny(Reason.DENY_UNKNOWN_USER)
            except UpstreamUnreachable:
                return self._on_unreachable(user, action)
        return ms_authorize(entry.grants, action)

    def _fetch(self, user: str) -> CachedGrants:
        status, doc = self._send("GET", _grants_path(user))
        if status == 404 and doc.get("code") == "UNKNOWN_USER":
            self.invalidate(user)
            raise _UnknownUser(user)
        if status != 200 or "functions" not in doc:
            raise UpstreamUnreachable(f"grant fetch failed with status {status}")
        entry = CachedGrants(user, GrantSet.from_doc(doc), self.clock())
        with self._guard:
            self.stats.grant_fetches += 1
            self.stats.full_transfers += 1
            self._cache[user] = entry
        return entry

    def _on_unreachable(self, user, action) -> Decision:
        entry = self._cache.get(user)
        if self.config.fail_policy is FailPolicy.FAIL_OPEN and entry is not None:
            decision = ms_authorize(entry.grants, action)
            with self._guard:
                self.stats.stale_served += 1
            return Decision(decision.allowed, decision.reason, STALE)
        return Decision.deny(Reason.DENY_UPSTREAM_UNREACHABLE)


def _grants_path(user: str) -> str:
    return f"/v1/users/{quote(user, safe='')}/grants"
