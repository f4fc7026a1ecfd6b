"""Deterministic fleet simulation.

A seeded request stream is replayed through ``serviceCount`` simulated
microservices, interleaved round-robin on one logical clock. Each service
runs the real :class:`AuthzClient` over an :class:`InMemoryTransport` to a
:class:`HabilitationService`, then the data-access layer. Latency is modelled
as ``networkCalls * hopCost``; nothing is timed on the host.
"""

from __future__ import annotations

import enum
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .client import AuthzClient, ClientConfig, InMemoryTransport, Mode
from .engine import legacy_authorize, macro_authorize
from .guard import ResourceRegistry, enforce_ownership
from .migration import require_migrated
from .model import Decision, EntitlementStore, resource_of
from .service import HabilitationService


class TopologyKind(str, enum.Enum):
    MONOLITH_RBAC = "MONOLITH_RBAC"
    CENTRALIZED_HS = "CENTRALIZED_HS"
    DECENTRALIZED_REPLICAS = "DECENTRALIZED_REPLICAS"


@dataclass(frozen=True)
class Topology:
    kind: TopologyKind
    service_count: int = 1
    replica_refresh_every: int = 100
    hop_cost: float = 1.0
    cache_ttl: float = math.inf  # client TTL (ms) for CENTRALIZED_HS

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.service_count < 1:
            raise ValueError("service_count must be >= 1")
        if self.replica_refresh_every < 1:
            raise ValueError("replica_refresh_every must be >= 1")
        if self.hop_cost < 0 or self.cache_ttl < 0:
            raise ValueError("hop_cost and cache_ttl must be >= 0")

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Topology":
        ttl = doc.get("cacheTtl")
        return cls(
            kind=doc["kind"],
            service_count=int(doc.get("serviceCount", 1)),
            replica_refresh_every=int(doc.get("replicaRefreshEvery", 100)),
            hop_cost=float(doc.get("hopCost", 1.0)),
            cache_ttl=math.inf if ttl is None else float(ttl),
        )


@dataclass(frozen=True)
class ScheduledCommand:
    """An admin command applied to the service just before request ``at``."""

    at: int
    command: Mapping


@dataclass(frozen=True)
class Request:
    index: int
    user: str
    action: str
    resource: Optional[str]

    def to_doc(self) -> dict:
        return {"index": self.index, "user": self.user, "action": self.action, "resource": self.resource}


@dataclass(frozen=True)
class Workload:
    seed: int
    request_count: int
    user_pool: Optional[Mapping[str, float]] = None
    action_pool: Optional[Mapping[str, float]] = None
    resource_pool: Optional[Mapping[str, float]] = None
    mutations: Sequence[ScheduledCommand] = ()
    tick_ms: float = 1.0

    __hash__ = None  # type: ignore[assignment]

    def __post_init__(self):
        # pools may be given as a list (uniform) or a weight mapping
        for name in ("user_pool", "action_pool", "resource_pool"):
            object.__setattr__(self, name, _pool_doc(getattr(self, name)))
        if self.request_count < 0:
            raise ValueError("request_count must be >= 0")

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Workload":
        return cls(
            seed=int(doc.get("seed", 0)),
            request_count=int(doc.get("requestCount", 1000)),
            user_pool=doc.get("userPool"),
            action_pool=doc.get("actionPool"),
            resource_pool=doc.get("resourcePool"),
            mutations=tuple(ScheduledCommand(int(m["at"]), m["command"]) for m in doc.get("mutations", [])),
            tick_ms=float(doc.get("tickMs", 1.0)),
        )

    def requests(self, store: EntitlementStore, registry: ResourceRegistry) -> list:
        """The request stream; a pure function of the seed and the inputs."""
        rng = random.Random(self.seed)
        users, user_w = _pool(self.user_pool, store.users)
        actions, action_w = _pool(self.action_pool, store.actions)
        resources = [registry[r] for r in sorted(self.resource_pool or registry) if r in registry]
        weights = self.resource_pool or {}
        by_kind: dict = {}
        for r in resources:
            by_kind.setdefault(r.kind, []).append(r)
        out = []
        if not users or not actions:
            return out
        for i in range(self.request_count):
            user = rng.choices(users, user_w)[0]
            action = rng.choices(actions, action_w)[0]
            candidates = by_kind.get(resource_of(action), [])
            resource = None
            if candidates:
                resource = rng.choices(candidates, [weights.get(c.id, 1.0) for c in candidates])[0].id
            out.append(Request(i, user, action, resource))
        return out


def _pool_doc(value) -> Optional[dict]:
    if value is None:
        return None
    if isinstance(value, list):
        return {v: 1.0 for v in value}
    return {str(k): float(w) for k, w in value.items()}


def _pool(weights: Optional[Mapping[str, float]], universe) -> tuple:
    if weights:
        keys = sorted(weights)
        return keys, [weights[k] for k in keys]
    keys = sorted(universe)
    return keys, [1.0] * len(keys)


@dataclass
class TopologyCounters:
    kind: str
    service_count: int
    network_calls: int = 0
    cache_hits: int = 0
    allows: int = 0
    denies: Counter = field(default_factory=Counter)
    stale_decisions: int = 0
    hop_cost: float = 1.0

    @property
    def simulated_total_latency(self) -> float:
        return self.network_calls * self.hop_cost

    def record(self, decision: Decision) -> None:
        if decision.allowed:
            self.allows += 1
        else:
            self.denies[decision.reason.value] += 1

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "serviceCount": self.service_count,
            "networkCalls": self.network_calls,
            "cacheHits": self.cache_hits,
            "allows": self.allows,
            "denies": dict(sorted(self.denies.items())),
            "deniesTotal": sum(self.denies.values()),
            "staleDecisions": self.stale_decisions,
            "hopCost": self.hop_cost,
            "simulatedTotalLatency": self.simulated_total_latency,
        }


@dataclass
class SimReport:
    request_count: int
    seed: int
    topologies: dict = field(default_factory=dict)  # label -> TopologyCounters
    mismatched_decisions: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "requestCount": self.request_count,
            "seed": self.seed,
            "topologies": {k: v.to_doc() for k, v in sorted(self.topologies.items())},
            "crossTopology": {
                "mismatchCount": len(self.mismatched_decisions),
                "mismatchedDecisions": self.mismatched_decisions,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    def to_text(self) -> str:
        columns = ["topology", "services", "requests", "netCalls", "cacheHits", "allows", "denies", "stale", "latencyMs"]
        rows = [
            [
                label,
                str(c.service_count),
                str(self.request_count),
                str(c.network_calls),
                str(c.cache_hits),
                str(c.allows),
                str(sum(c.denies.values())),
                str(c.stale_decisions),
                f"{c.simulated_total_latency:g}",
            ]
            for label, c in sorted(self.topologies.items())
        ]
        widths = [max(len(col), *(len(r[i]) for r in rows)) if rows else len(col) for i, col in enumerate(columns)]
        fmt = lambda cells: "  ".join(  # noqa: E731
            cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(cells, widths))
        )
        lines = [fmt(columns), fmt(["-" * w for w in widths])]
        lines += [fmt(r) for r in rows]
        lines.append(f"mismatched decisions: {len(self.mismatched_decisions)}")
        return "\n".join(lines) + "\n"


@dataclass
class _Run:
    counters: TopologyCounters
    decisions: list


def _ownership(decision, store: EntitlementStore, request: Request, registry: ResourceRegistry) -> Decision:
    user = store.users.get(request.user)
    if request.resource is None or user is None:
        return decision
    return enforce_ownership(decision, user, request.action, registry[request.resource])


def _run(
    store: EntitlementStore,
    registry: ResourceRegistry,
    topology: Topology,
    workload: Workload,
    requests: list,
) -> _Run:
    kind = topology.kind
    if kind is not TopologyKind.MONOLITH_RBAC:
        require_migrated(store)
    hs = HabilitationService(store=store)
    now = [0.0]
    clock = lambda: now[0]  # noqa: E731
    counters = TopologyCounters(kind.value, topology.service_count, hop_cost=topology.hop_cost)
    mutations: dict = {}
    for m in workload.mutations:
        mutations.setdefault(m.at, []).append(m.command)

    clients, transports, replicas = [], [], []
    if kind is TopologyKind.DECENTRALIZED_REPLICAS:
        replicas = [None] * topology.service_count
    else:
        mode = Mode.PHASE1 if kind is TopologyKind.MONOLITH_RBAC else Mode.PHASE2
        for _ in range(topology.service_count):
            transport = InMemoryTransport(hs)
            transports.append(transport)
            clients.append(AuthzClient(ClientConfig(mode=mode, cache_ttl=topology.cache_ttl), transport, clock))

    decisions = []
    for req in requests:
        now[0] = req.index * workload.tick_ms
        for command in mutations.get(req.index, ()):
            hs.apply_admin(dict(command))
        current = hs.store
        svc = req.index % topology.service_count

        if kind is TopologyKind.DECENTRALIZED_REPLICAS:
            if req.index % topology.replica_refresh_every == 0:
                # every service pulls a full replica: one call each
                replicas = [current] * topology.service_count
                counters.network_calls += topology.service_count
            replica = replicas[svc]
            counters.cache_hits += 1
            decision = _ownership(macro_authorize(replica, req.user, req.action), replica, req, registry)
        else:
            decision = _ownership(clients[svc].check(req.user, req.action), current, req, registry)

        if kind is TopologyKind.MONOLITH_RBAC:
            truth = legacy_authorize(current, req.user, req.action)
        else:
            truth = macro_authorize(current, req.user, req.action)
        truth = _ownership(truth, current, req, registry)
        if truth.allowed != decision.allowed:
            counters.stale_decisions += 1
        counters.record(decision)
        decisions.append(decision)

    counters.network_calls += sum(t.calls for t in transports)
    counters.cache_hits += sum(c.stats.cache_hits for c in clients)
    return _Run(counters, decisions)


def run_sim(
    store: EntitlementStore,
    registry: ResourceRegistry,
    topology: Topology,
    workload: Workload,
) -> SimReport:
    requests = workload.requests(store, registry)
    run = _run(store, registry, topology, workload, requests)
    return SimReport(len(requests), workload.seed, {topology.kind.value: run.counters})


def compare_phases(
    store: EntitlementStore,
    registry: ResourceRegistry,
    workload: Workload,
    *,
    service_count: int = 1,
    cache_ttl: float = math.inf,
    hop_cost: float = 1.0,
) -> SimReport:
    """Same stream under phase 1 (remote legacy boolean) and phase 2 (macro set)."""
    require_migrated(store)
    requests = workload.requests(store, registry)
    phase1 = _run(store, registry, Topology(TopologyKind.MONOLITH_RBAC, service_count, hop_cost=hop_cost), workload, requests)
    phase2 = _run(
        store,
        registry,
        Topology(TopologyKind.CENTRALIZED_HS, service_count, hop_cost=hop_cost, cache_ttl=cache_ttl),
        workload,
        requests,
    )
    report = SimReport(len(requests), workload.seed, {"PHASE1": phase1.counters, "PHASE2": phase2.counters})
    for req, d1, d2 in zip(requests, phase1.decisions, phase2.decisions):
        if d1.allowed != d2.allowed:
            report.mismatched_decisions.append({**req.to_doc(), "phase1": d1.to_doc(), "phase2": d2.to_doc()})
    return report


@dataclass(frozen=True)
class SimConfig:
    topology: Topology
    workload: Workload
    fixture: Optional[Path]
    resources: Optional[Path]


def load_sim_config(path) -> SimConfig:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    ref = lambda key: (base / doc[key]) if doc.get(key) else None  # noqa: E731
    return SimConfig(
        topology=Topology.from_doc(doc.get("topology", {"kind": "CENTRALIZED_HS"})),
        workload=Workload.from_doc(doc.get("workload", {})),
        fixture=ref("fixtureRef"),
        resources=ref("resourceRef"),
    )


def load_resources(path) -> ResourceRegistry:
    return ResourceRegistry.from_json(Path(path).read_text(encoding="utf-8"))


__all__ = [
    "Request",
    "ScheduledCommand",
    "SimConfig",
    "SimReport",
    "Topology",
    "TopologyKind",
    "Workload",
    "compare_phases",
    "load_sim_config",
    "run_sim",
]
