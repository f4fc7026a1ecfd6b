import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from habilis.errors import NotMigrated
from habilis.fixtures import random_resources, random_store
from habilis.migration import migrate_grants
from habilis.model import EntitlementStore
from habilis.sim import (
    ScheduledCommand,
    Topology,
    TopologyKind,
    Workload,
    compare_phases,
    load_sim_config,
    run_sim,
)
from habilis.sim import _run

from fleet import fleet_of

MONO, CENTRAL, REPLICAS = TopologyKind.MONOLITH_RBAC, TopologyKind.CENTRALIZED_HS, TopologyKind.DECENTRALIZED_REPLICAS


def counters(report, label=None):
    return report.topologies[label or next(iter(report.topologies))]


def test_monolith_one_call_per_request(migrated, resources):
    report = run_sim(migrated, resources, Topology(MONO), Workload(seed=3, request_count=1000))
    assert counters(report).network_calls == 1000


def test_centralized_one_call_per_distinct_user(resources):
    store = fleet_of(40)
    report = run_sim(store, resources, Topology(CENTRAL, cache_ttl=math.inf), Workload(seed=3, request_count=1000))
    c = counters(report)
    assert c.network_calls == 40
    assert c.cache_hits == 960


def test_centralized_finite_ttl_refetches(migrated, resources):
    workload = Workload(seed=1, request_count=500)
    finite = counters(run_sim(migrated, resources, Topology(CENTRAL, cache_ttl=50), workload))
    infinite = counters(run_sim(migrated, resources, Topology(CENTRAL), workload))
    assert finite.network_calls > infinite.network_calls == len(migrated.users)


def test_decentralized_refresh_calls(migrated, resources):
    topo = Topology(REPLICAS, service_count=3, replica_refresh_every=100)
    c = counters(run_sim(migrated, resources, topo, Workload(seed=1, request_count=1000)))
    assert c.network_calls == 10 * 3
    assert c.stale_decisions == 0


def revoke_alice(at):
    return ScheduledCommand(at, {"kind": "REVOKE", "payload": {"user": "alice", "macroFunction": "mf:gestionnaire"}})


def test_decentralized_replica_goes_stale(migrated, resources):
    workload = Workload(seed=2, request_count=1000, user_pool=["alice"], action_pool=["account:read"],
                        mutations=(revoke_alice(150),))
    c = counters(run_sim(migrated, resources, Topology(REPLICAS, replica_refresh_every=100), workload))
    # requests 150..199 are answered from the pre-revoke replica
    assert c.stale_decisions > 0
    assert c.stale_decisions <= 50


def test_centralized_with_infinite_ttl_also_goes_stale(migrated, resources):
    workload = Workload(seed=2, request_count=300, user_pool=["alice"], action_pool=["account:read"],
                        mutations=(revoke_alice(100),))
    stale = counters(run_sim(migrated, resources, Topology(CENTRAL), workload)).stale_decisions
    fresh = counters(run_sim(migrated, resources, Topology(MONO), workload)).stale_decisions
    assert stale > 0 and fresh == 0


def test_compare_phases_demo(migrated, resources):
    report = compare_phases(migrated, resources, Workload(seed=4, request_count=2000))
    assert report.mismatched_decisions == []
    p1, p2 = report.topologies["PHASE1"], report.topologies["PHASE2"]
    assert p1.network_calls == 2000 and p2.network_calls == len(migrated.users)
    assert (p1.allows, dict(p1.denies)) == (p2.allows, dict(p2.denies))


def test_compare_phases_reports_corrupted_macro(migrated, resources):
    doc = migrated.to_doc()
    for mf in doc["macroFunctions"]:
        if mf["id"] == "mf:gestionnaire":
            mf["functions"].remove("account:write")
    broken = EntitlementStore.from_doc(doc)
    report = compare_phases(broken, resources, Workload(seed=4, request_count=2000))
    assert report.mismatched_decisions
    # alice, dave, frank lose account:write; the ownership layer keeps only same-tenant resources
    for m in report.mismatched_decisions:
        assert m["user"] in {"alice", "dave", "frank"} and m["action"] == "account:write"
        assert m["phase1"]["allowed"] and not m["phase2"]["allowed"]
    pairs = {(m["user"], m["resource"]) for m in report.mismatched_decisions}
    for user, res in pairs:
        assert resources[res].owner_tenant == migrated.users[user].tenant


def test_empty_workload(migrated, resources):
    report = run_sim(migrated, resources, Topology(CENTRAL), Workload(seed=1, request_count=0))
    c = counters(report)
    assert report.request_count == 0 and c.network_calls == 0 and c.allows == 0
    assert report.to_doc()["crossTopology"]["mismatchCount"] == 0


def test_macro_topologies_require_migration(demo, resources):
    for kind in (CENTRAL, REPLICAS):
        with pytest.raises(NotMigrated):
            run_sim(demo, resources, Topology(kind), Workload(seed=1, request_count=10))
    run_sim(demo, resources, Topology(MONO), Workload(seed=1, request_count=10))


def test_determinism(migrated, resources):
    workload = Workload(seed=9, request_count=800, mutations=(revoke_alice(300),))
    a = compare_phases(migrated, resources, workload, service_count=3).to_json()
    b = compare_phases(migrated, resources, workload, service_count=3).to_json()
    assert a == b
    assert compare_phases(migrated, resources, Workload(seed=10, request_count=800)).to_json() != a


def test_latency_accounting(migrated, resources):
    c = counters(run_sim(migrated, resources, Topology(MONO, hop_cost=2.5), Workload(seed=1, request_count=40)))
    assert c.to_doc()["simulatedTotalLatency"] == 100.0


def test_text_table(migrated, resources):
    text = compare_phases(migrated, resources, Workload(seed=1, request_count=100)).to_text()
    lines = text.splitlines()
    assert lines[0].split()[:3] == ["topology", "services", "requests"]
    assert lines[2].startswith("PHASE1") and lines[3].startswith("PHASE2")
    assert lines[-1] == "mismatched decisions: 0"


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology(CENTRAL, service_count=0)
    with pytest.raises(ValueError):
        Topology(REPLICAS, replica_refresh_every=0)
    with pytest.raises(ValueError):
        Topology("MESH")
    assert Topology.from_doc({"kind": "CENTRALIZED_HS", "cacheTtl": 5}).cache_ttl == 5.0


def test_load_sim_config(tmp_path, demo_doc, resources):
    (tmp_path / "store.json").write_text(json.dumps(demo_doc))
    (tmp_path / "res.json").write_text(resources.to_json())
    (tmp_path / "sim.json").write_text(json.dumps({
        "topology": {"kind": "DECENTRALIZED_REPLICAS", "serviceCount": 2, "replicaRefreshEvery": 50},
        "workload": {"seed": 5, "requestCount": 20, "userPool": {"alice": 2, "bob-lecteur": 1},
                     "mutations": [{"at": 3, "command": {"kind": "MIGRATE"}}]},
        "fixtureRef": "store.json",
        "resourceRef": "res.json",
    }))
    cfg = load_sim_config(tmp_path / "sim.json")
    assert cfg.topology.service_count == 2 and cfg.topology.replica_refresh_every == 50
    assert cfg.workload.user_pool == {"alice": 2.0, "bob-lecteur": 1.0}
    assert cfg.workload.mutations[0].at == 3
    assert cfg.fixture == tmp_path / "store.json"
    reqs = cfg.workload.requests(migrated_of(demo_doc), resources)
    assert {r.user for r in reqs} <= {"alice", "bob-lecteur"}


def migrated_of(doc):
    return migrate_grants(EntitlementStore.from_doc(doc))


def test_requests_match_action_kind(migrated, resources):
    for r in Workload(seed=1, request_count=300).requests(migrated, resources):
        if r.resource is not None:
            assert resources[r.resource].kind == r.action.split(":")[0]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 200), st.integers(1, 4))
def test_conservation_and_phase_agreement(seed, n, services):
    store = migrate_grants(random_store(seed, max_users=12, max_roles=6, max_permissions=10, max_geo=8))
    registry = random_resources(store, seed, 15)
    report = compare_phases(store, registry, Workload(seed=seed, request_count=n), service_count=services)
    assert report.mismatched_decisions == []
    for c in report.topologies.values():
        assert c.allows + sum(c.denies.values()) == n
        assert c.stale_decisions == 0
    assert report.topologies["PHASE1"].network_calls == n
    assert report.topologies["PHASE2"].network_calls <= min(n, services * len(store.users))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 300))
def test_centralized_and_replicas_agree_without_mutations(seed, services, refresh):
    store = migrate_grants(random_store(seed, max_users=12, max_roles=6, max_permissions=10, max_geo=8))
    registry = random_resources(store, seed, 15)
    workload = Workload(seed=seed, request_count=300)
    requests = workload.requests(store, registry)
    central = _run(store, registry, Topology(CENTRAL, services), workload, requests)
    replicas = _run(store, registry, Topology(REPLICAS, services, replica_refresh_every=refresh), workload, requests)
    assert [d.allowed for d in central.decisions] == [d.allowed for d in replicas.decisions]
