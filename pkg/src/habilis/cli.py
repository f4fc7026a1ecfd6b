"""``habilis`` command line.

Exit codes: 0 allow/success, 1 deny/mismatch, 2 usage or input error,
3 data corruption, 4 upstream unreachable. JSON goes to stdout, diagnostics
to stderr. Every flag can also be set through a ``HABILIS_`` environment
variable; flags win.
"""

from __future__ import annotations

import json
import logging
import math
import signal
import sys
import threading
import time
from pathlib import Path

import click

from .client import AuthzClient, ClientConfig, HttpTransport, InMemoryTransport, Mode
from .errors import CommandRejected, JournalCorrupt, MalformedStore, NotMigrated, UpstreamUnreachable
from .fixtures import demo_resources, demo_store
from .guard import ResourceRegistry
from .migration import decisions_equivalent, migrate_grants, require_migrated
from .model import EntitlementStore, Reason, check_integrity
from .service import HabilitationService, make_server

EXIT_OK, EXIT_DENY, EXIT_USAGE, EXIT_CORRUPT, EXIT_UNREACHABLE = 0, 1, 2, 3, 4

log = logging.getLogger("habilis")


def _env(name: str) -> str:
    return "HABILIS_" + name.upper().replace("-", "_")


def opt(flag: str, **kwargs):
    return click.option(flag, envvar=_env(flag.lstrip("-")), show_envvar=True, **kwargs)


def emit(doc) -> None:
    click.echo(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False))


def fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def load_store(path) -> EntitlementStore:
    try:
        store = EntitlementStore.from_json(Path(path).read_bytes())
        return check_integrity(store)
    except OSError as exc:
        fail(EXIT_USAGE, f"cannot read fixture: {exc}")
    except MalformedStore as exc:
        fail(EXIT_USAGE, f"malformed fixture {path}: {exc.message}")


def load_registry(path) -> ResourceRegistry:
    try:
        return ResourceRegistry.from_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        fail(EXIT_USAGE, f"malformed resource fixture {path}: {exc}")


def ensure_migrated(store: EntitlementStore) -> EntitlementStore:
    try:
        require_migrated(store)
        return store
    except NotMigrated:
        click.echo("note: fixture holds legacy grants only; migrating before use", err=True)
        return migrate_grants(store)


def parse_ttl(value) -> float:
    if value is None or str(value).lower() in ("inf", "infinity", "none"):
        return math.inf
    ttl = float(value)
    if ttl < 0:
        raise click.BadParameter("must be >= 0", param_hint="--ttl-ms")
    return ttl


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log to stderr.")
def main(verbose: bool):
    """Centralized habilitation service, client and migration tooling."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, stream=sys.stderr)


@main.command()
@opt("--data-dir", required=True, type=click.Path(file_okay=False))
@opt("--listen", default="127.0.0.1:8080")
@opt("--admin-secret", default=None)
@opt("--snapshot-every", type=click.IntRange(min=1), default=100)
def serve(data_dir, listen, admin_secret, snapshot_every):
    """Run the habilitation service until interrupted."""
    try:
        service = HabilitationService(data_dir, admin_secret, snapshot_every)
    except OSError as exc:
        fail(EXIT_USAGE, f"data directory unusable: {exc}")
    try:
        server = make_server(service, listen)
    except (OSError, ValueError) as exc:
        fail(EXIT_USAGE, f"cannot listen on {listen}: {exc}")

    # bind first so health answers UNAVAILABLE while the journal replays
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        service.load()
    except JournalCorrupt as exc:
        server.shutdown()
        server.server_close()
        fail(EXIT_CORRUPT, f"{exc.message} (offset {exc.offset})")

    host, port = server.server_address[:2]
    emit({"status": "listening", "url": f"http://{host}:{port}", "generation": service.store.generation})
    sys.stdout.flush()

    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    try:
        while not stop.wait(0.5):
            pass
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        server.server_close()
        service.close()
        click.echo("snapshot written, stopped", err=True)


@main.command()
@opt("--fixture", type=click.Path(dir_okay=False), default=None, help="Import this fixture instead of the demo.")
@opt("--resources", type=click.Path(dir_okay=False), default=None, help="Write the demo resource fixture here.")
@opt("--data-dir", type=click.Path(file_okay=False), default=None, help="Bulk-import into this data directory.")
def seed(fixture, resources, data_dir):
    """Emit the demo fixture, or bulk-import a fixture into a data directory."""
    store = load_store(fixture) if fixture else demo_store()
    if resources:
        Path(resources).write_text(demo_resources().to_json() + "\n", encoding="utf-8")
    if data_dir is None:
        emit(store.to_doc())
        return
    service = _offline_service(data_dir)
    try:
        result = service.apply_admin({"kind": "BULK_IMPORT", "payload": store.to_doc()})
    except CommandRejected as exc:
        fail(EXIT_USAGE, f"import rejected: {exc.message}")
    service.close()
    emit(result)


@main.command()
@opt("--fixture", type=click.Path(dir_okay=False), default=None)
@opt("--data-dir", type=click.Path(file_okay=False), default=None)
@opt("--endpoint", default=None)
@opt("--admin-secret", default=None)
def migrate(fixture, data_dir, endpoint, admin_secret):
    """Compile legacy grants into macro-functions.

    With --fixture the migrated store is printed; with --data-dir or
    --endpoint a MIGRATE command is applied there.
    """
    if sum(x is not None for x in (fixture, data_dir, endpoint)) != 1:
        raise click.UsageError("give exactly one of --fixture, --data-dir, --endpoint")
    if fixture:
        emit(migrate_grants(load_store(fixture)).to_doc())
        return
    if data_dir:
        service = _offline_service(data_dir)
        try:
            result = service.apply_admin({"kind": "MIGRATE"})
        except CommandRejected as exc:
            fail(EXIT_DENY, f"migration rejected: {exc.message}")
        service.close()
        emit(result)
        return
    transport = HttpTransport(endpoint, headers={"Authorization": f"Bearer {admin_secret or ''}"})
    try:
        status, doc = transport.send("POST", "/v1/admin/migrate", body={})
    except UpstreamUnreachable as exc:
        fail(EXIT_UNREACHABLE, exc.message)
    emit(doc)
    sys.exit(EXIT_OK if status == 200 else EXIT_DENY)


@main.command()
@opt("--fixture", required=True, type=click.Path(dir_okay=False))
def verify(fixture):
    """Check that both engines agree on every (user, action) pair.

    A legacy-only fixture is migrated first; a fixture that already carries
    migrated macro-functions is checked as is.
    """
    store = load_store(fixture)
    migrated = False
    try:
        require_migrated(store)
    except NotMigrated:
        store = migrate_grants(store)
        migrated = True
    report = decisions_equivalent(store)
    emit({"migratedByVerify": migrated, **report.to_doc()})
    if not report.equivalent:
        click.echo(f"{len(report.mismatches)} mismatching (user, action) pairs", err=True)
    sys.exit(EXIT_OK if report.equivalent else EXIT_DENY)


TOPOLOGIES = ["MONOLITH_RBAC", "CENTRALIZED_HS", "DECENTRALIZED_REPLICAS", "COMPARE_PHASES"]


@main.command()
@opt("--config", type=click.Path(dir_okay=False), default=None, help="Simulation config JSON.")
@opt("--fixture", type=click.Path(dir_okay=False), default=None)
@opt("--resources", type=click.Path(dir_okay=False), default=None)
@opt("--topology", type=click.Choice(TOPOLOGIES), default=None)
@opt("--seed", type=int, default=None)
@opt("--requests", type=click.IntRange(min=0), default=None)
@opt("--ttl-ms", default=None, help="Client cache TTL in ms, or 'inf'.")
@opt("--hop-cost-ms", type=click.FloatRange(min=0), default=None)
@opt("--services", type=click.IntRange(min=1), default=None)
@opt("--refresh-every", type=click.IntRange(min=1), default=None)
@opt("--figures", type=click.Path(file_okay=False), default=None, help="Write PNG charts here.")
def simulate(config, fixture, resources, topology, seed, requests, ttl_ms, hop_cost_ms, services, refresh_every, figures):
    """Replay a seeded workload through a simulated fleet."""
    from . import sim

    cfg = None
    if config:
        try:
            cfg = sim.load_sim_config(config)
        except (OSError, ValueError, KeyError) as exc:
            fail(EXIT_USAGE, f"bad simulation config: {exc}")
    fixture = fixture or (cfg.fixture if cfg else None)
    resources = resources or (cfg.resources if cfg else None)
    store = ensure_migrated(load_store(fixture) if fixture else demo_store())
    registry = load_registry(resources) if resources else demo_resources()
    problems = registry.validate(store)
    if problems:
        fail(EXIT_USAGE, "; ".join(problems))

    base_topo = cfg.topology if cfg else sim.Topology(sim.TopologyKind.CENTRALIZED_HS)
    base_load = cfg.workload if cfg else sim.Workload(seed=0, request_count=1000)
    workload = sim.Workload(
        seed=base_load.seed if seed is None else seed,
        request_count=base_load.request_count if requests is None else requests,
        user_pool=base_load.user_pool,
        action_pool=base_load.action_pool,
        resource_pool=base_load.resource_pool,
        mutations=base_load.mutations,
        tick_ms=base_load.tick_ms,
    )
    kind = topology or base_topo.kind.value
    ttl = base_topo.cache_ttl if ttl_ms is None else parse_ttl(ttl_ms)
    hop = base_topo.hop_cost if hop_cost_ms is None else hop_cost_ms
    count = base_topo.service_count if services is None else services

    started = time.perf_counter()
    try:
        if kind == "COMPARE_PHASES":
            report = sim.compare_phases(store, registry, workload, service_count=count, cache_ttl=ttl, hop_cost=hop)
        else:
            topo = sim.Topology(
                kind,
                service_count=count,
                replica_refresh_every=base_topo.replica_refresh_every if refresh_every is None else refresh_every,
                hop_cost=hop,
                cache_ttl=ttl,
            )
            report = sim.run_sim(store, registry, topo, workload)
    except CommandRejected as exc:
        fail(EXIT_USAGE, f"scheduled mutation rejected: {exc.message}")

    click.echo(report.to_json(), nl=False)
    click.echo(report.to_text(), err=True, nl=False)
    # host timing is informative only and kept out of the report
    click.echo(f"wall clock: {time.perf_counter() - started:.3f}s", err=True)
    if figures:
        from .plotting import render_report_figures

        for path in render_report_figures(report, figures):
            click.echo(f"figure: {path}", err=True)
    sys.exit(EXIT_DENY if report.mismatched_decisions else EXIT_OK)


@main.command()
@click.argument("user")
@click.argument("action")
@opt("--geo", default=None)
@opt("--mode", type=click.Choice(["LEGACY", "MACRO"]), default="LEGACY")
@opt("--fixture", type=click.Path(dir_okay=False), default=None)
@opt("--endpoint", default=None)
@opt("--ttl-ms", default=None)
def check(user, action, geo, mode, fixture, endpoint, ttl_ms):
    """One decision. LEGACY asks the service; MACRO fetches grants and checks membership."""
    if (fixture is None) == (endpoint is None):
        raise click.UsageError("give exactly one of --fixture, --endpoint")
    if fixture:
        store = load_store(fixture)
        if mode == "MACRO":
            store = ensure_migrated(store)
        transport = InMemoryTransport(HabilitationService(store=store))
    else:
        transport = HttpTransport(endpoint)
    client_mode = Mode.PHASE1 if mode == "LEGACY" else Mode.PHASE2
    client = AuthzClient(ClientConfig(mode=client_mode, endpoint=endpoint or "fixture", cache_ttl=parse_ttl(ttl_ms)), transport)
    decision = client.check(user, action, geo)
    emit({"user": user, "action": action, "geo": geo, "mode": mode, **decision.to_doc()})
    click.echo(json.dumps({"clientStats": client.stats.to_doc()}, sort_keys=True), err=True)
    if decision.reason is Reason.DENY_UPSTREAM_UNREACHABLE:
        sys.exit(EXIT_UNREACHABLE)
    sys.exit(EXIT_OK if decision.allowed else EXIT_DENY)


def _offline_service(data_dir) -> HabilitationService:
    try:
        service = HabilitationService(data_dir, snapshot_every=100)
        service.load()
    except OSError as exc:
        fail(EXIT_USAGE, f"data directory unusable: {exc}")
    except JournalCorrupt as exc:
        fail(EXIT_CORRUPT, f"{exc.message} (offset {exc.offset})")
    return service


if __name__ == "__main__":  # pragma: no cover
    main()
