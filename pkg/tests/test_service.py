import json
import threading

import pytest

from habilis.client import HttpTransport
from habilis.engine import GrantSet, expand_macro_functions, ms_authorize
from habilis.errors import CommandRejected, JournalCorrupt
from habilis.fixtures import DEMO_DOC
from habilis.migration import decisions_equivalent
from habilis.service import BackgroundServer, HabilitationService
from habilis.service.journal import JOURNAL, SNAPSHOT

SECRET = "s3cret"
AUTH = {"Authorization": f"Bearer {SECRET}"}


def call(svc, method, path, body=None, headers=None):
    raw = b"" if body is None else json.dumps(body).encode()
    resp = svc.handle(method, path, headers or {}, raw)
    return resp.status, resp.body


@pytest.fixture
def svc(migrated):
    return HabilitationService(store=migrated, admin_secret=SECRET)


@pytest.fixture
def legacy_svc(demo):
    return HabilitationService(store=demo, admin_secret=SECRET)


def test_grants_for_migrated_user(svc):
    status, doc = call(svc, "GET", "/v1/users/alice/grants")
    assert status == 200
    assert doc["functions"] == ["account:read", "account:write"]
    assert doc["macroFunctions"] == [{"id": "mf:gestionnaire", "functions": ["account:read", "account:write"]}]
    assert doc["generation"] == 1


def test_grants_for_user_without_grants(svc):
    status, doc = call(svc, "GET", "/v1/users/erin/grants")
    assert status == 200 and doc["functions"] == [] and doc["macroFunctions"] == [] and doc["generation"] == 1


def test_grants_unknown_user(svc):
    status, doc = call(svc, "GET", "/v1/users/nobody/grants")
    assert status == 404 and doc["code"] == "UNKNOWN_USER" and "message" in doc


def test_conditional_grants(svc):
    status, doc = call(svc, "GET", "/v1/users/alice/grants", headers={"X-Known-Generation": "1"})
    assert (status, doc) == (200, {"unchanged": True, "generation": 1})
    status, doc = call(svc, "GET", "/v1/users/alice/grants", headers={"X-Known-Generation": "0"})
    assert "functions" in doc
    status, doc = call(svc, "GET", "/v1/users/alice/grants", headers={"X-Known-Generation": "x"})
    assert status == 400 and doc["code"] == "MALFORMED_REQUEST"


@pytest.mark.parametrize(
    "body,allowed,reason",
    [
        ({"user": "alice", "action": "account:write", "mode": "LEGACY"}, True, "ALLOWED_BY_ROLE"),
        ({"user": "bob-lecteur", "action": "account:write", "mode": "MACRO"}, False, "DENY_NO_GRANT"),
        ({"user": "alice", "action": "account:read", "geo": "FR-SUD", "mode": "LEGACY"}, False, "DENY_OUT_OF_GEO_SCOPE"),
        ({"user": "nobody", "action": "account:read", "mode": "LEGACY"}, False, "DENY_UNKNOWN_USER"),
        ({"user": "nobody", "action": "account:read", "mode": "MACRO"}, False, "DENY_UNKNOWN_USER"),
        ({"user": "alice", "action": "rocket:launch", "mode": "LEGACY"}, False, "DENY_UNKNOWN_ACTION"),
    ],
)
def test_authorize(svc, body, allowed, reason):
    status, doc = call(svc, "POST", "/v1/authorize", body)
    assert status == 200
    assert (doc["allowed"], doc["reason"], doc["generation"]) == (allowed, reason, 1)
    assert "trace" in doc


@pytest.mark.parametrize(
    "raw",
    [b"", b"not json", b"[]", json.dumps({"user": "alice", "action": "account:read"}).encode(),
     json.dumps({"user": "", "action": "a:b", "mode": "LEGACY"}).encode(),
     json.dumps({"user": "alice", "action": "a:b", "mode": "LEGACY", "geo": 3}).encode()],
)
def test_authorize_malformed(svc, raw):
    resp = svc.handle("POST", "/v1/authorize", {}, raw)
    assert resp.status == 400 and resp.body["code"] == "MALFORMED_REQUEST"


def test_routing_errors(svc):
    assert call(svc, "GET", "/v1/nope")[0] == 404
    assert call(svc, "POST", "/v1/health")[0] == 405
    assert call(svc, "GET", "/v1/authorize")[0] == 405


def test_boolean_endpoint_fidelity(svc):
    store = svc.store
    for uid in list(store.users) + ["ghost"]:
        status, gdoc = call(svc, "GET", f"/v1/users/{uid}/grants")
        for action in store.actions:
            _, adoc = call(svc, "POST", "/v1/authorize", {"user": uid, "action": action, "mode": "MACRO"})
            expected = ms_authorize(GrantSet.from_doc(gdoc), action).allowed if status == 200 else False
            assert adoc["allowed"] == expected
            assert adoc["generation"] == store.generation


# -- admin ---------------------------------------------------------------


def test_admin_requires_token(svc):
    body = {"kind": "GRANT", "payload": {"user": "erin", "macroFunction": "mf:lecteur"}}
    assert call(svc, "POST", "/v1/admin/commands", body)[1]["code"] == "UNAUTHORIZED"
    status, doc = call(svc, "POST", "/v1/admin/commands", body, {"Authorization": "Bearer wrong"})
    assert status == 401
    assert HabilitationService(store=svc.store).handle("POST", "/v1/admin/migrate", AUTH).status == 401
    assert svc.store.generation == 1


def test_upsert_role_with_unknown_permissions_rejected():
    svc = HabilitationService(admin_secret=SECRET)
    before = svc.store.canonical_bytes()
    body = {"kind": "UPSERT_ROLE", "payload": {"id": "gestionnaire", "name": "G", "permissions": ["account:read", "account:write"]}}
    status, doc = call(svc, "POST", "/v1/admin/commands", body, AUTH)
    assert status == 409
    assert doc["code"] == "REJECTED" and doc["constraint"] == "UNRESOLVED_PERMISSION"
    assert svc.store.generation == 0 and svc.store.canonical_bytes() == before
    assert svc.audit[-1]["outcome"] == "REJECTED"


def test_grant_increments_generation_by_one(svc):
    before = svc.store.generation
    status, doc = call(svc, "POST", "/v1/admin/commands",
                       {"kind": "GRANT", "payload": {"user": "erin", "macroFunction": "mf:lecteur"}}, AUTH)
    assert status == 200 and doc["generation"] == before + 1
    assert "account:read" in call(svc, "GET", "/v1/users/erin/grants")[1]["functions"]
    assert svc.audit[-1] == {"sequence": doc["sequence"], "issuedAt": svc.audit[-1]["issuedAt"],
                             "kind": "GRANT", "outcome": "APPLIED", "reason": None}


def test_revoke(svc):
    call(svc, "POST", "/v1/admin/commands", {"kind": "REVOKE", "payload": {"user": "alice", "macroFunction": "mf:gestionnaire"}}, AUTH)
    assert call(svc, "GET", "/v1/users/alice/grants")[1]["functions"] == []


def test_migrate_endpoint(legacy_svc):
    status, doc = call(legacy_svc, "POST", "/v1/admin/migrate", None, AUTH)
    assert status == 200 and doc["generation"] == 1
    assert decisions_equivalent(legacy_svc.store).mismatches == []


def test_import_endpoint():
    svc = HabilitationService(admin_secret=SECRET)
    status, doc = call(svc, "POST", "/v1/admin/import", DEMO_DOC, AUTH)
    assert status == 200 and doc["generation"] == 1
    assert set(svc.store.users) == {u["id"] for u in DEMO_DOC["users"]}
    bad = dict(DEMO_DOC, users=[{"id": "x", "tenant": "ghost"}])
    status, doc = call(svc, "POST", "/v1/admin/import", bad, AUTH)
    assert status == 409 and doc["constraint"] == "UNRESOLVED_TENANT"


@pytest.mark.parametrize(
    "command,constraint",
    [
        ({"kind": "EXPLODE"}, "UNKNOWN_COMMAND_KIND"),
        ({"kind": "UPSERT_TENANT", "payload": {"id": "t"}}, "EMPTY_NAME"),
        ({"kind": "UPSERT_TENANT", "payload": "x"}, "MALFORMED_PAYLOAD"),
        ({"kind": "UPSERT_PERMISSION", "payload": {"id": "Bad"}}, "MALFORMED_ACTION_ID"),
        ({"kind": "UPSERT_GEO", "payload": {"id": "FR", "parent": "Paris"}}, "GEO_CYCLE"),
        ({"kind": "GRANT", "payload": {"user": "ghost", "profile": "p"}}, "UNRESOLVED_USER"),
        ({"kind": "GRANT", "payload": {"user": "alice", "profile": "p-ghost"}}, "UNRESOLVED_PROFILE"),
        ({"kind": "GRANT", "payload": {"user": "alice"}}, "MALFORMED_PAYLOAD"),
        ({"kind": "GRANT", "payload": {"user": "alice", "profile": "p-lecteur-fr"}, "sequence": 0}, "NON_INCREASING_SEQUENCE"),
        ({"kind": "GRANT", "payload": {"user": "alice", "profile": "p-lecteur-fr"}, "issuedAt": "now"}, "MALFORMED_COMMAND"),
    ],
)
def test_rejections_are_atomic(svc, command, constraint):
    before = svc.store.canonical_bytes()
    with pytest.raises(CommandRejected) as err:
        svc.apply_admin(command)
    assert err.value.constraint == constraint
    assert svc.store.canonical_bytes() == before
    assert svc.audit[-1]["outcome"] == "REJECTED"


# -- persistence -----------------------------------------------------------

COMMANDS = [
    {"kind": "UPSERT_TENANT", "payload": {"id": "acme", "name": "ACME"}},
    {"kind": "UPSERT_PERMISSION", "payload": {"id": "account:read"}},
    {"kind": "UPSERT_GEO", "payload": {"id": "FR"}},
    {"kind": "UPSERT_ROLE", "payload": {"id": "lecteur", "name": "Lecteur", "permissions": ["account:read"]}},
    {"kind": "UPSERT_PROFILE", "payload": {"id": "pl", "name": "PL", "associations": [{"role": "lecteur", "scope": "FR"}]}},
    {"kind": "UPSERT_USER", "payload": {"id": "bob", "tenant": "acme", "profiles": ["pl"]}},
    {"kind": "MIGRATE"},
]


def boot(path, **kw):
    svc = HabilitationService(path, admin_secret=SECRET, **kw)
    svc.load()
    return svc


def test_empty_data_dir(tmp_path):
    svc = boot(tmp_path)
    assert svc.store.generation == 0 and svc.health()["generation"] == 0


def test_restart_is_byte_identical(tmp_path):
    svc = boot(tmp_path)
    for c in COMMANDS[:3]:
        svc.apply_admin(c)
    again = boot(tmp_path)
    assert again.store.generation == 3
    assert again.store.canonical_bytes() == svc.store.canonical_bytes()


def test_snapshot_every_k_and_prefix_replay(tmp_path):
    svc = boot(tmp_path / "a", snapshot_every=3)
    stores = []
    for c in COMMANDS:
        svc.apply_admin(c)
        stores.append(svc.store.canonical_bytes())
    assert (tmp_path / "a" / SNAPSHOT).exists()
    assert boot(tmp_path / "a").store.canonical_bytes() == stores[-1]
    # any prefix of the journal alone replays to the matching store
    lines = (tmp_path / "a" / JOURNAL).read_bytes().splitlines(keepends=True)
    for n in range(1, len(lines) + 1):
        d = tmp_path / f"prefix{n}"
        d.mkdir()
        (d / JOURNAL).write_bytes(b"".join(lines[:n]))
        assert boot(d).store.canonical_bytes() == stores[n - 1]


def test_sequence_survives_restart_after_rejection(tmp_path):
    svc = boot(tmp_path)
    svc.apply_admin(COMMANDS[0])
    with pytest.raises(CommandRejected):
        svc.apply_admin({"kind": "UPSERT_USER", "payload": {"id": "x", "tenant": "ghost"}})
    again = boot(tmp_path)
    assert again.sequence == 2
    assert again.apply_admin(COMMANDS[1])["sequence"] == 3


def test_truncated_journal_fails_stop(tmp_path):
    svc = boot(tmp_path)
    for c in COMMANDS[:3]:
        svc.apply_admin(c)
    path = tmp_path / JOURNAL
    data = path.read_bytes()
    lines = data.splitlines(keepends=True)
    path.write_bytes(data[: len(lines[0]) + len(lines[1]) + 7])
    with pytest.raises(JournalCorrupt) as err:
        boot(tmp_path)
    assert err.value.offset == len(lines[0]) + len(lines[1])
    assert str(err.value.offset) in str(err.value)


def test_garbled_middle_record(tmp_path):
    svc = boot(tmp_path)
    for c in COMMANDS[:3]:
        svc.apply_admin(c)
    path = tmp_path / JOURNAL
    lines = path.read_bytes().splitlines(keepends=True)
    lines[1] = b"{garbage\n"
    path.write_bytes(b"".join(lines))
    with pytest.raises(JournalCorrupt) as err:
        boot(tmp_path)
    assert err.value.offset == len(lines[0])


def test_record_that_no_longer_applies(tmp_path):
    svc = boot(tmp_path)
    for c in COMMANDS[:4]:
        svc.apply_admin(c)
    path = tmp_path / JOURNAL
    lines = path.read_bytes().splitlines(keepends=True)
    del lines[1]  # drop the permission the role depends on
    path.write_bytes(b"".join(lines))
    with pytest.raises(JournalCorrupt):
        boot(tmp_path)


def test_health_unavailable_until_loaded(tmp_path):
    svc = HabilitationService(tmp_path)
    status, doc = call(svc, "GET", "/v1/health")
    assert status == 503 and doc["code"] == "UNAVAILABLE"
    svc.load()
    status, doc = call(svc, "GET", "/v1/health")
    assert status == 200 and doc["status"] == "ok" and doc["generation"] == 0
    svc.apply_admin(COMMANDS[0])
    svc.apply_admin(COMMANDS[1])
    assert call(svc, "GET", "/v1/health")[1]["generation"] == 2
    assert doc["uptimeSeconds"] >= 0


def test_close_writes_snapshot(tmp_path):
    svc = boot(tmp_path)
    svc.apply_admin(COMMANDS[0])
    svc.close()
    assert json.loads((tmp_path / SNAPSHOT).read_bytes())["sequence"] == 1


def test_read_isolation_under_concurrent_writes(svc):
    """Every grants response equals the pure evaluation at its own generation."""
    by_generation = {svc.store.generation: svc.store}
    observed = []
    stop = threading.Event()

    def reader():
        while not stop.is_set():
            observed.append(call(svc, "GET", "/v1/users/erin/grants")[1])

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for i in range(40):
        mf = ["mf:lecteur", "mf:gestionnaire", "mf:auditeur"][i % 3]
        kind = "GRANT" if i % 2 == 0 else "REVOKE"
        svc.apply_admin({"kind": kind, "payload": {"user": "erin", "macroFunction": mf}})
        by_generation[svc.store.generation] = svc.store
    stop.set()
    for t in threads:
        t.join()
    assert observed
    for doc in observed:
        assert doc == expand_macro_functions(by_generation[doc["generation"]], "erin").to_doc()


def test_over_http(svc):
    with BackgroundServer(svc) as server:
        t = HttpTransport(server.url)
        assert t.send("GET", "/v1/health")[1]["status"] == "ok"
        status, doc = t.send("GET", "/v1/users/alice/grants")
        assert doc["functions"] == ["account:read", "account:write"]
        status, doc = t.send("GET", "/v1/users/nobody/grants")
        assert status == 404 and doc["code"] == "UNKNOWN_USER"
        status, doc = t.send("POST", "/v1/authorize", {"user": "alice", "action": "account:write", "mode": "LEGACY"})
        assert doc["allowed"] is True
        status, doc = t.send("POST", "/v1/admin/commands",
                             {"kind": "GRANT", "payload": {"user": "erin", "macroFunction": "mf:lecteur"}}, AUTH)
        assert status == 200 and doc["generation"] == 2
        status, doc = t.send("GET", "/v1/users/erin/grants", headers={"X-Known-Generation": "2"})
        assert doc == {"unchanged": True, "generation": 2}
