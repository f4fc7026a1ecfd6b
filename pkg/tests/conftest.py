import copy
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from habilis.fixtures import DEMO_DOC, demo_resources, demo_store  # noqa: E402
from habilis.migration import migrate_grants  # noqa: E402
from habilis.model import EntitlementStore  # noqa: E402

SMALL_DOC = {
    "tenants": [{"id": "acme", "name": "ACME"}],
    "geoEntities": [{"id": "FR"}, {"id": "FR-IDF", "parent": "FR"}],
    "permissions": [{"id": "account:read"}, {"id": "account:write"}],
    "roles": [
        {"id": "gestionnaire", "name": "Gestionnaire", "permissions": ["account:read", "account:write"]},
        {"id": "lecteur", "name": "Lecteur", "permissions": ["account:read"]},
    ],
    "profiles": [
        {"id": "pg", "name": "PG", "associations": [{"role": "gestionnaire", "scope": "FR-IDF"}]},
        {"id": "pl", "name": "PL", "associations": [{"role": "lecteur", "scope": "FR"}]},
    ],
    "users": [
        {"id": "u-gest", "tenant": "acme", "profiles": ["pg"]},
        {"id": "u-lect", "tenant": "acme", "profiles": ["pl"]},
        {"id": "u-none", "tenant": "acme", "profiles": []},
    ],
}


@pytest.fixture
def demo_doc():
    return copy.deepcopy(DEMO_DOC)


@pytest.fixture
def demo():
    return demo_store()


@pytest.fixture
def migrated(demo):
    return migrate_grants(demo)


@pytest.fixture
def resources():
    return demo_resources()


@pytest.fixture
def small():
    return EntitlementStore.from_doc(SMALL_DOC)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and report.when != "call":
        detail = f"error during {report.when}"
    _ACCEPTANCE[number] = (title, report.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title}: {detail}")
