import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_defgrad(rng, scale=0.3):
    """Deformation gradient near the identity with positive determinant."""
    while True:
        F = np.eye(3) + scale * rng.uniform(-1, 1, size=(3, 3))
        if np.linalg.det(F) > 0.2:
            return F


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion -----------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n, title = props["criterion"]
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= report.passed
    entry["notes"] += [v for k, v in report.user_properties if k == "measured"]


@pytest.fixture(autouse=True)
def _criterion_property(request):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        request.node.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["notes"]:
            line += "  [" + "; ".join(e["notes"]) + "]"
        terminalreporter.write_line(line)
