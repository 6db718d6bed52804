import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gnn_inversion.data import generate_sbm
from gnn_inversion.gcn import split_nodes, train

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sbm():
    return generate_sbm(2, 20, 0.5, 0.02, 1.0, seed=0)


@pytest.fixture(scope="session")
def sbm_split(sbm):
    return split_nodes(sbm.labels, 0.1, 0.2, seed=0)


@pytest.fixture(scope="session")
def sbm_model(sbm, sbm_split):
    tr, va, _ = sbm_split
    return train(sbm, tr, val_mask=va, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_symmetric(rng, n, binary=False):
    """Random symmetric zero-diagonal matrix with entries in [0, 1]."""
    M = rng.random((n, n))
    if binary:
        M = (M < 0.4).astype(float)
    M = np.triu(M, 1)
    return M + M.T


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the capture mode."""
    lines = []
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_c" not in nodeid or (outcome == "passed" and rep.when != "call"):
                continue
            name = nodeid.split("::")[-1]
            num = int(name[6:8])
            detail = dict(getattr(rep, "user_properties", [])).get("detail", "")
            if outcome == "skipped":
                detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
            lines.append((num, f"criterion {num:2d} {outcome.upper() if outcome != 'passed' else 'PASS':7s} "
                               f"{name[9:]}  {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line.replace("FAILED ", "FAIL   ").replace("SKIPPED", "SKIP   "))
