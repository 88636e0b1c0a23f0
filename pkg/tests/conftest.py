import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scendecomp.config import load_config, parse_mv, parse_online_qp, parse_utility

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def binomial_qp():
    return parse_online_qp(load_config("binomial_qp")["problem"])


@pytest.fixture(scope="session")
def utility_smoothing():
    return parse_utility(load_config("utility_smoothing")["problem"])


@pytest.fixture(scope="session")
def mv_smoothing():
    return parse_mv(load_config("mv_smoothing")["problem"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture(scope="session")
def timings():
    """Wall-clock seconds of the session-scoped solver runs."""
    return {}


@pytest.fixture(scope="session")
def utility_runs(utility_smoothing, timings):
    """PHA results of the bundled utility fixture, keyed by gamma."""
    from scendecomp.config import parse_pha
    from scendecomp.pha import pha_solve
    from scendecomp.portfolio import UtilityAdapter

    market, utility, specs = utility_smoothing
    cfg = parse_pha(load_config("utility_smoothing"))
    tree = market.tree()
    runs = {}
    for spec in specs:
        start = time.perf_counter()
        runs[spec.gamma] = pha_solve(tree, UtilityAdapter(market, utility, spec, tree), cfg)
        timings[("utility", spec.gamma)] = time.perf_counter() - start
    return runs


@pytest.fixture(scope="session")
def mvs_runs(mv_smoothing, timings):
    """Lambda-search results of the bundled MV fixture, keyed by w."""
    from scendecomp.config import parse_pha
    from scendecomp.portfolio import lambda_search

    market, specs = mv_smoothing
    cfg = parse_pha(load_config("mv_smoothing"))
    tree = market.tree()
    runs = {}
    for spec in specs:
        start = time.perf_counter()
        runs[spec.w] = (spec, lambda_search(tree, market, spec, cfg))
        timings[("mvs", spec.w)] = time.perf_counter() - start
    return runs


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
