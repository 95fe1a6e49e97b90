import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance criterion -> result line, printed once at the end of the run
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


FD_STEP = 1e-4
FD_RTOL = 1e-5
# entries smaller than this are compared absolutely: central differences carry
# ~h^2 truncation plus ~eps/h rounding error, which swamps a relative test near 0
FD_FLOOR = 1e-6


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=FD_RTOL, floor=FD_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    assert analytic.shape == numeric.shape
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / scale
    assert rel.max() <= rtol, f"max relative error {rel.max():.3e} at {np.argmax(rel)}"


@pytest.fixture(scope="session")
def arena_fixture():
    """8-agent arena clique, 10 episodes per edge, weak 60% split."""
    from polemb.agents import arena_population
    from polemb.env import arena_spec
    from polemb.graph import build_graph, split_weak

    pop = arena_population(8, 0)
    g = build_graph(pop, arena_spec(), 10, "clique", 0)
    return pop, g, split_weak(g, 0.6, 0)


@pytest.fixture(scope="session")
def signal_fixture():
    from polemb.agents import signal_population
    from polemb.env import signal_spec
    from polemb.graph import build_graph

    pop = signal_population(0)
    return pop, build_graph(pop, signal_spec(), 10, "bipartite", 0)
