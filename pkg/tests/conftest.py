import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pnpmg import model, sim, synthesis
from pnpmg.model import DguParams

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

W0 = 2 * np.pi * 50

# Parameter ranges used across property tests.
R_T = (0.01, 1.0)
L_T = (1e-4, 1e-2)
C_T = (1e-6, 1e-4)


@st.composite
def dgu_params(draw, dgu_id: int = 1) -> DguParams:
    return DguParams(
        dgu_id,
        draw(st.floats(*R_T)),
        draw(st.floats(*L_T)),
        draw(st.floats(*C_T)),
    )


sigma_bars = st.sampled_from([1e2, 1e4, 1e6])
routes = st.sampled_from([synthesis.Route.LMI, synthesis.Route.ANALYTIC])


@st.composite
def random_grids(draw, max_n: int = 8):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_n))
    sb = draw(sigma_bars)
    return model.random_connected_grid(np.random.default_rng(seed), n, sigma_bar=sb)


def controllers_for(grid, route=synthesis.Route.LMI):
    opts = synthesis.SynthesisOptions(route=route)
    return {i: c for i, (c, _) in synthesis.synthesize_all(grid, opts).items()}


@pytest.fixture(scope="session")
def benchmark_parts():
    """Initial grid, plug-in DGU, its lines and controllers for all ten DGUs."""
    grid0, dgu10, lines10 = sim.benchmark_grid()
    full = model.mutate_topology(grid0, model.PlugIn(dgu10, lines10))
    ctrls = controllers_for(full)
    return grid0, dgu10, lines10, full, ctrls


# --- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


# --- shared simulation runs ---------------------------------------------------


def free_response(grid, ctrls, rng, horizon_factor: float = 25.0, step_s: float = 1e-3):
    """Simulate from a random state with zero loads and references.

    Returns ``(initial norm, final norm, max Re of the spectrum)``.
    """
    from pnpmg import analysis

    max_re = analysis.certify_stability(grid, ctrls).max_re
    x0 = {i: rng.standard_normal(6) for i in grid.ids}
    t_end = horizon_factor / abs(max_re)
    sc = sim.Scenario(grid, ctrls, {}, {}, (), t_end, step_s, record_every=10**9)
    traj = sim.simulate(sc, x0)
    n0 = np.linalg.norm(np.concatenate([x0[i] for i in grid.ids]))
    n1 = np.linalg.norm(traj.states[-1])
    return n0, n1, max_re


@pytest.fixture(scope="session")
def benchmark_run(benchmark_parts):
    import time

    *_, ctrls = benchmark_parts
    sc = sim.benchmark_scenario(controllers=ctrls)
    t0 = time.perf_counter()
    traj = sim.simulate(sc)
    elapsed = time.perf_counter() - t0
    return sc, traj, sim.compute_metrics(traj), elapsed


@pytest.fixture(scope="session")
def drift_run(benchmark_parts):
    *_, ctrls = benchmark_parts
    sc = sim.clock_drift_scenario(controllers=ctrls)
    traj = sim.simulate(sc)
    return sc, traj, sim.compute_metrics(traj)
