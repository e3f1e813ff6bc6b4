import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnpmg import lmi, synthesis
from pnpmg.model import DguParams

from conftest import dgu_params, sigma_bars

cp = pytest.importorskip("cvxpy")


def _scalar_bound():
    i2 = np.eye(2)
    return lmi.LmiProgram(1, [1.0], (lmi.LmiBlock(-i2, i2[None], ">=", "bound"),))


def test_scalar_bound_optimum():
    sol = lmi.solve(_scalar_bound())
    assert sol.status is lmi.Status.OPTIMAL
    assert sol.z[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(1.0, abs=1e-7)


def test_two_by_two_psd_boundary():
    blk = lmi.LmiBlock(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2)[None], ">=", "psd")
    sol = lmi.solve(lmi.LmiProgram(1, [1.0], (blk,)), z0=[5.0])
    assert sol.ok
    assert sol.z[0] == pytest.approx(1.0, abs=1e-7)


def test_infeasible_program():
    # z I >= I and z I <= 0 cannot hold together.
    i2 = np.eye(2)
    prog = lmi.LmiProgram(
        1,
        [1.0],
        (lmi.LmiBlock(-i2, i2[None], ">=", "a"), lmi.LmiBlock(np.zeros((2, 2)), i2[None], "<=", "b")),
    )
    sol = lmi.solve(prog)
    assert sol.status is lmi.Status.INFEASIBLE
    assert not sol.ok


def test_iteration_budget():
    sol = lmi.solve(_scalar_bound(), lmi.SolverOptions(max_iter=1), z0=[3.0])
    assert sol.status is lmi.Status.MAX_ITER


def test_strict_block_keeps_margin():
    i2 = np.eye(2)
    prog = lmi.LmiProgram(1, [1.0], (lmi.LmiBlock(np.zeros((2, 2)), i2[None], ">", "pos"),))
    sol = lmi.solve(prog, z0=[1.0])
    assert sol.ok
    assert sol.z[0] > 0
    assert lmi.check_solution(prog, sol.z)


def test_dimension_errors():
    with pytest.raises(ValueError):
        lmi.LmiBlock(np.zeros((2, 3)), np.zeros((1, 2, 3)))
    with pytest.raises(ValueError):
        lmi.LmiBlock(np.zeros((2, 2)), np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        lmi.LmiBlock(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        lmi.LmiBlock(np.zeros((2, 2)), np.zeros((1, 2, 2)), "==")
    with pytest.raises(ValueError):
        lmi.LmiProgram(2, [1.0], ())
    with pytest.raises(ValueError):
        lmi.LmiProgram(2, [1.0, 0.0], (lmi.LmiBlock(np.zeros((2, 2)), np.zeros((1, 2, 2))),))


def test_bases():
    assert len(lmi.symmetric_basis(3)) == 6
    assert len(lmi.full_basis(2, 3)) == 6
    blk = lmi.block_from_terms(np.zeros((2, 2)), lmi.symmetric_basis(2)[:1], 3, "<=", "x")
    assert blk.fk.shape == (3, 2, 2)
    assert not np.any(blk.fk[1:])


def _random_sdp(seed, n_vars, dims):
    """Program with a known strictly feasible point and bounded feasible set."""
    rng = np.random.default_rng(seed)
    z_star = rng.normal(size=n_vars)
    blocks = []
    for d in dims:
        fk = rng.normal(size=(n_vars, d, d))
        fk = (fk + fk.transpose(0, 2, 1)) / 2
        s = rng.normal(size=(d, d))
        s = s @ s.T + np.eye(d)
        f0 = s - np.tensordot(z_star, fk, axes=1)
        blocks.append(lmi.LmiBlock(f0, fk, ">="))
    return lmi.LmiProgram(n_vars, rng.normal(size=n_vars), tuple(blocks), lower=z_star - 3, upper=z_star + 3)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.lists(st.integers(1, 5), min_size=1, max_size=3))
def test_random_sdp_matches_cvxpy(seed, n_vars, dims):
    prog = _random_sdp(seed, n_vars, dims)
    ours = lmi.solve(prog)
    assert ours.ok
    assert lmi.check_solution(prog, ours.z)
    ref = lmi.solve_cvxpy(prog)
    assert ref.ok
    scale = 1 + abs(ref.objective)
    assert ours.objective == pytest.approx(ref.objective, abs=1e-6 * scale)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_solve_is_deterministic(seed):
    prog = _random_sdp(seed, 4, [3, 2])
    a, b = lmi.solve(prog), lmi.solve(prog)
    np.testing.assert_array_equal(a.z, b.z)


@pytest.mark.parametrize(
    "r,l,c,w0,sb",
    [(1, 1, 1, 1, 1), (0.5, 2, 0.7, 1.3, 2.0), (0.2, 1.8, 2.5, 0.314, 1.0)],
)
def test_unit_scaled_controller_program_matches_cvxpy(r, l, c, w0, sb):
    params = DguParams(1, r, l, c)
    opts = synthesis.SynthesisOptions(sigma_bar=sb, omega0=w0)
    prog = synthesis.build_lmi_program(params, opts)
    ours = lmi.solve(prog, opts.solver, synthesis.lmi_warm_start(params, opts))
    ref = lmi.solve_cvxpy(prog)
    assert ours.ok and ref.ok
    assert ours.objective == pytest.approx(ref.objective, rel=1e-6)


@settings(max_examples=15)
@given(dgu_params(), sigma_bars)
def test_random_controller_program_is_solved(params, sb):
    opts = synthesis.SynthesisOptions(sigma_bar=sb)
    prog = synthesis.build_lmi_program(params, opts)
    sol = lmi.solve(prog, opts.solver, synthesis.lmi_warm_start(params, opts))
    assert sol.status is lmi.Status.OPTIMAL
    for b in prog.blocks:
        tol = sol.z.size and 1e-8 * (1 + np.linalg.norm(b.f0, 2))
        assert np.linalg.eigvalsh(b.slack(sol.z))[0] >= -tol
