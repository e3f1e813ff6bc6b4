import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pnpmg import model
from pnpmg.model import DguParams, GridSpec, LineParams

from conftest import W0, dgu_params, random_grids


# --- local matrices -----------------------------------------------------------


def test_unit_params_zero_frequency():
    loc = model.build_local_matrices(DguParams(1, 1.0, 1.0, 1.0), 0.0)
    expected = [[0, 0, 1, 0], [0, 0, 0, 1], [-1, 0, -1, 0], [0, -1, 0, -1]]
    np.testing.assert_array_equal(loc.a_ii, expected)


def test_capacitance_entries_at_50hz():
    loc = model.build_local_matrices(DguParams(1, 0.2, 1.8e-3, 62.86e-6), W0)
    assert loc.a_ii[0, 1] == pytest.approx(314.1592653589793, rel=1e-15)
    assert loc.a_ii[0, 2] == pytest.approx(1 / 62.86e-6, rel=1e-15)


@given(dgu_params())
def test_input_matrix_structure(p):
    loc = model.build_local_matrices(p, W0)
    np.testing.assert_array_equal(loc.b[:2], 0)
    np.testing.assert_allclose(loc.b[2:], np.eye(2) / p.l_t, rtol=1e-15)


@given(dgu_params(), st.floats(0, 1000))
def test_trace_and_rotation_entries(p, w0):
    a = model.build_local_matrices(p, w0).a_ii
    assert np.trace(a) == pytest.approx(-2 * p.r_t / p.l_t, rel=1e-12)
    assert a[0, 1] == w0
    assert a[1, 0] == -w0


def test_resistive_unit_line_block():
    blk = model.build_coupling_block(LineParams(1, 2, 1.0, 0.0), 1.0, W0)
    np.testing.assert_array_equal(blk[:2, :2], np.eye(2))


def test_short_line_admittance_values():
    ln = LineParams(1, 2, 0.05, 2.1e-6)
    x = W0 * 2.1e-6
    assert x == pytest.approx(6.597e-4, rel=1e-3)
    z2 = 0.05**2 + x**2
    assert ln.conductance(W0) == pytest.approx(0.05 / z2, rel=1e-14)
    assert ln.susceptance(W0) == pytest.approx(x / z2, rel=1e-14)
    blk = model.build_coupling_block(ln, 1.0, W0)
    np.testing.assert_allclose(blk[:2, :2], [[0.05 / z2, x / z2], [-x / z2, 0.05 / z2]], rtol=1e-14)


@given(st.floats(0.01, 1), st.floats(0, 1e-4), st.floats(1e-6, 1e-4), st.floats(1e-6, 1e-4))
def test_coupling_blocks_differ_by_capacitance_ratio(r, l, ci, cj):
    ln = LineParams(1, 2, r, l)
    a_ij = model.build_coupling_block(ln, ci, W0)
    a_ji = model.build_coupling_block(ln, cj, W0)
    np.testing.assert_allclose(a_ji * (cj / ci), a_ij, rtol=1e-13)


@given(dgu_params(), st.floats(0.01, 1), st.floats(0, 1e-4))
def test_coupling_block_sparsity(p, r, l):
    blk = model.augment_coupling(model.build_coupling_block(LineParams(1, 2, r, l), p.c_t, W0))
    mask = np.zeros((6, 6), bool)
    mask[:2, :2] = True
    assert np.all(blk[~mask] == 0)


def test_augmented_rows_and_reference_input():
    aug = model.augmented_dgu(DguParams(1, 0.2, 1.8e-3, 25e-6), W0)
    np.testing.assert_array_equal(aug.a_hat[4], [-1, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(aug.a_hat[5], [0, -1, 0, 0, 0, 0])
    np.testing.assert_array_equal(aug.m_hat[4:, 2:], np.eye(2))
    np.testing.assert_array_equal(aug.b_hat[4:], 0)


# --- global assembly ----------------------------------------------------------


def test_single_dgu_has_no_coupling():
    p = DguParams(1, 0.2, 1.8e-3, 25e-6)
    gm = model.assemble_global(GridSpec((p,)))
    np.testing.assert_array_equal(gm.a_xi, 0)
    np.testing.assert_array_equal(gm.a_c, 0)
    np.testing.assert_array_equal(gm.a_hat, model.augmented_dgu(p, W0).a_hat)


def test_two_dgus_one_line_coupling_blocks():
    grid = GridSpec((DguParams(1, 0.2, 1.8e-3, 25e-6), DguParams(2, 0.3, 2e-3, 30e-6)), (LineParams(1, 2, 0.1, 1e-5),))
    gm = model.assemble_global(grid)
    nonzero = [(p, q) for p in range(2) for q in range(2) if np.any(gm.a_c[6 * p : 6 * p + 6, 6 * q : 6 * q + 6])]
    assert nonzero == [(0, 1), (1, 0)]
    for p, q in nonzero:
        assert np.linalg.matrix_rank(gm.a_c[6 * p : 6 * p + 6, 6 * q : 6 * q + 6]) == 2


@given(random_grids())
def test_coupling_block_rows_sum_to_zero(grid):
    gm = model.assemble_global(grid)
    coupling = gm.a_xi + gm.a_c
    n = grid.n
    for p in range(n):
        rows = coupling[6 * p : 6 * p + 2]
        total = sum(rows[:, 6 * q : 6 * q + 6] for q in range(n))
        scale = max(np.abs(rows).max(), 1.0)
        assert np.abs(total).max() <= 1e-12 * scale


@given(random_grids(), st.integers(0, 2**32 - 1))
def test_permutation_equivariance(grid, seed):
    rng = np.random.default_rng(seed)
    ids = grid.ids
    new_ids = [int(i) for i in rng.permutation(ids)]
    mapping = dict(zip(ids, new_ids))
    relabeled = GridSpec(
        tuple(DguParams(mapping[d.id], d.r_t, d.l_t, d.c_t) for d in grid.dgus),
        tuple(LineParams(mapping[ln.a], mapping[ln.b], ln.r, ln.l) for ln in grid.lines),
        grid.omega0,
        grid.sigma_bar,
    )
    a = model.assemble_global(grid).a_hat
    b = model.assemble_global(relabeled).a_hat
    # Position p of the relabeled grid holds old DGU inverse[relabeled.ids[p]].
    inverse = {v: k for k, v in mapping.items()}
    t = model.block_permutation(ids, [inverse[i] for i in relabeled.ids])
    # Line order changes with the labels, so diagonal sums may differ in rounding.
    np.testing.assert_allclose(b, t @ a @ t.T, rtol=0, atol=1e-13 * np.abs(a).max())


def _phasor_rhs(grid, x, u, loads, refs):
    """Independent per-DGU evaluation with complex phasors and line admittances."""
    w0 = grid.omega0
    out = {}
    for i in grid.ids:
        p = grid.dgu(i)
        v = complex(*x[i][0:2])
        it = complex(*x[i][2:4])
        vt = complex(*u[i])
        il = complex(*loads[i])
        line_current = 0j
        for ln in grid.incident(i):
            j = ln.other(i)
            vj = complex(*x[j][0:2])
            line_current += (vj - v) / complex(ln.r, w0 * ln.l)
        dv = (it - il + line_current) / p.c_t - 1j * w0 * v
        di = (vt - p.r_t * it - v) / p.l_t - 1j * w0 * it
        dz = complex(*refs[i]) - v
        out[i] = np.array([dv.real, dv.imag, di.real, di.imag, dz.real, dz.imag])
    return out


@given(random_grids(), st.integers(0, 2**32 - 1))
def test_state_derivative_matches_phasor_oracle(grid, seed):
    rng = np.random.default_rng(seed)
    x = {i: rng.normal(size=6) for i in grid.ids}
    u = {i: rng.normal(size=2) for i in grid.ids}
    loads = {i: rng.normal(size=2) for i in grid.ids}
    refs = {i: rng.normal(size=2) for i in grid.ids}
    gm = model.assemble_global(grid)
    xs = np.concatenate([x[i] for i in grid.ids])
    us = np.concatenate([u[i] for i in grid.ids])
    ds = np.concatenate([np.concatenate([loads[i], refs[i]]) for i in grid.ids])
    terms = [gm.a_hat @ xs, gm.b_hat @ us, gm.m_hat @ ds]
    got = sum(terms)
    ref = _phasor_rhs(grid, x, u, loads, refs)
    want = np.concatenate([ref[i] for i in grid.ids])
    scale = max(np.abs(t).max() for t in terms)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12 * scale)


def test_closed_loop_requires_gains():
    gm = model.assemble_global(GridSpec((DguParams(1, 1, 1, 1),)))
    with pytest.raises(model.ShapeError):
        gm.closed_loop


def test_gain_shape_is_checked():
    grid = GridSpec((DguParams(1, 1, 1, 1),))
    with pytest.raises(model.ShapeError):
        model.assemble_global(grid, {1: np.zeros((2, 4))})
    with pytest.raises(model.ShapeError):
        model.assemble_global(grid, {})


# --- topology -----------------------------------------------------------------


def _path(n):
    dgus = tuple(DguParams(i, 0.2, 1.8e-3, 25e-6) for i in range(1, n + 1))
    lines = tuple(LineParams(i, i + 1, 0.1, 1e-5) for i in range(1, n))
    return GridSpec(dgus, lines)


def test_plug_out_leaf_keeps_path_connected():
    grid = model.mutate_topology(_path(5), model.PlugOut(5))
    assert grid.ids == [1, 2, 3, 4]
    assert grid.is_connected()


def test_benchmark_trips_split_into_two_islands(benchmark_parts):
    _, _, _, full, _ = benchmark_parts
    g = model.mutate_topology(full, model.LineTrip(3, 7))
    g = model.mutate_topology(g, model.LineTrip(8, 10))
    assert g.components() == [[1, 2, 3, 4, 5, 6, 10], [7, 8, 9]]


def test_benchmark_plug_in_adds_two_lines(benchmark_parts):
    grid0, dgu10, lines10, full, _ = benchmark_parts
    assert {ln.key for ln in lines10} == {(2, 10), (8, 10)}
    assert len(full.lines) == len(grid0.lines) + 2


def test_mutation_leaves_original_untouched():
    grid = _path(3)
    model.mutate_topology(grid, model.LineTrip(1, 2))
    assert len(grid.lines) == 2


@pytest.mark.parametrize(
    "change",
    [
        model.PlugIn(DguParams(1, 1, 1, 1)),
        model.PlugIn(DguParams(9, 1, 1, 1), (LineParams(9, 7, 1.0),)),
        model.PlugIn(DguParams(9, 1, 1, 1), (LineParams(1, 2, 1.0),)),
        model.PlugOut(9),
        model.LineTrip(1, 3),
    ],
)
def test_invalid_mutations(change):
    with pytest.raises(model.TopologyError):
        model.mutate_topology(_path(3), change)


# --- validation ---------------------------------------------------------------


@pytest.mark.parametrize("bad", [dict(r_t=0), dict(l_t=-1), dict(c_t=0), dict(c_t=float("nan"))])
def test_nonpositive_dgu_params_rejected(bad):
    kw = dict(r_t=1.0, l_t=1.0, c_t=1.0) | bad
    with pytest.raises(model.ParameterError):
        DguParams(3, **kw)


def test_line_validation():
    with pytest.raises(model.TopologyError):
        LineParams(2, 2, 1.0)
    with pytest.raises(model.ParameterError):
        LineParams(1, 2, -1.0)
    with pytest.raises(model.DegenerateLineError):
        GridSpec((DguParams(1, 1, 1, 1), DguParams(2, 1, 1, 1)), (LineParams(1, 2, 0.0, 0.0),))
    assert LineParams(5, 2, 1.0).key == (2, 5)


def test_grid_validation():
    p = DguParams(1, 1, 1, 1)
    with pytest.raises(model.TopologyError):
        GridSpec((p, p))
    with pytest.raises(model.TopologyError):
        GridSpec((p,), (LineParams(1, 2, 1.0),))
    with pytest.raises(model.ParameterError):
        GridSpec((p,), sigma_bar=0)


def test_components_of_disconnected_grid():
    g = _path(4)
    g = model.mutate_topology(g, model.LineTrip(2, 3))
    assert g.components() == [[1, 2], [3, 4]]
    assert not g.is_connected()
    assert g.subgrid([3, 4]).lines == (g.line(3, 4),)


@given(random_grids())
def test_grid_dict_round_trip(grid):
    assert model.grid_from_dict(model.grid_to_dict(grid)) == grid


def test_malformed_grid_dict():
    with pytest.raises(model.ParameterError):
        model.grid_from_dict({"dgus": [{"id": 1}]})
