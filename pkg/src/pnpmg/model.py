"""dq-frame models of DGUs, power lines and the assembled microgrid.

State ordering inside one augmented DGU is ``[V_d, V_q, It_d, It_q, v_d, v_q]``
(PCC voltage, filter current, integrator of the voltage tracking error).
Globally, DGUs are stacked in ascending id order, six states each.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

N_STATE = 4
N_AUG = 6
N_IN = 2

# J acts as multiplication by -i on a dq pair written as a real 2-vector.
J2 = np.array([[0.0, 1.0], [-1.0, 0.0]])
I2 = np.eye(2)


class ParameterError(ValueError):
    """An electrical parameter lies outside its physical domain."""


class DegenerateLineError(ValueError):
    """A line has zero impedance magnitude."""


class TopologyError(ValueError):
    """A topology change or grid description is inconsistent."""


class ShapeError(ValueError):
    """A matrix argument has the wrong shape."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DguParams:
    """Converter filter parameters of one DGU (SI units)."""

    id: int
    r_t: float
    l_t: float
    c_t: float

    def __post_init__(self):
        for name in ("r_t", "l_t", "c_t"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ParameterError(f"DGU {self.id}: {name}={v!r} must be positive")


@dataclass(frozen=True)
class LineParams:
    """A three-phase power line between DGUs ``a`` and ``b``.

    Endpoints are normalized so that ``a < b``; the same object describes the
    line as seen from either end.
    """

    a: int
    b: int
    r: float
    l: float = 0.0

    def __post_init__(self):
        if self.a == self.b:
            raise TopologyError(f"self-loop on DGU {self.a}")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if not np.isfinite(self.r) or self.r < 0 or not np.isfinite(self.l) or self.l < 0:
            raise ParameterError(f"line {self.a}-{self.b}: r={self.r!r}, l={self.l!r}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.a, self.b)

    def other(self, i: int) -> int:
        if i == self.a:
            return self.b
        if i == self.b:
            return self.a
        raise TopologyError(f"DGU {i} is not an endpoint of line {self.a}-{self.b}")

    def reactance(self, omega0: float) -> float:
        return omega0 * self.l

    def z_squared(self, omega0: float) -> float:
        z2 = self.r**2 + self.reactance(omega0) ** 2
        if z2 <= 0.0:
            raise DegenerateLineError(f"line {self.a}-{self.b} has zero impedance")
        return z2

    def conductance(self, omega0: float) -> float:
        """``R / Z**2``, the real part of the line admittance."""
        return self.r / self.z_squared(omega0)

    def susceptance(self, omega0: float) -> float:
        """``X / Z**2`` (sign convention: admittance is ``r_tilde - i x_tilde``)."""
        return self.reactance(omega0) / self.z_squared(omega0)


@dataclass(frozen=True)
class GridSpec:
    """The electric graph: DGUs, lines, rotating-frame frequency and sigma_bar."""

    dgus: tuple[DguParams, ...]
    lines: tuple[LineParams, ...] = ()
    omega0: float = 2 * np.pi * 50
    sigma_bar: float = 1e4
    _index: Mapping[int, DguParams] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dgus = tuple(sorted(self.dgus, key=lambda d: d.id))
        ids = [d.id for d in dgus]
        if len(set(ids)) != len(ids):
            raise TopologyError(f"duplicate DGU ids in {ids}")
        lines = tuple(sorted(self.lines, key=lambda ln: ln.key))
        keys = [ln.key for ln in lines]
        if len(set(keys)) != len(keys):
            raise TopologyError("at most one line per DGU pair")
        known = set(ids)
        for ln in lines:
            if ln.a not in known or ln.b not in known:
                raise TopologyError(f"line {ln.a}-{ln.b} references an unknown DGU")
        if not self.sigma_bar > 0:
            raise ParameterError(f"sigma_bar={self.sigma_bar!r} must be positive")
        if not self.omega0 >= 0:
            raise ParameterError(f"omega0={self.omega0!r} must be nonnegative")
        for ln in lines:
            ln.z_squared(self.omega0)
        object.__setattr__(self, "dgus", dgus)
        object.__setattr__(self, "lines", lines)
        object.__setattr__(self, "_index", {d.id: d for d in dgus})

    @property
    def ids(self) -> list[int]:
        return [d.id for d in self.dgus]

    @property
    def n(self) -> int:
        return len(self.dgus)

    def dgu(self, i: int) -> DguParams:
        try:
            return self._index[i]
        except KeyError:
            raise TopologyError(f"unknown DGU {i}") from None

    def position(self, i: int) -> int:
        return self.ids.index(i)

    def line(self, a: int, b: int) -> LineParams:
        key = (min(a, b), max(a, b))
        for ln in self.lines:
            if ln.key == key:
                return ln
        raise TopologyError(f"no line {a}-{b}")

    def incident(self, i: int) -> list[LineParams]:
        return [ln for ln in self.lines if i in ln.key]

    def neighbors(self, i: int) -> list[int]:
        return sorted(ln.other(i) for ln in self.incident(i))

    def components(self) -> list[list[int]]:
        """Connected components of the electric graph, each sorted, ordered by smallest id."""
        ids = self.ids
        if not ids:
            return []
        pos = {i: k for k, i in enumerate(ids)}
        rows = [pos[ln.a] for ln in self.lines]
        cols = [pos[ln.b] for ln in self.lines]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
        _, labels = connected_components(adj, directed=False)
        groups: dict[int, list[int]] = {}
        for i, lab in zip(ids, labels):
            groups.setdefault(int(lab), []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])

    def is_connected(self) -> bool:
        return len(self.components()) <= 1

    def subgrid(self, ids: Iterable[int]) -> "GridSpec":
        keep = set(ids)
        return GridSpec(
            tuple(d for d in self.dgus if d.id in keep),
            tuple(ln for ln in self.lines if ln.a in keep and ln.b in keep),
            self.omega0,
            self.sigma_bar,
        )


@dataclass(frozen=True)
class LocalMatrices:
    a_ii: np.ndarray
    b: np.ndarray
    m: np.ndarray
    c: np.ndarray
    h: np.ndarray


@dataclass(frozen=True)
class AugmentedDgu:
    a_hat: np.ndarray
    b_hat: np.ndarray
    m_hat: np.ndarray
    c_hat: np.ndarray
    h_hat: np.ndarray


def build_local_matrices(params: DguParams, omega0: float) -> LocalMatrices:
    r, l, c = params.r_t, params.l_t, params.c_t
    a = np.zeros((4, 4))
    a[:2, :2] = omega0 * J2
    a[:2, 2:] = I2 / c
    a[2:, :2] = -I2 / l
    a[2:, 2:] = -r / l * I2 + omega0 * J2
    b = np.zeros((4, 2))
    b[2:, :] = I2 / l
    m = np.zeros((4, 2))
    m[:2, :] = -I2 / c
    h = np.zeros((2, 4))
    h[:, :2] = I2
    return LocalMatrices(_frozen(a), _frozen(b), _frozen(m), _frozen(np.eye(4)), _frozen(h))


def filter_block(params: DguParams, omega0: float) -> np.ndarray:
    """The 2x2 current-dynamics block ``[[-R/L, w0], [-w0, -R/L]]``."""
    return -params.r_t / params.l_t * I2 + omega0 * J2


def build_coupling_block(line: LineParams, c_ti: float, omega0: float) -> np.ndarray:
    """4x4 coupling matrix of the line as it acts on the DGU with capacitance ``c_ti``."""
    rt = line.conductance(omega0)
    xt = line.susceptance(omega0)
    out = np.zeros((4, 4))
    out[:2, :2] = np.array([[rt, xt], [-xt, rt]]) / c_ti
    return out


def augment(local: LocalMatrices) -> AugmentedDgu:
    a = np.zeros((6, 6))
    a[:4, :4] = local.a_ii
    a[4:, :4] = -local.h @ local.c
    b = np.zeros((6, 2))
    b[:4] = local.b
    m = np.zeros((6, 4))
    m[:4, :2] = local.m
    m[4:, 2:] = I2
    c = np.eye(6)
    c[:4, :4] = local.c
    h = np.zeros((2, 6))
    h[:, :4] = local.h
    return AugmentedDgu(_frozen(a), _frozen(b), _frozen(m), _frozen(c), _frozen(h))


def augment_coupling(a_ij: np.ndarray) -> np.ndarray:
    out = np.zeros((6, 6))
    out[:4, :4] = a_ij
    return out


def augmented_dgu(params: DguParams, omega0: float) -> AugmentedDgu:
    return augment(build_local_matrices(params, omega0))


@dataclass(frozen=True)
class GlobalModel:
    """Stacked open-loop matrices; ``a_hat = a_d + a_xi + a_c``."""

    ordering: tuple[int, ...]
    a_d: np.ndarray
    a_xi: np.ndarray
    a_c: np.ndarray
    b_hat: np.ndarray
    m_hat: np.ndarray
    k: np.ndarray | None = None

    @property
    def a_hat(self) -> np.ndarray:
        return self.a_d + self.a_xi + self.a_c

    @property
    def closed_loop(self) -> np.ndarray:
        if self.k is None:
            raise ShapeError("no gains were supplied to assemble_global")
        return self.a_hat + self.b_hat @ self.k

    def block(self, i: int) -> slice:
        p = self.ordering.index(i)
        return slice(N_AUG * p, N_AUG * (p + 1))


def assemble_global(grid: GridSpec, gains: Mapping[int, np.ndarray] | None = None) -> GlobalModel:
    ids = grid.ids
    n = len(ids)
    pos = {i: p for p, i in enumerate(ids)}
    a_d = np.zeros((6 * n, 6 * n))
    a_xi = np.zeros_like(a_d)
    a_c = np.zeros_like(a_d)
    b = np.zeros((6 * n, 2 * n))
    m = np.zeros((6 * n, 4 * n))
    for p, i in enumerate(ids):
        aug = augmented_dgu(grid.dgu(i), grid.omega0)
        s = slice(6 * p, 6 * p + 6)
        a_d[s, s] = aug.a_hat
        b[s, 2 * p : 2 * p + 2] = aug.b_hat
        m[s, 4 * p : 4 * p + 4] = aug.m_hat
    for ln in grid.lines:
        for i, j in ((ln.a, ln.b), (ln.b, ln.a)):
            a_ij = augment_coupling(build_coupling_block(ln, grid.dgu(i).c_t, grid.omega0))
            si = slice(6 * pos[i], 6 * pos[i] + 6)
            sj = slice(6 * pos[j], 6 * pos[j] + 6)
            a_c[si, sj] += a_ij
            a_xi[si, si] -= a_ij
    k = None
    if gains is not None:
        k = np.zeros((2 * n, 6 * n))
        for p, i in enumerate(ids):
            try:
                ki = np.asarray(gains[i], dtype=float)
            except KeyError:
                raise ShapeError(f"no gain for DGU {i}") from None
            if ki.shape != (2, 6):
                raise ShapeError(f"gain of DGU {i} has shape {ki.shape}, expected (2, 6)")
            k[2 * p : 2 * p + 2, 6 * p : 6 * p + 6] = ki
    return GlobalModel(tuple(ids), a_d, a_xi, a_c, b, m, k)


# --- topology mutations -------------------------------------------------------


@dataclass(frozen=True)
class PlugIn:
    dgu: DguParams
    lines: tuple[LineParams, ...] = ()


@dataclass(frozen=True)
class PlugOut:
    dgu: int


@dataclass(frozen=True)
class LineTrip:
    a: int
    b: int


@dataclass(frozen=True)
class LineAdd:
    line: LineParams


TopologyChange = Union[PlugIn, PlugOut, LineTrip, LineAdd]


def mutate_topology(grid: GridSpec, change: TopologyChange) -> GridSpec:
    """Return a new grid with ``change`` applied; ``grid`` is left untouched."""
    if isinstance(change, PlugIn):
        new_id = change.dgu.id
        if new_id in grid.ids:
            raise TopologyError(f"DGU {new_id} is already connected")
        for ln in change.lines:
            if new_id not in ln.key:
                raise TopologyError(f"line {ln.a}-{ln.b} does not touch DGU {new_id}")
            if ln.other(new_id) not in grid.ids:
                raise TopologyError(f"plug-in of DGU {new_id} references unknown DGU {ln.other(new_id)}")
        return GridSpec(grid.dgus + (change.dgu,), grid.lines + tuple(change.lines), grid.omega0, grid.sigma_bar)
    if isinstance(change, PlugOut):
        grid.dgu(change.dgu)
        return GridSpec(
            tuple(d for d in grid.dgus if d.id != change.dgu),
            tuple(ln for ln in grid.lines if change.dgu not in ln.key),
            grid.omega0,
            grid.sigma_bar,
        )
    if isinstance(change, LineTrip):
        gone = grid.line(change.a, change.b)
        return GridSpec(grid.dgus, tuple(ln for ln in grid.lines if ln is not gone), grid.omega0, grid.sigma_bar)
    if isinstance(change, LineAdd):
        return GridSpec(grid.dgus, grid.lines + (change.line,), grid.omega0, grid.sigma_bar)
    raise TypeError(f"unsupported topology change {change!r}")


def random_connected_grid(
    rng: np.random.Generator,
    n: int,
    *,
    r_t=(0.05, 0.5),
    l_t=(1e-3, 3e-3),
    c_t=(10e-6, 50e-6),
    line_r=(0.05, 0.8),
    line_l=(2e-6, 40e-6),
    extra_edges: float = 0.3,
    omega0: float = 2 * np.pi * 50,
    sigma_bar: float = 1e4,
) -> GridSpec:
    """Random spanning tree plus a fraction of extra chords."""
    dgus = tuple(
        DguParams(i + 1, rng.uniform(*r_t), rng.uniform(*l_t), rng.uniform(*c_t)) for i in range(n)
    )
    edges: set[tuple[int, int]] = set()
    for k in range(1, n):
        parent = int(rng.integers(0, k))
        edges.add((parent + 1, k + 1))
    n_extra = int(round(extra_edges * n))
    for _ in range(n_extra):
        a, b = rng.choice(n, size=2, replace=False) + 1
        edges.add((int(min(a, b)), int(max(a, b))))
    lines = tuple(LineParams(a, b, rng.uniform(*line_r), rng.uniform(*line_l)) for a, b in sorted(edges))
    return GridSpec(dgus, lines, omega0, sigma_bar)


def block_permutation(ordering: Sequence[int], new_ordering: Sequence[int], size: int = N_AUG) -> np.ndarray:
    """Permutation matrix ``T`` with ``x_new = T @ x_old`` for stacked blocks."""
    n = len(ordering)
    t = np.zeros((size * n, size * n))
    for p_new, i in enumerate(new_ordering):
        p_old = list(ordering).index(i)
        t[size * p_new : size * p_new + size, size * p_old : size * p_old + size] = np.eye(size)
    return t


# --- serialization ------------------------------------------------------------


def grid_to_dict(grid: GridSpec) -> dict:
    return {
        "omega0_hz": grid.omega0 / (2 * np.pi),
        "sigma_bar": grid.sigma_bar,
        "dgus": [{"id": d.id, "r_t": d.r_t, "l_t": d.l_t, "c_t": d.c_t} for d in grid.dgus],
        "lines": [{"a": ln.a, "b": ln.b, "r": ln.r, "l": ln.l} for ln in grid.lines],
    }


def grid_from_dict(data: Mapping) -> GridSpec:
    """Inverse of :func:`grid_to_dict`.

    The frequency is ``omega0_hz`` in Hz, or ``omega0`` in rad/s; missing
    frequency and ``sigma_bar`` take the defaults.
    """
    try:
        dgus = tuple(DguParams(int(d["id"]), float(d["r_t"]), float(d["l_t"]), float(d["c_t"])) for d in data["dgus"])
        lines = tuple(
            LineParams(int(ln["a"]), int(ln["b"]), float(ln["r"]), float(ln.get("l", 0.0))) for ln in data.get("lines", ())
        )
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed grid description: {exc!r}") from None
    kwargs = {}
    if "omega0_hz" in data:
        kwargs["omega0"] = 2 * np.pi * float(data["omega0_hz"])
    elif "omega0" in data:
        kwargs["omega0"] = float(data["omega0"])
    if "sigma_bar" in data:
        kwargs["sigma_bar"] = float(data["sigma_bar"])
    return GridSpec(dgus, lines, **kwargs)
