"""Small dense LMI programs and a log-det barrier interior-point solver.

A program is ``min c^T z`` subject to affine symmetric-matrix constraints
``F0 + sum_k z_k F_k  (sense)  0`` and optional box bounds on ``z``.  Blocks are
expected to be small (a handful of rows); the solver forms the full Newton
system in every iteration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

SENSES = (">=", "<=", ">", "<")
# cap on step doubling in phase I, whose barrier can be unbounded below
PHASE_ONE_MAX_STEP = 1024.0


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class LmiBlock:
    """``f0 + sum_k z[k] * fk[k]  sense  0``; ``fk`` has shape ``(n_vars, n, n)``."""

    f0: np.ndarray
    fk: np.ndarray
    sense: str = ">="
    name: str = ""

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=float)
        fk = np.asarray(self.fk, dtype=float)
        if self.sense not in SENSES:
            raise ValueError(f"block {self.name!r}: unknown sense {self.sense!r}")
        if f0.ndim != 2 or f0.shape[0] != f0.shape[1]:
            raise ValueError(f"block {self.name!r}: F0 must be square, got {f0.shape}")
        if fk.ndim != 3 or fk.shape[1:] != f0.shape:
            raise ValueError(f"block {self.name!r}: F_k must have shape (n_vars, {f0.shape[0]}, {f0.shape[0]}), got {fk.shape}")
        if not np.allclose(f0, f0.T, atol=1e-12 * (1 + np.abs(f0).max())):
            raise ValueError(f"block {self.name!r}: F0 is not symmetric")
        if not np.allclose(fk, fk.transpose(0, 2, 1), atol=1e-12 * (1 + np.abs(fk).max())):
            raise ValueError(f"block {self.name!r}: some F_k is not symmetric")
        object.__setattr__(self, "f0", f0)
        object.__setattr__(self, "fk", fk)

    @property
    def dim(self) -> int:
        return self.f0.shape[0]

    @property
    def strict(self) -> bool:
        return self.sense in (">", "<")

    def value(self, z: np.ndarray) -> np.ndarray:
        return self.f0 + np.tensordot(z, self.fk, axes=1)

    def slack(self, z: np.ndarray) -> np.ndarray:
        """The matrix that must be PSD: ``F(z)`` for ``>=``, ``-F(z)`` for ``<=``."""
        v = self.value(z)
        return v if self.sense in (">=", ">") else -v


@dataclass(frozen=True)
class LmiProgram:
    n_vars: int
    cost: np.ndarray
    blocks: tuple[LmiBlock, ...]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self):
        cost = np.asarray(self.cost, dtype=float)
        if cost.shape != (self.n_vars,):
            raise ValueError(f"cost has shape {cost.shape}, expected ({self.n_vars},)")
        for b in self.blocks:
            if b.fk.shape[0] != self.n_vars:
                raise ValueError(f"block {b.name!r} has {b.fk.shape[0]} coefficient matrices, expected {self.n_vars}")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "blocks", tuple(self.blocks))
        for attr in ("lower", "upper"):
            v = getattr(self, attr)
            if v is not None:
                v = np.broadcast_to(np.asarray(v, dtype=float), (self.n_vars,)).copy()
                object.__setattr__(self, attr, v)


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    strict_margin: float = 1e-9
    max_iter: int = 200
    mu: float = 20.0
    balance: bool = True


@dataclass
class LmiSolution:
    z: np.ndarray
    status: Status
    objective: float
    worst_block_mineig: float
    iterations: int = 0
    gap: float = np.inf
    block_mineigs: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class LmiBackend(Protocol):
    def __call__(self, prog: LmiProgram, opts: SolverOptions | None = None, z0: np.ndarray | None = None) -> LmiSolution: ...


# --- barrier internals ----------------------------------------------------------


class _Barrier:
    """Standardized constraint ``G0 + sum z_k G_k > 0`` with every block stacked on one diagonal."""

    def __init__(self, g0: np.ndarray, gk: np.ndarray):
        self.g0, self.gk = g0, gk
        self.d = g0.shape[0]
        self.m = self.d
        self._flat = gk.reshape(gk.shape[0], -1)

    def slack(self, z):
        return self.g0 + (z @ self._flat).reshape(self.d, self.d)

    def chol(self, z):
        """Cholesky factor of the stacked slack, or ``None`` if ``z`` is not strictly interior."""
        try:
            return np.linalg.cholesky(self.slack(z))
        except np.linalg.LinAlgError:
            return None

    def value(self, z):
        f = self.chol(z)
        if f is None:
            return np.inf
        return -2.0 * np.log(np.diag(f)).sum()

    def derivatives(self, z, f):
        li = np.linalg.inv(f)
        mk = np.matmul(np.matmul(li, self.gk), li.T)
        flat = mk.reshape(mk.shape[0], -1)
        grad = -np.trace(mk, axis1=1, axis2=2)
        hess = flat @ flat.T
        return grad, hess


def _stack(g0: list[np.ndarray], gk: list[np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    dims = [g.shape[0] for g in g0]
    d = sum(dims)
    big0 = np.zeros((d, d))
    bigk = np.zeros((n, d, d))
    o = 0
    for a, b, k in zip(g0, gk, dims):
        big0[o : o + k, o : o + k] = a
        bigk[:, o : o + k, o : o + k] = b
        o += k
    return big0, bigk


def _balancers(prog: LmiProgram, z: np.ndarray) -> list[np.ndarray] | None:
    """Congruences ``T`` with ``T S(z) T^T = I`` for every block slack, if ``z`` is interior."""
    out = []
    for b in prog.blocks:
        try:
            f = np.linalg.cholesky(b.slack(z))
        except np.linalg.LinAlgError:
            return None
        out.append(np.linalg.inv(f))
    return out


def _standardize(prog: LmiProgram, opts: SolverOptions, balancers=None):
    g0, gk = [], []
    for k, b in enumerate(prog.blocks):
        sign = 1.0 if b.sense in (">=", ">") else -1.0
        s0, sk = sign * b.f0, sign * b.fk
        if balancers is not None:
            t = balancers[k]
            s0 = t @ s0 @ t.T
            sk = np.matmul(np.matmul(t, sk), t.T)
            s0 = (s0 + s0.T) / 2
            sk = (sk + sk.transpose(0, 2, 1)) / 2
        if b.strict:
            scale = 1.0 + np.linalg.norm(s0, 2)
            s0 = s0 - opts.strict_margin * scale * np.eye(b.dim)
        g0.append(s0)
        gk.append(sk)
    n = prog.n_vars
    # box bounds become 1x1 blocks
    for bound, sign in ((prog.lower, 1.0), (prog.upper, -1.0)):
        if bound is None:
            continue
        for k in np.flatnonzero(np.isfinite(bound)):
            row = np.zeros((n, 1, 1))
            row[k] = sign
            g0.append(np.array([[-sign * bound[k]]]))
            gk.append(row)
    return _stack(g0, gk, n)


def _newton_solve(hess, rhs):
    d = np.sqrt(np.maximum(np.diag(hess), 1e-300))
    hs = hess / np.outer(d, d)
    try:
        c = np.linalg.cholesky(hs)
        y = np.linalg.solve(c.T, np.linalg.solve(c, rhs / d))
    except np.linalg.LinAlgError:
        y = np.linalg.lstsq(hs, rhs / d, rcond=None)[0]
    return y / d


def _center(bar: _Barrier, c, z, t, budget, stop=None, max_step=np.inf):
    """Damped Newton on ``t c^T z + phi(z)``; returns ``(z, iterations, converged)``."""
    used = 0
    prev = np.inf
    while used < budget:
        ch = bar.chol(z)
        grad, hess = bar.derivatives(z, ch)
        g = t * c + grad
        dz = -_newton_solve(hess, g)
        lam2 = float(-g @ dz)
        used += 1
        if lam2 / 2.0 <= 1e-10:
            return z, used, True
        # a small decrement that no longer shrinks is at the rounding floor
        if lam2 < 1e-4 and lam2 > 0.5 * prev:
            return z, used, True
        prev = lam2
        # compare merit values differentially: t c^T z can dwarf the decrease
        phi0 = bar.value(z)
        ctd = t * (c @ dz)
        merit = lambda st: st * ctd + (bar.value(z + st * dz) - phi0)
        step = 1.0
        while step > 1e-14:
            fn = merit(step)
            if np.isfinite(fn):
                if lam2 < 0.25:
                    break
                if fn <= -0.25 * step * lam2:
                    break
            step *= 0.5
        else:
            return z, used, False
        if step == 1.0 and lam2 >= 0.25:
            # far from the centre the minimizer can lie many Newton steps away
            while step < max_step:
                fn2 = merit(2.0 * step)
                if not (np.isfinite(fn2) and fn2 < fn):
                    break
                step, fn = 2.0 * step, fn2
        zn = z + step * dz
        z = zn
        if stop is not None and stop(z):
            return z, used, True
    return z, used, False


def _phase_one(prog: LmiProgram, bar: _Barrier, z0: np.ndarray, opts: SolverOptions, budget: int):
    """Find a strictly feasible point by minimizing a common slack ``s``."""
    n = prog.n_vars
    worst = min(0.0, float(np.linalg.eigvalsh(bar.slack(z0))[0]))
    scale = 1.0 + np.abs(bar.g0).max()
    s0 = -worst + 0.1 * scale
    # s is appended as the last variable; an upper cap keeps the centering problem bounded
    d = bar.d
    g0 = np.zeros((d + 1, d + 1))
    g0[:d, :d] = bar.g0
    g0[d, d] = 10.0 * s0 + scale
    gk = np.zeros((n + 1, d + 1, d + 1))
    gk[:n, :d, :d] = bar.gk
    gk[n, :d, :d] = np.eye(d)
    gk[n, d, d] = -1.0
    aux = _Barrier(g0, gk)
    c = np.zeros(n + 1)
    c[n] = 1.0
    w = np.concatenate([z0, [s0]])
    t = 1.0 / s0
    used = 0
    feasible = lambda w: w[n] < 0 and bar.chol(w[:n]) is not None
    while used < budget:
        w, k, _ = _center(aux, c, w, t, budget - used, stop=feasible, max_step=PHASE_ONE_MAX_STEP)
        used += k
        if feasible(w):
            return w[:n], used, True
        if aux.m / t < 1e-3 * opts.feas_tol * scale and w[n] > 0:
            return w[:n], used, False
        t *= opts.mu
    return w[:n], used, False


def _report(prog: LmiProgram, z: np.ndarray, status: Status, iters: int, gap: float) -> LmiSolution:
    mins = {}
    worst = np.inf
    for k, b in enumerate(prog.blocks):
        e = float(np.linalg.eigvalsh(b.slack(z))[0])
        mins[b.name or f"block{k}"] = e
        worst = min(worst, e)
    return LmiSolution(z, status, float(prog.cost @ z), float(worst), iters, gap, mins)


def solve(prog: LmiProgram, opts: SolverOptions | None = None, z0: np.ndarray | None = None) -> LmiSolution:
    """Minimize ``prog`` with a log-det barrier method.

    ``z0`` is an optional starting point; when it is not strictly feasible a
    phase-I problem is solved first.  The returned point is always strictly
    interior when the status is ``Optimal``.  ``Infeasible`` means phase I
    converged to a positive slack, a heuristic rather than a dual certificate.
    """
    opts = opts or SolverOptions()
    z = np.zeros(prog.n_vars) if z0 is None else np.array(z0, dtype=float)
    balancers = _balancers(prog, z) if opts.balance else None
    bar = _Barrier(*_standardize(prog, opts, balancers))
    iters = 0
    if bar.chol(z) is None:
        z, iters, ok = _phase_one(prog, bar, z, opts, opts.max_iter)
        if not ok:
            status = Status.MAX_ITER if iters >= opts.max_iter else Status.INFEASIBLE
            return _report(prog, z, status, iters, np.inf)
    c = prog.cost
    if not np.any(c):
        return _report(prog, z, Status.OPTIMAL, iters, 0.0)
    grad, hess = bar.derivatives(z, bar.chol(z))
    # start where the barrier gap bound m/t is comparable to the objective
    ref = max(abs(c @ z), 1e-6 * np.abs(c * z).sum())
    t = float(bar.m / (ref if ref > 0 else np.abs(c).sum()))
    while True:
        z, k, _ = _center(bar, c, z, t, opts.max_iter - iters)
        iters += k
        gap = bar.m / t
        if gap <= opts.gap_tol * max(1.0, abs(c @ z)):
            return _report(prog, z, Status.OPTIMAL, iters, gap)
        if iters >= opts.max_iter:
            return _report(prog, z, Status.MAX_ITER, iters, gap)
        t *= opts.mu


def check_solution(prog: LmiProgram, z: np.ndarray, opts: SolverOptions | None = None) -> bool:
    """Re-substitute ``z`` and test every block against the tolerances."""
    opts = opts or SolverOptions()
    for b in prog.blocks:
        e = np.linalg.eigvalsh(b.slack(z))[0]
        scale = 1.0 + np.linalg.norm(b.f0, 2)
        if e < -opts.feas_tol * scale:
            return False
        if b.strict and e <= 0:
            return False
    return True


def solve_cvxpy(prog: LmiProgram, opts: SolverOptions | None = None, z0: np.ndarray | None = None) -> LmiSolution:
    """Adapter running the same program through cvxpy.

    Clarabel is used when installed, otherwise cvxpy's default solver.  Badly
    scaled programs (raw SI units) are beyond what these solvers handle.
    """
    import cvxpy as cp

    opts = opts or SolverOptions()
    z = cp.Variable(prog.n_vars)
    cons = []
    for b in prog.blocks:
        expr = b.f0 + sum(z[k] * b.fk[k] for k in range(prog.n_vars))
        expr = (expr + expr.T) / 2
        margin = opts.strict_margin * (1.0 + np.linalg.norm(b.f0, 2)) if b.strict else 0.0
        eye = np.eye(b.dim)
        cons.append(expr >> margin * eye if b.sense in (">=", ">") else -expr >> margin * eye)
    if prog.lower is not None:
        fin = np.isfinite(prog.lower)
        cons.append(z[fin] >= prog.lower[fin])
    if prog.upper is not None:
        fin = np.isfinite(prog.upper)
        cons.append(z[fin] <= prog.upper[fin])
    problem = cp.Problem(cp.Minimize(prog.cost @ z), cons)
    solver = cp.CLARABEL if cp.CLARABEL in cp.installed_solvers() else None
    problem.solve(solver=solver)
    if problem.status in ("infeasible", "infeasible_inaccurate"):
        return _report(prog, np.zeros(prog.n_vars), Status.INFEASIBLE, 0, np.inf)
    zv = np.asarray(z.value, dtype=float)
    status = Status.OPTIMAL if problem.status == "optimal" else Status.MAX_ITER
    return _report(prog, zv, status, 0, np.nan)


def symmetric_basis(n: int) -> list[np.ndarray]:
    """Basis ``E_ij`` (i <= j) of n x n symmetric matrices, row-major upper triangle."""
    out = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0
            out.append(e)
    return out


def full_basis(rows: int, cols: int) -> list[np.ndarray]:
    out = []
    for i in range(rows):
        for j in range(cols):
            e = np.zeros((rows, cols))
            e[i, j] = 1.0
            out.append(e)
    return out


def block_from_terms(const: np.ndarray, terms: Sequence[np.ndarray], n_vars: int, sense: str, name: str) -> LmiBlock:
    """Build a block from a constant and one coefficient matrix per variable."""
    fk = np.zeros((n_vars,) + const.shape)
    for k, t in enumerate(terms):
        fk[k] = t
    return LmiBlock(const, fk, sense, name)
