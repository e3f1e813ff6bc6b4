"""Global certification: Lyapunov assembly, coupling Laplacian, spectrum and kernel checks.

With ``P = diag(P_1, ..., P_N)`` the global Lyapunov matrix
``Q = A_cl^T P + P A_cl`` splits into

* ``a``: the local matrices ``Q_i``,
* ``b``: the diagonal line terms ``A_xi_i^T P_i + P_i A_xi_i``,
* ``c``: the off-diagonal line terms ``P_i A_ij + A_ji^T P_j``.

When every ``P_i`` has top-left block ``sigma_bar * C_ti * I2``, ``b + c`` lives only
on the voltage pairs and equals a graph Laplacian with edge weights
``2 * sigma_bar * R_ij / |Z_ij|^2``; it is therefore negative semidefinite
regardless of the line parameters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import I2, N_AUG, GridSpec, GlobalModel, assemble_global
from .synthesis import TOL_SEMIDEF, Controller, closed_loop, lyapunov_q, verify_local

TOL_ASSUMPTION = 1e-9
TOL_LAPLACIAN = 1e-12
TOL_LASALLE = 1e-9
TOL_IDENTITY = 1e-10


class AssumptionViolation(ValueError):
    """A controller's Lyapunov matrix does not have the shared eta/C ratio."""


class StructureError(ValueError):
    """The coupling part of the global Lyapunov matrix is not a Laplacian."""


class Verdict(str, enum.Enum):
    STABLE = "Stable"
    MARGINAL = "Marginal"
    UNSTABLE = "Unstable"


@dataclass(frozen=True)
class GlobalLyapunov:
    grid: GridSpec
    model: GlobalModel
    p_global: np.ndarray
    q_global: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    @property
    def ordering(self) -> tuple[int, ...]:
        return self.model.ordering

    @property
    def split_residual(self) -> float:
        """``||q - (a + b + c)|| / ||q||``."""
        nq = np.linalg.norm(self.q_global)
        return float(np.linalg.norm(self.q_global - (self.a + self.b + self.c)) / max(nq, 1e-300))


@dataclass(frozen=True)
class CouplingLaplacian:
    ordering: tuple[int, ...]
    l: np.ndarray
    m: np.ndarray
    g: np.ndarray
    eta_tilde: dict[tuple[int, int], float]
    residuals: dict[str, float]

    def kernel_dim(self, rtol: float = 1e-9) -> int:
        ev = np.linalg.eigvalsh(self.l)
        scale = max(np.abs(ev).max(), 1e-300)
        return int(np.sum(np.abs(ev) <= rtol * scale))


@dataclass(frozen=True)
class ComponentReport:
    ids: tuple[int, ...]
    spectrum: np.ndarray
    max_re: float
    stable: bool


@dataclass(frozen=True)
class StabilityReport:
    max_eig_q: float
    q_norm: float
    spectrum: np.ndarray
    components: tuple[ComponentReport, ...]
    verdict: Verdict
    residuals: dict[str, float] = field(default_factory=dict)
    local_failures: dict[int, tuple[str, ...]] = field(default_factory=dict)

    @property
    def max_re(self) -> float:
        return float(self.spectrum.real.max()) if self.spectrum.size else -np.inf

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "max_eig_q": self.max_eig_q,
            "q_norm": self.q_norm,
            "max_re": self.max_re,
            "spectrum": [[float(z.real), float(z.imag)] for z in self.spectrum],
            "components": [
                {"ids": list(c.ids), "max_re": float(c.max_re), "stable": bool(c.stable)} for c in self.components
            ],
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "local_failures": {str(k): list(v) for k, v in self.local_failures.items()},
        }


def _gains(controllers: Mapping[int, Controller]) -> dict[int, np.ndarray]:
    return {i: c.k for i, c in controllers.items()}


def build_global_lyapunov(
    grid: GridSpec, controllers: Mapping[int, Controller], check_assumption: bool = True
) -> GlobalLyapunov:
    """Assemble ``Q`` directly and through its three parts."""
    missing = [i for i in grid.ids if i not in controllers]
    if missing:
        raise KeyError(f"no controller for DGU(s) {missing}")
    if check_assumption:
        for i in grid.ids:
            eta = controllers[i].p[0, 0]
            want = grid.sigma_bar * grid.dgu(i).c_t
            if abs(eta - want) > TOL_ASSUMPTION * want:
                raise AssumptionViolation(
                    f"DGU {i}: eta = {eta:.6g} but sigma_bar * C_t = {want:.6g}"
                )
            if np.linalg.norm(controllers[i].p[:2, 2:]) > TOL_ASSUMPTION * np.linalg.norm(controllers[i].p):
                raise AssumptionViolation(f"DGU {i}: P couples voltages with the other states")
    model = assemble_global(grid, _gains(controllers))
    n = len(model.ordering)
    p = np.zeros((N_AUG * n, N_AUG * n))
    for i in model.ordering:
        s = model.block(i)
        p[s, s] = controllers[i].p
    acl = model.closed_loop
    q = acl.T @ p + p @ acl
    q = (q + q.T) / 2

    a = np.zeros_like(p)
    b = np.zeros_like(p)
    c = np.zeros_like(p)
    for i in model.ordering:
        s = model.block(i)
        f = model.a_d[s, s] + model.b_hat[s, :] @ model.k[:, s]
        a[s, s] = f.T @ p[s, s] + p[s, s] @ f
        axi = model.a_xi[s, s]
        b[s, s] = axi.T @ p[s, s] + p[s, s] @ axi
    for ln in grid.lines:
        for i, j in ((ln.a, ln.b), (ln.b, ln.a)):
            si, sj = model.block(i), model.block(j)
            c[si, sj] = p[si, si] @ model.a_c[si, sj] + model.a_c[sj, si].T @ p[sj, sj]
    return GlobalLyapunov(grid, model, p, q, a, b, c)


def extract_laplacian(gl: GlobalLyapunov) -> CouplingLaplacian:
    """Keep the voltage pairs of ``b + c`` and check that they form a Laplacian.

    Raises :class:`StructureError` naming the first offending block.
    """
    grid = gl.grid
    ids = gl.ordering
    n = len(ids)
    bc = gl.b + gl.c
    scale = max(np.abs(bc).max(), 1e-300)
    sel = np.concatenate([np.arange(N_AUG * k, N_AUG * k + 2) for k in range(n)]) if n else np.arange(0)
    rest = np.setdiff1d(np.arange(N_AUG * n), sel)
    l = bc[np.ix_(sel, sel)]
    res = {}
    res["outside_voltage_pairs"] = float(np.abs(bc[rest, :]).max() / scale) if rest.size and n else 0.0
    res["symmetry"] = float(np.abs(l - l.T).max() / scale) if n else 0.0
    res["row_sums"] = float(np.abs(l.sum(axis=1)).max() / scale) if n else 0.0

    eta_tilde = {}
    res["edge_blocks"] = 0.0
    expected = np.zeros_like(l)
    for ln in grid.lines:
        pa, pb = ids.index(ln.a), ids.index(ln.b)
        et = grid.sigma_bar * ln.conductance(grid.omega0)
        eta_tilde[ln.key] = et
        for x, y in ((pa, pb), (pb, pa)):
            expected[2 * x : 2 * x + 2, 2 * y : 2 * y + 2] = 2 * et * I2
            expected[2 * x : 2 * x + 2, 2 * x : 2 * x + 2] -= 2 * et * I2
    for x in range(n):
        for y in range(n):
            blk = l[2 * x : 2 * x + 2, 2 * y : 2 * y + 2]
            err = float(np.abs(blk - expected[2 * x : 2 * x + 2, 2 * y : 2 * y + 2]).max() / scale)
            if err > res["edge_blocks"]:
                res["edge_blocks"] = err
            if err > TOL_LAPLACIAN:
                raise StructureError(f"block ({ids[x]}, {ids[y]}) of the coupling Laplacian is off by {err:.3e} (relative)")
    for name in ("outside_voltage_pairs", "symmetry", "row_sums"):
        if res[name] > TOL_LAPLACIAN:
            raise StructureError(f"coupling Laplacian {name} residual {res[name]:.3e}")
    ev = np.linalg.eigvalsh((l + l.T) / 2) if n else np.zeros(0)
    res["max_eig"] = float(ev.max() / scale) if n else 0.0
    if res["max_eig"] > TOL_LAPLACIAN:
        raise StructureError(f"coupling Laplacian has a positive eigenvalue ({res['max_eig']:.3e} relative)")
    m = np.zeros_like(l)
    for x in range(n):
        m[2 * x : 2 * x + 2, 2 * x : 2 * x + 2] = l[2 * x : 2 * x + 2, 2 * x : 2 * x + 2]
    return CouplingLaplacian(tuple(ids), l, m, l - m, eta_tilde, res)


def certify_stability(
    grid: GridSpec, controllers: Mapping[int, Controller], marginal_rtol: float = 1e-12
) -> StabilityReport:
    """Check ``Q <= 0`` globally and the closed-loop spectrum of each connected component.

    ``Stable`` needs every component strictly in the open left half-plane and
    a valid global certificate.  ``Marginal`` covers eigenvalues on the
    imaginary axis up to ``marginal_rtol * ||A||`` as well as stable spectra whose
    certificate failed.
    """
    local = {}
    for i in grid.ids:
        cert = verify_local(grid.dgu(i), controllers[i])
        if cert.failures:
            local[i] = cert.failures
    gl = build_global_lyapunov(grid, controllers)
    q = gl.q_global
    nq = float(np.linalg.norm(q))
    max_eig = float(np.linalg.eigvalsh(q)[-1]) if q.size else 0.0
    res = {"q_split": gl.split_residual, "q_max_eig_rel": max_eig / nq if nq > 0 else max_eig}
    try:
        lap = extract_laplacian(gl)
        res.update({f"laplacian_{k}": v for k, v in lap.residuals.items()})
        res["laplacian_ok"] = 1.0
    except StructureError:
        res["laplacian_ok"] = 0.0

    acl = gl.model.closed_loop
    comps = []
    spectra = []
    for ids in grid.components():
        idx = np.concatenate([np.arange(gl.model.block(i).start, gl.model.block(i).stop) for i in ids])
        sub = acl[np.ix_(idx, idx)]
        ev = np.linalg.eigvals(sub)
        tol = marginal_rtol * np.linalg.norm(sub)
        mr = float(ev.real.max())
        comps.append(ComponentReport(tuple(ids), ev, mr, mr < -tol))
        spectra.append(ev)
    spectrum = np.concatenate(spectra) if spectra else np.zeros(0, complex)

    certified = max_eig <= TOL_SEMIDEF * nq and not local and res["laplacian_ok"] == 1.0
    if all(c.stable for c in comps) and certified:
        verdict = Verdict.STABLE
    elif any(c.max_re > marginal_rtol * np.linalg.norm(acl) for c in comps):
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.MARGINAL
    return StabilityReport(max_eig, nq, spectrum, tuple(comps), verdict, res, local)


# --- invariant-set identities ---------------------------------------------------


@dataclass(frozen=True)
class LaSalleReport:
    residuals: dict[str, float]
    failures: tuple[str, ...]
    # The identity with the opposite sign on sigma_bar * Y22, reported for reference.
    f21_opposite_sign: float = np.nan

    @property
    def ok(self) -> bool:
        return not self.failures


def kernel_vector(controller: Controller, alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """``[alpha / eta, beta / sigma_bar, Y33 beta]``; these span the kernel of ``Q_i``."""
    y = controller.lyapunov_param()
    return np.concatenate([alpha / y.eta, beta / y.sigma_bar, y.y33 @ beta])


def check_lasalle_sets(
    grid: GridSpec,
    controllers: Mapping[int, Controller],
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
) -> LaSalleReport:
    """Exercise the kernel structure used by the invariance argument.

    * every ``w = kernel_vector(...)`` satisfies ``w^T Q_i w = 0`` and ``Q_i w = 0``;
    * global states with a shared voltage pair ``a`` and ``b_i = Y33_i^-1 g_i / sigma_bar``
      satisfy ``x^T Q x = 0``;
    * the gain identities that force the shared voltage pair to vanish.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    sb = grid.sigma_bar
    res: dict[str, float] = {
        "kernel_quadratic": 0.0, "kernel_image": 0.0, "global_quadratic": 0.0,
        "g_blocks": 0.0, "k11": 0.0, "f21": 0.0, "k13_relation": 0.0, "l_i": 0.0,
        "f11_shared": 0.0, "f12": 0.0, "subvector": 0.0,
    }
    opposite = 0.0
    alpha_gap = np.inf
    f11_ref = None
    for i in grid.ids:
        ctrl = controllers[i]
        prm = grid.dgu(i)
        q = lyapunov_q(prm, ctrl)
        nq = np.linalg.norm(q)
        for _ in range(n_samples):
            w = kernel_vector(ctrl, rng.standard_normal(2), rng.standard_normal(2))
            ww = w @ w
            res["kernel_quadratic"] = max(res["kernel_quadratic"], abs(w @ q @ w) / (nq * ww))
            res["kernel_image"] = max(res["kernel_image"], np.linalg.norm(q @ w) / (nq * np.sqrt(ww)))

        y, g = ctrl.lyapunov_param(), ctrl.gain_param()
        k = ctrl.k
        k11, k12, k13 = k[:, :2], k[:, 2:4], k[:, 4:]
        l = prm.l_t
        f = closed_loop(prm, k, ctrl.omega0)
        f11, f12, f21, f22, f23 = f[:2, :2], f[:2, 2:4], f[2:4, :2], f[2:4, 2:4], f[2:4, 4:]
        a22 = f22 - k12 / l
        y33i = np.linalg.inv(y.y33)

        g_expect = np.hstack([k11 / y.eta, k12 @ y.y22 + k13 / sb, k12 / sb + k13 @ y.y33])
        res["g_blocks"] = max(res["g_blocks"], _rel(g.matrix() - g_expect, g.matrix()))
        res["k11"] = max(res["k11"], _rel(k11 - (I2 - sb * l * y.y22), I2 + sb * l * y.y22))
        res["f21"] = max(res["f21"], _rel(f21 + sb * y.y22, sb * y.y22))
        opposite = max(opposite, _rel(f21 - sb * y.y22, sb * y.y22))
        res["k13_relation"] = max(res["k13_relation"], _rel((k12 + l * a22) / sb + k13 @ y.y33, k13 @ y.y33))
        li = -f22 @ y33i / sb - f23
        res["l_i"] = max(res["l_i"], _rel(li, f23))
        if f11_ref is None:
            f11_ref = f11
        res["f11_shared"] = max(res["f11_shared"], _rel(f11 - f11_ref, f11_ref))
        res["f12"] = max(res["f12"], _rel(f12 - I2 / prm.c_t, I2 / prm.c_t))
        # (F21 + Y33^-1 / sigma_bar) a = L_i g must force a = 0
        amat = f21 + y33i / sb
        alpha_gap = min(alpha_gap, float(np.linalg.svd(amat, compute_uv=False)[-1] / np.linalg.norm(amat, 2)))
        for _ in range(8):
            a, gm = rng.standard_normal(2), rng.standard_normal(2)
            bvec = y33i @ gm / sb
            lhs = f21 @ a + f22 @ bvec + f23 @ gm + y33i @ a / sb
            rhs = amat @ a
            res["subvector"] = max(res["subvector"], np.linalg.norm(lhs - rhs) / max(np.linalg.norm(rhs), 1e-300))

    res["alpha_matrix_min_sv"] = alpha_gap
    gl = build_global_lyapunov(grid, controllers)
    qg = gl.q_global
    nqg = np.linalg.norm(qg)
    for _ in range(max(1, n_samples // 10)):
        for comp in grid.components():
            a = rng.standard_normal(2)
            x = np.zeros(qg.shape[0])
            for i in comp:
                ctrl = controllers[i]
                gm = rng.standard_normal(2)
                y33i = np.linalg.inv(ctrl.lyapunov_param().y33)
                s = gl.model.block(i)
                x[s] = np.concatenate([a, y33i @ gm / sb, gm])
            res["global_quadratic"] = max(res["global_quadratic"], abs(x @ qg @ x) / (nqg * (x @ x)))

    limits = {
        "kernel_quadratic": TOL_LASALLE, "kernel_image": TOL_LASALLE, "global_quadratic": TOL_LASALLE,
        "g_blocks": TOL_IDENTITY, "k11": TOL_IDENTITY, "f21": TOL_IDENTITY, "k13_relation": TOL_IDENTITY,
        "l_i": TOL_IDENTITY, "f11_shared": TOL_IDENTITY, "f12": TOL_IDENTITY, "subvector": TOL_IDENTITY,
    }
    failures = [name for name, lim in limits.items() if not res[name] <= lim]
    if not alpha_gap > 1e-12:
        failures.append("alpha_matrix_singular")
    return LaSalleReport(res, tuple(failures), opposite)


def assumption_violation_witness(
    grid: GridSpec, controllers: Mapping[int, Controller]
) -> float:
    """Largest eigenvalue of ``Q`` relative to ``||Q||_F``, skipping the eta/C check.

    Used to show that mismatched eta/C ratios can break global semidefiniteness.
    """
    gl = build_global_lyapunov(grid, controllers, check_assumption=False)
    q = gl.q_global
    return float(np.linalg.eigvalsh(q)[-1] / np.linalg.norm(q))


def _rel(a, ref) -> float:
    return float(np.linalg.norm(a) / max(np.linalg.norm(ref), 1e-300))
