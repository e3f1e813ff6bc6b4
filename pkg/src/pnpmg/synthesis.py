"""Local controller synthesis for one DGU and its certificate.

Each DGU gets a state-feedback gain ``K`` (2x6, acting on
``[V_d, V_q, It_d, It_q, v_d, v_q]``) and a Lyapunov matrix ``P`` such that
``Q = F^T P + P F`` is negative semidefinite, with ``F = A_hat + B_hat K``.
``P`` is constrained to ``diag(eta * I2, P22)`` with ``eta = sigma_bar * C_t``;
this shape is what makes the local certificates compose over arbitrary lines.

Synthesis works in the variables ``Y = P^-1`` and ``G = K Y``.  Three blocks of
``Y`` and ``G`` are fixed by the structure (``Y23``, ``G11``, ``G13``) so that
``Y Q Y`` collapses to its central 2x2 block.  The remaining freedom is either
optimized through an LMI program or chosen in closed form.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import lmi
from .model import I2, N_AUG, DguParams, GridSpec, augmented_dgu, filter_block

OMEGA0 = 2 * np.pi * 50

# Tolerances of a local certificate, relative to ||Q||_F.
TOL_SEMIDEF = 1e-8
TOL_STRUCTURE = 1e-9
TOL_FORCED = 1e-12
TOL_GAIN = 1e-10
# Relative slack given to beta and zeta in the analytic route.
BOUND_MARGIN = 1e-6


class SynthesisError(RuntimeError):
    """The LMI program did not return an optimal point."""

    def __init__(self, message: str, diagnostics: Mapping | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class Route(str, enum.Enum):
    LMI = "lmi"
    ANALYTIC = "analytic"


@dataclass(frozen=True)
class SynthesisOptions:
    """Options shared by both routes.

    ``y33_cap`` bounds the integrator block of ``Y`` by ``y33_cap * L_t / sigma_bar``.
    The LMI cost does not penalize that block and keeps improving as it grows,
    which drives the integral gain to zero; the cap keeps the optimum attained.

    With ``normalize_cost`` each weight multiplies its term divided by the value
    of that term at the analytic reference point.  In SI units the raw terms
    differ by up to sixteen orders of magnitude, so unnormalized weights let a
    single term decide the optimum.
    """

    sigma_bar: float = 1e4
    alphas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    route: Route = Route.LMI
    analytic_gamma: np.ndarray | None = None
    y33_cap: float = 2.0
    omega0: float = OMEGA0
    normalize_cost: bool = True
    solver: lmi.SolverOptions = field(default_factory=lmi.SolverOptions)

    def __post_init__(self):
        if not np.isfinite(self.sigma_bar) or self.sigma_bar <= 0:
            raise ValueError(f"sigma_bar must be positive, got {self.sigma_bar}")
        alphas = tuple(float(a) for a in self.alphas)
        if len(alphas) != 4 or any(not np.isfinite(a) or a <= 0 for a in alphas):
            raise ValueError(f"alphas must be four positive weights, got {self.alphas}")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "route", Route(self.route))
        if self.y33_cap <= 1.0:
            raise ValueError("y33_cap must exceed 1 (Y > 0 needs Y33 above L_t / sigma_bar at the natural scale)")
        if self.analytic_gamma is not None:
            _check_pd(self.analytic_gamma, "analytic_gamma")


@dataclass(frozen=True)
class LyapunovParam:
    """Blocks of ``Y = P^-1``; ``Y11 = I/eta`` and ``Y23 = I/sigma_bar`` are implied."""

    eta: float
    sigma_bar: float
    y22: np.ndarray
    y33: np.ndarray

    @property
    def y23(self) -> np.ndarray:
        return I2 / self.sigma_bar

    def matrix(self) -> np.ndarray:
        y = np.zeros((N_AUG, N_AUG))
        y[:2, :2] = I2 / self.eta
        y[2:4, 2:4] = self.y22
        y[2:4, 4:] = self.y23
        y[4:, 2:4] = self.y23
        y[4:, 4:] = self.y33
        return y

    def lower(self) -> np.ndarray:
        return self.matrix()[2:, 2:]


@dataclass(frozen=True)
class GainParam:
    g11: np.ndarray
    g12: np.ndarray
    g13: np.ndarray

    def matrix(self) -> np.ndarray:
        return np.hstack([self.g11, self.g12, self.g13])


def forced_gains(params: DguParams, y: LyapunovParam, g12: np.ndarray, omega0: float) -> GainParam:
    """Install the two gain blocks that zero the off-centre blocks of ``Y Q Y``."""
    l, c = params.l_t, params.c_t
    g11 = I2 / y.eta - (l / c) * y.y22
    g13 = -(l / y.sigma_bar) * filter_block(params, omega0)
    return GainParam(g11, np.asarray(g12, dtype=float), g13)


@dataclass(frozen=True)
class Controller:
    """Gain and Lyapunov matrix of one DGU together with the bounds used to certify it."""

    dgu_id: int
    k: np.ndarray
    p: np.ndarray
    sigma_bar: float
    gamma: np.ndarray
    beta: float
    zeta: float
    route: Route = Route.LMI
    omega0: float = OMEGA0
    y: LyapunovParam | None = None
    g: GainParam | None = None

    @property
    def eta(self) -> float:
        return float(self.p[0, 0])

    def lyapunov_param(self) -> LyapunovParam:
        if self.y is not None:
            return self.y
        low = np.linalg.inv(self.p[2:, 2:])
        low = (low + low.T) / 2
        return LyapunovParam(self.eta, self.sigma_bar, low[:2, :2], low[2:, 2:])

    def gain_param(self) -> GainParam:
        if self.g is not None:
            return self.g
        gm = self.k @ self.lyapunov_param().matrix()
        return GainParam(gm[:, :2], gm[:, 2:4], gm[:, 4:])


@dataclass(frozen=True)
class QTilde:
    """``Y Q Y`` with its named blocks and the residuals of the forced equalities."""

    matrix: np.ndarray
    blocks: dict[str, np.ndarray]
    residuals: dict[str, float]
    scales: dict[str, float]

    def scaled_residuals(self) -> dict[str, float]:
        return {k: self.residuals[k] / self.scales[k] for k in self.residuals}


@dataclass(frozen=True)
class Certificate:
    gamma: np.ndarray
    beta: float
    zeta: float
    q: np.ndarray
    q_tilde: np.ndarray
    max_eig_q: float
    residuals: dict[str, float]
    failures: tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.failures

    @property
    def gain_bound(self) -> float:
        """Upper bound on ``||K||_2`` implied by ``||G||^2 < beta`` and ``||P|| < zeta``."""
        return float(np.sqrt(self.beta) * self.zeta)


# --- closed-loop pieces -------------------------------------------------------


def closed_loop(params: DguParams, k: np.ndarray, omega0: float = OMEGA0) -> np.ndarray:
    aug = augmented_dgu(params, omega0)
    return aug.a_hat + aug.b_hat @ np.asarray(k, dtype=float)


def lyapunov_q(params: DguParams, controller: Controller) -> np.ndarray:
    f = closed_loop(params, controller.k, controller.omega0)
    q = f.T @ controller.p + controller.p @ f
    return (q + q.T) / 2


def compute_q_tilde(params: DguParams, y: LyapunovParam, g: GainParam, omega0: float = OMEGA0) -> QTilde:
    """Evaluate ``A Y + Y A^T + B G + G^T B^T`` and its named blocks.

    The full matrix comes from the augmented matrices; the named blocks come
    from their closed-form expressions, so the two act as mutual checks.
    """
    aug = augmented_dgu(params, omega0)
    ym, gm = y.matrix(), g.matrix()
    full = aug.a_hat @ ym + ym @ aug.a_hat.T + aug.b_hat @ gm + gm.T @ aug.b_hat.T
    full = (full + full.T) / 2
    l, c = params.l_t, params.c_t
    a22 = filter_block(params, omega0)
    eye_eta = I2 / y.eta
    blocks = {
        "q12": y.y22 / c - eye_eta / l + g.g11.T / l,
        "q13": y.y23 / c - eye_eta,
        "q22": a22 @ y.y22 + y.y22 @ a22.T + (g.g12 + g.g12.T) / l,
        "q23": a22 @ y.y23 + g.g13 / l,
    }
    scales = {
        "q12": _norm(y.y22 / c) + _norm(eye_eta / l) + _norm(g.g11 / l),
        "q13": _norm(y.y23 / c) + _norm(eye_eta),
        "q23": _norm(a22 @ y.y23) + _norm(g.g13 / l),
    }
    residuals = {k: _norm(blocks[k]) for k in scales}
    return QTilde(full, blocks, residuals, scales)


# --- analytic route -----------------------------------------------------------


def natural_gamma(params: DguParams, sigma_bar: float, omega0: float = OMEGA0) -> np.ndarray:
    """``Gamma`` that makes ``Y22 = I / (sigma_bar L_t)`` in the analytic route (``K11 = 0``)."""
    kappa = params.r_t / params.l_t + omega0
    return I2 / (2 * kappa * sigma_bar * params.l_t)


def _analytic_point(params: DguParams, sigma_bar: float, gamma: np.ndarray, omega0: float, mu: float = 1.0):
    a22 = filter_block(params, omega0)
    kappa = params.r_t / params.l_t + omega0
    k22 = -a22 - kappa * I2
    closed = a22 + k22
    p22 = _lyap2(closed, np.linalg.inv(gamma))
    y22 = np.linalg.inv(p22)
    y22 = (y22 + y22.T) / 2
    g12 = params.l_t * k22 @ y22
    y33 = (1.0 + mu) / sigma_bar**2 * np.linalg.inv(y22)
    y33 = (y33 + y33.T) / 2
    return y22, y33, g12


def _lyap2(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Solve ``a^T X + X a = -w`` for a 2x2 Hurwitz ``a`` through the Kronecker form."""
    n = a.shape[0]
    big = np.kron(np.eye(n), a.T) + np.kron(a.T, np.eye(n))
    x = np.linalg.solve(big, -w.reshape(-1, order="F")).reshape(n, n, order="F")
    return (x + x.T) / 2


def synthesize_analytic(
    params: DguParams,
    sigma_bar: float,
    gamma: np.ndarray | None = None,
    omega0: float = OMEGA0,
    mu: float = 1.0,
) -> tuple[Controller, Certificate]:
    """Closed-form controller: place the current loop at ``-kappa I`` and solve a 2x2 Lyapunov equation."""
    if sigma_bar <= 0:
        raise ValueError("sigma_bar must be positive")
    gamma = natural_gamma(params, sigma_bar, omega0) if gamma is None else _check_pd(gamma, "gamma")
    y22, y33, g12 = _analytic_point(params, sigma_bar, gamma, omega0, mu)
    y = LyapunovParam(sigma_bar * params.c_t, sigma_bar, y22, y33)
    g = forced_gains(params, y, g12, omega0)
    k, p = _recover(y, g)
    beta = _norm2(g.matrix()) ** 2 * (1 + BOUND_MARGIN)
    zeta = _norm2(p) * (1 + BOUND_MARGIN)
    ctrl = Controller(params.id, k, p, sigma_bar, gamma, beta, zeta, Route.ANALYTIC, omega0, y, g)
    return ctrl, verify_local(params, ctrl)


# --- LMI route ----------------------------------------------------------------

N_LMI_VARS = 14
LMI_VAR_NAMES = (
    "y22_11", "y22_12", "y22_22",
    "y33_11", "y33_12", "y33_22",
    "g12_11", "g12_12", "g12_21", "g12_22",
    "gamma1", "gamma2", "beta", "zeta",
)


def _unpack(z):
    y22 = np.array([[z[0], z[1]], [z[1], z[2]]])
    y33 = np.array([[z[3], z[4]], [z[4], z[5]]])
    g12 = np.array([[z[6], z[7]], [z[8], z[9]]])
    return y22, y33, g12, z[10], z[11], z[12], z[13]


def _lmi_matrices(params: DguParams, sigma_bar: float, omega0: float, cap: float, z, affine: bool, zeta_scale: float = 1.0):
    """Constraint matrices at ``z``; with ``affine=False`` only the linear part in ``z``.

    The two ``zeta`` blocks are pre-multiplied by the constant congruence
    ``diag(sqrt(s) I, I / sqrt(s))`` with ``s = zeta_scale``, which keeps their
    entries comparable when ``zeta`` is large.
    """
    one = 1.0 if affine else 0.0
    eta = sigma_bar * params.c_t
    l, c = params.l_t, params.c_t
    a22 = filter_block(params, omega0)
    y22, y33, g12, g1, g2, beta, zeta = _unpack(z)
    eye4, eye6 = np.eye(4), np.eye(6)
    ym = np.zeros((6, 6))
    ym[:2, :2] = one * I2 / eta
    ym[2:4, 2:4] = y22
    ym[2:4, 4:] = ym[4:, 2:4] = one * I2 / sigma_bar
    ym[4:, 4:] = y33
    gm = np.hstack([one * I2 / eta - (l / c) * y22, g12, -one * (l / sigma_bar) * a22])
    q22 = a22 @ y22 + y22 @ a22.T + (g12 + g12.T) / l
    return [
        (ym, ">", "Y"),
        (np.block([[q22, y22], [y22, -np.diag([g1, g2])]]), "<=", "stability"),
        (np.block([[-beta * eye6, gm.T], [gm, -one * I2]]), "<", "gain"),
        (np.block([[one * zeta_scale * I2 / eta, one * I2], [one * I2, zeta / zeta_scale * I2]]), ">", "zeta_top"),
        (np.block([[zeta_scale * ym[2:, 2:], one * eye4], [one * eye4, zeta / zeta_scale * eye4]]), ">", "zeta_lower"),
        (y33 - one * cap * I2, "<=", "y33_cap"),
        (np.array([[g1]]), ">", "gamma1"),
        (np.array([[g2]]), ">", "gamma2"),
        (np.array([[beta]]), ">", "beta"),
        (np.array([[zeta]]), ">", "zeta"),
    ]


def build_lmi_program(params: DguParams, opts: SynthesisOptions) -> lmi.LmiProgram:
    sb, w0 = opts.sigma_bar, opts.omega0
    cap = opts.y33_cap * params.l_t / sb
    start = lmi_warm_start(params, opts)
    zs = float(start[-1])
    const = _lmi_matrices(params, sb, w0, cap, np.zeros(N_LMI_VARS), True, zs)
    lin = [_lmi_matrices(params, sb, w0, cap, e, False, zs) for e in np.eye(N_LMI_VARS)]
    blocks = []
    for b, (f0, sense, name) in enumerate(const):
        fk = np.array([lin[k][b][0] for k in range(N_LMI_VARS)])
        blocks.append(lmi.LmiBlock(f0, fk, sense, name))
    cost = np.zeros(N_LMI_VARS)
    cost[10:] = opts.alphas
    if opts.normalize_cost:
        cost[10:] /= start[10:]
    return lmi.LmiProgram(N_LMI_VARS, cost, tuple(blocks), names=LMI_VAR_NAMES)


def lmi_warm_start(params: DguParams, opts: SynthesisOptions) -> np.ndarray:
    """A strictly feasible point built from the analytic route at the natural scale."""
    sb = opts.sigma_bar
    gamma = natural_gamma(params, sb, opts.omega0)
    mu = min(1.0, (opts.y33_cap - 1.0) / 2.0)
    y22, y33, g12 = _analytic_point(params, sb, gamma, opts.omega0, mu)
    y = LyapunovParam(sb * params.c_t, sb, y22, y33)
    g = forced_gains(params, y, g12, opts.omega0)
    _, p = _recover(y, g)
    gam = 2 * np.diag(gamma)
    beta = 2 * _norm2(g.matrix()) ** 2
    zeta = 2 * _norm2(p)
    return np.r_[y22[0, 0], y22[0, 1], y22[1, 1], y33[0, 0], y33[0, 1], y33[1, 1], g12.ravel(), gam, beta, zeta]


def synthesize_lmi(
    params: DguParams,
    opts: SynthesisOptions | None = None,
    backend: lmi.LmiBackend = lmi.solve,
) -> tuple[Controller, Certificate]:
    """Minimize ``a1 g1 + a2 g2 + a3 beta + a4 zeta`` over the free blocks of ``Y`` and ``G``."""
    opts = opts or SynthesisOptions()
    prog = build_lmi_program(params, opts)
    sol = backend(prog, opts.solver, lmi_warm_start(params, opts))
    if not sol.ok:
        raise SynthesisError(
            f"LMI synthesis for DGU {params.id} ended with status {sol.status.value}",
            {"status": sol.status.value, "iterations": sol.iterations, "gap": sol.gap,
             "block_mineigs": sol.block_mineigs, "objective": sol.objective},
        )
    y22, y33, g12, g1, g2, beta, zeta = _unpack(sol.z)
    sb = opts.sigma_bar
    y = LyapunovParam(sb * params.c_t, sb, (y22 + y22.T) / 2, (y33 + y33.T) / 2)
    g = forced_gains(params, y, g12, opts.omega0)
    k, p = _recover(y, g)
    ctrl = Controller(params.id, k, p, sb, np.diag([g1, g2]), float(beta), float(zeta), Route.LMI, opts.omega0, y, g)
    return ctrl, verify_local(params, ctrl)


def synthesize(params: DguParams, opts: SynthesisOptions | None = None) -> tuple[Controller, Certificate]:
    opts = opts or SynthesisOptions()
    if opts.route is Route.ANALYTIC:
        return synthesize_analytic(params, opts.sigma_bar, opts.analytic_gamma, opts.omega0)
    return synthesize_lmi(params, opts)


def synthesize_all(
    grid: GridSpec, opts: SynthesisOptions | None = None
) -> dict[int, tuple[Controller, Certificate]]:
    """Synthesize every DGU from its own parameters; line data is never read.

    ``sigma_bar`` and ``omega0`` are taken from the grid.
    """
    base = opts or SynthesisOptions()
    opts = dataclasses.replace(base, sigma_bar=grid.sigma_bar, omega0=grid.omega0)
    out, errors = {}, {}
    for i in grid.ids:
        try:
            out[i] = synthesize(grid.dgu(i), opts)
        except SynthesisError as exc:
            errors[i] = exc
    if errors:
        raise SynthesisError(
            f"synthesis failed for DGUs {sorted(errors)}",
            {i: e.diagnostics for i, e in errors.items()},
        )
    return out


# --- verification -------------------------------------------------------------


def verify_local(params: DguParams, controller: Controller) -> Certificate:
    """Re-derive ``Q`` from ``(K, P)`` and check every local invariant.

    Failing checks are listed by name in ``Certificate.failures``.
    """
    k, p = np.asarray(controller.k, dtype=float), np.asarray(controller.p, dtype=float)
    w0, sb = controller.omega0, controller.sigma_bar
    failures = []
    res: dict[str, float] = {}
    if k.shape != (2, N_AUG) or p.shape != (N_AUG, N_AUG):
        raise ValueError(f"controller shapes {k.shape}, {p.shape}; expected (2, 6), (6, 6)")

    eta = sb * params.c_t
    res["p_symmetry"] = _norm(p - p.T) / _norm(p)
    res["p_eta"] = _norm(p[:2, :2] - eta * I2) / (eta * np.sqrt(2))
    res["p_offdiag"] = _norm(p[:2, 2:]) / _norm(p)
    try:
        np.linalg.cholesky((p + p.T) / 2)
        res["p_posdef"] = 0.0
    except np.linalg.LinAlgError:
        res["p_posdef"] = 1.0
        failures.append("p_posdef")
    for name in ("p_symmetry", "p_eta", "p_offdiag"):
        if res[name] > TOL_STRUCTURE:
            failures.append(name)

    f = closed_loop(params, k, w0)
    q = f.T @ p + p @ f
    res["q_symmetry"] = _norm(q - q.T)
    q = (q + q.T) / 2
    nq = _norm(q)
    max_eig = float(np.linalg.eigvalsh(q)[-1])
    res["q_max_eig_rel"] = max_eig / nq if nq > 0 else max_eig
    if max_eig > TOL_SEMIDEF * nq:
        failures.append("q_semidefinite")
    res["q_structure"] = _norm(q[:2, :]) / nq if nq > 0 else 0.0
    if res["q_structure"] > TOL_STRUCTURE:
        failures.append("q_structure")

    aug = augmented_dgu(params, w0)
    res["f11"] = _norm(f[:2, :2] - aug.a_hat[:2, :2])
    res["f12"] = _norm(f[:2, 2:4] - I2 / params.c_t) / _norm(I2 / params.c_t)
    if res["f11"] > 0 or res["f12"] > 0:
        failures.append("f_structure")

    y, g = controller.lyapunov_param(), controller.gain_param()
    res["k_from_yg"] = _norm(g.matrix() - k @ y.matrix()) / max(_norm(g.matrix()), 1e-300)
    if res["k_from_yg"] > TOL_GAIN:
        failures.append("k_from_yg")
    qt = compute_q_tilde(params, y, g, w0)
    for name, val in qt.scaled_residuals().items():
        res[name] = val
        if val > TOL_FORCED:
            failures.append(name)
    ypy = y.matrix() @ q @ y.matrix()
    res["q_tilde_triple"] = _norm(qt.matrix - ypy) / max(_norm(qt.matrix), 1e-300)

    gamma = np.asarray(controller.gamma, dtype=float)
    beta, zeta = float(controller.beta), float(controller.zeta)
    res["gain_norm"] = _norm2(k)
    res["g_norm_sq"] = _norm2(g.matrix()) ** 2
    res["p_norm"] = _norm2(p)
    if not res["g_norm_sq"] < beta:
        failures.append("beta_bound")
    if not res["p_norm"] < zeta:
        failures.append("zeta_bound")
    if not res["gain_norm"] <= np.sqrt(beta) * zeta:
        failures.append("gain_bound")

    spectrum = np.linalg.eigvals(f)
    res["max_re_eig_f"] = float(spectrum.real.max())
    if res["max_re_eig_f"] >= 0:
        failures.append("local_hurwitz")

    return Certificate(gamma, beta, zeta, q, qt.matrix, max_eig, res, tuple(failures))


# --- serialization ------------------------------------------------------------


def controller_to_dict(ctrl: Controller, cert: Certificate | None = None) -> dict:
    max_eig = cert.max_eig_q if cert is not None else None
    return {
        "dgu_id": ctrl.dgu_id,
        "k": np.asarray(ctrl.k).tolist(),
        "p": np.asarray(ctrl.p).tolist(),
        "sigma_bar": ctrl.sigma_bar,
        "omega0": ctrl.omega0,
        "route": ctrl.route.value,
        "certificate": {
            "gamma": np.asarray(ctrl.gamma).tolist(),
            "beta": ctrl.beta,
            "zeta": ctrl.zeta,
            "max_eig_q": max_eig,
        },
    }


def controller_from_dict(d: Mapping) -> Controller:
    cert = d["certificate"]
    return Controller(
        int(d["dgu_id"]),
        np.array(d["k"], dtype=float),
        np.array(d["p"], dtype=float),
        float(d["sigma_bar"]),
        _gamma_matrix(cert["gamma"]),
        float(cert["beta"]),
        float(cert["zeta"]),
        Route(d.get("route", "lmi")),
        float(d.get("omega0", OMEGA0)),
    )


def save_controllers(path, controllers: Mapping[int, tuple[Controller, Certificate] | Controller]) -> None:
    items = []
    for i in sorted(controllers):
        v = controllers[i]
        ctrl, cert = v if isinstance(v, tuple) else (v, None)
        items.append(controller_to_dict(ctrl, cert))
    with open(path, "w") as fh:
        json.dump(items, fh, indent=1)


def load_controllers(path) -> dict[int, Controller]:
    with open(path) as fh:
        items = json.load(fh)
    out = {}
    for d in items:
        c = controller_from_dict(d)
        out[c.dgu_id] = c
    return out


# --- helpers ------------------------------------------------------------------


def _recover(y: LyapunovParam, g: GainParam) -> tuple[np.ndarray, np.ndarray]:
    """``P = Y^-1`` with its block structure kept exact, and ``K = G P``."""
    low = np.linalg.inv(y.lower())
    low = (low + low.T) / 2
    p = np.zeros((N_AUG, N_AUG))
    p[:2, :2] = y.eta * I2
    p[2:, 2:] = low
    k = np.zeros((2, N_AUG))
    k[:, :2] = g.g11 * y.eta
    k[:, 2:] = np.hstack([g.g12, g.g13]) @ low
    return k, p


def _gamma_matrix(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return np.diag(v) if v.ndim == 1 else v


def _check_pd(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2) or not np.allclose(m, m.T):
        raise ValueError(f"{name} must be a symmetric 2x2 matrix")
    if np.linalg.eigvalsh(m)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return m


def _norm(a) -> float:
    return float(np.linalg.norm(a))


def _norm2(a) -> float:
    return float(np.linalg.norm(a, 2))
