"""Closed-loop simulation of a microgrid under a timed event script.

Between two events the closed loop is linear time-invariant with a constant
input, so each segment is integrated with one precomputed RK4 propagator.
Line couplings make the model stiff (sub-microsecond time constants for short
lines), so each output step of ``step_s`` is covered by ``2**k`` RK4
sub-steps, with ``k`` chosen from the spectral radius of the segment matrix.
The sub-steps are folded into the propagator by repeated squaring, so the cost
per output step is one matrix-vector product regardless of stiffness.

Voltages and references are in volts internally; ``Scenario.v_base`` converts
per-unit references and metrics.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.ndimage import uniform_filter1d

from . import model
from .model import I2, J2, N_AUG, DguParams, GridSpec, LineParams
from .synthesis import Controller, SynthesisOptions, synthesize_all

# Sub-steps are refined until |lambda| * h_sub <= this value.
SUBSTEP_RHO_H = 0.5
DIVERGENCE_LIMIT = 1e12
DIVERGENCE_CHECK_EVERY = 1000
FREQ_WINDOW_S = 5e-3
AMPLITUDE_FLOOR_PU = 1e-3
SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """A scenario or event references something that does not exist."""


class DivergenceError(RuntimeError):
    """The integration produced non-finite or exploding values."""

    def __init__(self, time: float, trajectory: "Trajectory"):
        super().__init__(f"integration diverged at t={time:.6g} s")
        self.time = time
        self.trajectory = trajectory


# --- loads --------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantCurrent:
    """A load drawing a fixed dq current (A)."""

    i_d: float = 0.0
    i_q: float = 0.0


@dataclass(frozen=True)
class RlLoad:
    """A series RL load; ``l = 0`` gives a purely resistive load."""

    r: float
    l: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.r) and self.r > 0):
            raise model.ParameterError(f"RL load resistance {self.r!r} must be positive")
        if not (np.isfinite(self.l) and self.l >= 0):
            raise model.ParameterError(f"RL load inductance {self.l!r} must be nonnegative")

    @property
    def dynamic(self) -> bool:
        return self.l > 0


LoadModel = Union[ConstantCurrent, RlLoad]


# --- events -------------------------------------------------------------------


@dataclass(frozen=True)
class PlugIn:
    """Connect a new DGU with its lines; it starts from zero state."""

    time: float
    dgu: DguParams
    lines: tuple[LineParams, ...] = ()
    controller: Controller | None = None
    ref: tuple[float, float] = (0.0, 0.0)
    load: LoadModel | None = None


@dataclass(frozen=True)
class PlugOut:
    time: float
    dgu: int


@dataclass(frozen=True)
class LineTrip:
    time: float
    a: int
    b: int


@dataclass(frozen=True)
class LineAdd:
    time: float
    line: LineParams


@dataclass(frozen=True)
class LoadStep:
    time: float
    dgu: int
    load: LoadModel


@dataclass(frozen=True)
class RefStep:
    """New voltage reference (per unit) for one DGU."""

    time: float
    dgu: int
    v_d_ref: float
    v_q_ref: float


@dataclass(frozen=True)
class ClockShift:
    """Phase error (degrees) of the local dq frame of one DGU."""

    time: float
    dgu: int
    theta: float


Event = Union[PlugIn, PlugOut, LineTrip, LineAdd, LoadStep, RefStep, ClockShift]


@dataclass(frozen=True)
class Scenario:
    """Initial grid, controllers, references (pu), loads and an event script."""

    grid0: GridSpec
    controllers: Mapping[int, Controller]
    refs0: Mapping[int, tuple[float, float]]
    loads0: Mapping[int, LoadModel]
    events: tuple[Event, ...] = ()
    t_end: float = 1.0
    step_s: float = 20e-6
    record_every: int = 1
    v_base: float = 1.0
    method: str = "rk4"

    def __post_init__(self):
        if self.method != "rk4":
            raise ScenarioError(f"unsupported integration method {self.method!r}")
        if not (self.step_s > 0 and np.isfinite(self.step_s)):
            raise ScenarioError(f"step_s={self.step_s!r} must be positive")
        if not self.t_end >= 0:
            raise ScenarioError(f"t_end={self.t_end!r} must be nonnegative")
        if int(self.record_every) < 1:
            raise ScenarioError("record_every must be at least 1")
        if not self.v_base > 0:
            raise ScenarioError("v_base must be positive")
        for ev in self.events:
            if not ev.time >= 0:
                raise ScenarioError(f"event {ev!r} has a negative time")
        events = tuple(sorted(self.events, key=lambda e: e.time))
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "controllers", dict(self.controllers))
        object.__setattr__(self, "refs0", {int(i): tuple(map(float, r)) for i, r in self.refs0.items()})
        object.__setattr__(self, "loads0", dict(self.loads0))


@dataclass(frozen=True)
class Trajectory:
    """Recorded samples; DGUs absent at a sample hold NaN.

    ``states`` has shape ``(n_samples, n_dgus, 6)``, ``inputs`` and ``refs``
    ``(n_samples, n_dgus, 2)``.  ``refs`` is in volts.
    """

    times: np.ndarray
    ids: tuple[int, ...]
    states: np.ndarray
    inputs: np.ndarray
    refs: np.ndarray
    events: tuple[tuple[float, str], ...]
    v_base: float = 1.0
    step_s: float = 20e-6

    @property
    def outputs(self) -> np.ndarray:
        return self.states[..., :2]

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.states[..., 0])

    def column(self, i: int) -> int:
        return self.ids.index(i)


# --- segment assembly ----------------------------------------------------------


def rotation(theta_rad: float) -> np.ndarray:
    c, s = math.cos(theta_rad), math.sin(theta_rad)
    return np.array([[c, -s], [s, c]])


def shifted_gain(k: np.ndarray, theta_deg: float) -> tuple[np.ndarray, np.ndarray]:
    """Effective gain ``Rot(theta) K D(theta)`` and the rotation seen by the integrator.

    ``D`` rotates the voltage and current pairs by ``-theta`` and leaves the
    integrator pair alone.  ``theta = 0`` returns ``k`` itself.
    """
    if theta_deg == 0.0:
        return np.asarray(k, dtype=float), I2
    th = math.radians(theta_deg)
    back = rotation(-th)
    d = np.eye(N_AUG)
    d[:2, :2] = back
    d[2:4, 2:4] = back
    return rotation(th) @ k @ d, back


@dataclass
class _State:
    grid: GridSpec
    controllers: dict
    refs: dict  # volts
    loads: dict
    thetas: dict


@dataclass(frozen=True)
class Segment:
    """Affine closed loop ``dx/dt = a x + w`` of one event-free interval."""

    ids: tuple[int, ...]
    load_ids: tuple[int, ...]
    a: np.ndarray
    w: np.ndarray
    k_eff: np.ndarray

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def dgu_slice(self, i: int) -> slice:
        p = self.ids.index(i)
        return slice(N_AUG * p, N_AUG * p + N_AUG)

    def load_slice(self, i: int) -> slice:
        p = len(self.ids) * N_AUG + 2 * self.load_ids.index(i)
        return slice(p, p + 2)


def build_segment(
    grid: GridSpec,
    gains: Mapping[int, np.ndarray],
    refs: Mapping[int, Sequence[float]],
    loads: Mapping[int, LoadModel],
    thetas: Mapping[int, float] | None = None,
) -> Segment:
    """Closed-loop matrices for fixed topology, references (V), loads and clock shifts."""
    thetas = thetas or {}
    gm = model.assemble_global(grid)
    ids = gm.ordering
    n6 = N_AUG * len(ids)
    load_ids = tuple(i for i in ids if isinstance(loads.get(i), RlLoad) and loads[i].dynamic)
    n = n6 + 2 * len(load_ids)
    a = np.zeros((n, n))
    a[:n6, :n6] = gm.a_hat
    w = np.zeros(n)
    k_eff = np.zeros((2 * len(ids), n6))
    w0 = grid.omega0
    for p, i in enumerate(ids):
        s = slice(N_AUG * p, N_AUG * p + N_AUG)
        v, integ = slice(s.start, s.start + 2), slice(s.start + 4, s.start + 6)
        c_t = grid.dgu(i).c_t
        ki, back = shifted_gain(gains[i], float(thetas.get(i, 0.0)))
        k_eff[2 * p : 2 * p + 2, s] = ki
        a[s, s] += gm.b_hat[s, 2 * p : 2 * p + 2] @ ki
        if back is not I2:
            a[integ, v] = -back
        ref = refs.get(i, (0.0, 0.0))
        w[integ] = ref
        load = loads.get(i)
        if isinstance(load, ConstantCurrent):
            w[v] -= np.array([load.i_d, load.i_q]) / c_t
        elif isinstance(load, RlLoad):
            if load.dynamic:
                q = n6 + 2 * load_ids.index(i)
                il = slice(q, q + 2)
                a[v, il] -= I2 / c_t
                a[il, v] = I2 / load.l
                a[il, il] = -load.r / load.l * I2 + w0 * J2
            else:
                a[v, v] -= I2 / (load.r * c_t)
        elif load is not None:
            raise ScenarioError(f"unknown load model {load!r} at DGU {i}")
    return Segment(tuple(ids), load_ids, a, w, k_eff)


def rk4_propagator(a: np.ndarray, w: np.ndarray, step: float, rho_h: float = SUBSTEP_RHO_H) -> tuple[np.ndarray, int]:
    """One-step map of the augmented state ``[x, 1]`` and the number of RK4 sub-steps.

    The sub-step count is a power of two so that ``h_sub * rho(a) <= rho_h``.
    """
    n = a.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = a
    aug[:n, n] = w
    rho = float(np.max(np.abs(np.linalg.eigvals(a)))) if n else 0.0
    k = max(0, math.ceil(math.log2(max(rho * step / rho_h, 1.0))))
    h = step / 2**k
    ha = h * aug
    ha2 = ha @ ha
    phi = np.eye(n + 1) + ha + ha2 / 2 + ha2 @ ha / 6 + ha2 @ ha2 / 24
    for _ in range(k):
        phi = phi @ phi
    return phi, 2**k


# --- simulation ---------------------------------------------------------------


def _gain_of(c) -> np.ndarray:
    return np.asarray(c.k if isinstance(c, Controller) else c, dtype=float)


def _apply_event(st: _State, ev: Event, v_base: float) -> str:
    ids = set(st.grid.ids)

    def need(i):
        if i not in ids:
            raise ScenarioError(f"event at t={ev.time} references DGU {i}, which is not connected")

    if isinstance(ev, PlugIn):
        st.grid = model.mutate_topology(st.grid, model.PlugIn(ev.dgu, tuple(ev.lines)))
        i = ev.dgu.id
        if ev.controller is not None:
            st.controllers[i] = ev.controller
        if i not in st.controllers:
            raise ScenarioError(f"DGU {i} plugs in without a controller")
        st.refs[i] = (ev.ref[0] * v_base, ev.ref[1] * v_base)
        if ev.load is not None:
            st.loads[i] = ev.load
        return f"plug-in DGU {i}"
    if isinstance(ev, PlugOut):
        need(ev.dgu)
        st.grid = model.mutate_topology(st.grid, model.PlugOut(ev.dgu))
        return f"plug-out DGU {ev.dgu}"
    if isinstance(ev, LineTrip):
        try:
            st.grid = model.mutate_topology(st.grid, model.LineTrip(ev.a, ev.b))
        except model.TopologyError as exc:
            raise ScenarioError(str(exc)) from None
        return f"line trip {min(ev.a, ev.b)}-{max(ev.a, ev.b)}"
    if isinstance(ev, LineAdd):
        try:
            st.grid = model.mutate_topology(st.grid, model.LineAdd(ev.line))
        except model.TopologyError as exc:
            raise ScenarioError(str(exc)) from None
        return f"line add {ev.line.a}-{ev.line.b}"
    if isinstance(ev, LoadStep):
        need(ev.dgu)
        st.loads[ev.dgu] = ev.load
        return f"load step DGU {ev.dgu}"
    if isinstance(ev, RefStep):
        need(ev.dgu)
        st.refs[ev.dgu] = (ev.v_d_ref * v_base, ev.v_q_ref * v_base)
        return f"reference step DGU {ev.dgu}"
    if isinstance(ev, ClockShift):
        need(ev.dgu)
        st.thetas[ev.dgu] = float(ev.theta)
        return f"clock shift DGU {ev.dgu}"
    raise ScenarioError(f"unsupported event {ev!r}")


def _all_ids(sc: Scenario) -> tuple[int, ...]:
    ids = set(sc.grid0.ids)
    ids.update(ev.dgu.id for ev in sc.events if isinstance(ev, PlugIn))
    return tuple(sorted(ids))


def _carry(old: Segment | None, x_old: np.ndarray | None, new: Segment) -> np.ndarray:
    """Map the state onto a new segment layout; new entries start at zero."""
    x = np.zeros(new.n + 1)
    x[-1] = 1.0
    if old is None:
        return x
    for i in new.ids:
        if i in old.ids:
            x[new.dgu_slice(i)] = x_old[old.dgu_slice(i)]
    for i in new.load_ids:
        if i in old.load_ids:
            x[new.load_slice(i)] = x_old[old.load_slice(i)]
    return x


def simulate(scenario: Scenario, x0: Mapping[int, np.ndarray] | None = None) -> Trajectory:
    """Integrate the scenario; ``x0`` optionally sets initial augmented DGU states."""
    sc = scenario
    h = sc.step_s
    n_steps = int(math.floor(sc.t_end / h + 1e-9))
    every = int(sc.record_every)
    rec_steps = list(range(0, n_steps + 1, every))
    if rec_steps and rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    all_ids = _all_ids(sc)
    col = {i: c for c, i in enumerate(all_ids)}
    n_rec = len(rec_steps) if sc.t_end > 0 else 0
    times = np.array(rec_steps[:n_rec], dtype=float) * h
    states = np.full((n_rec, len(all_ids), N_AUG), np.nan)
    inputs = np.full((n_rec, len(all_ids), 2), np.nan)
    refs_out = np.full((n_rec, len(all_ids), 2), np.nan)

    for i in sc.grid0.ids:
        if i not in sc.controllers:
            raise ScenarioError(f"DGU {i} has no controller")
    st = _State(
        grid=sc.grid0,
        controllers=dict(sc.controllers),
        refs={i: (r[0] * sc.v_base, r[1] * sc.v_base) for i, r in sc.refs0.items()},
        loads=dict(sc.loads0),
        thetas={},
    )
    markers: list[tuple[float, str]] = []
    # Group events by the step index they land on.
    by_step: dict[int, list[Event]] = {}
    for ev in sc.events:
        k = int(round(ev.time / h))
        if k <= n_steps:
            by_step.setdefault(k, []).append(ev)

    def trajectory(upto: int) -> Trajectory:
        return Trajectory(times[:upto], all_ids, states[:upto], inputs[:upto], refs_out[:upto], tuple(markers), sc.v_base, h)

    if n_rec == 0:
        for ev in by_step.get(0, []):
            markers.append((ev.time, _apply_event(st, ev, sc.v_base)))
        return trajectory(0)

    seg: Segment | None = None
    x = None
    boundaries = sorted(set(by_step) | {0})
    r = 0  # next record index
    for b, k0 in enumerate(boundaries):
        for ev in by_step.get(k0, []):
            markers.append((ev.time, _apply_event(st, ev, sc.v_base)))
        k1 = boundaries[b + 1] if b + 1 < len(boundaries) else n_steps
        gains = {}
        for i in st.grid.ids:
            if i not in st.controllers:
                raise ScenarioError(f"DGU {i} has no controller")
            gains[i] = _gain_of(st.controllers[i])
        new = build_segment(st.grid, gains, st.refs, st.loads, st.thetas)
        x = _carry(seg, x, new)
        if seg is None and x0:
            for i, xi in x0.items():
                x[new.dgu_slice(i)] = np.asarray(xi, dtype=float)
        seg = new
        phi, _ = rk4_propagator(seg.a, seg.w, h)
        cols = [col[i] for i in seg.ids]
        n6 = N_AUG * len(seg.ids)
        ref_now = np.array([st.refs.get(i, (0.0, 0.0)) for i in seg.ids], dtype=float)

        def record(k):
            nonlocal r
            while r < n_rec and rec_steps[r] == k:
                xs = x[:n6].reshape(-1, N_AUG)
                states[r, cols] = xs
                inputs[r, cols] = (seg.k_eff @ x[:n6]).reshape(-1, 2)
                refs_out[r, cols] = ref_now
                r += 1

        record(k0)
        for k in range(k0 + 1, k1 + 1):
            x = phi @ x
            if k % DIVERGENCE_CHECK_EVERY == 0 or k == k1:
                if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
                    raise DivergenceError(k * h, trajectory(r))
            if k1 < n_steps and k == k1:
                break  # the next segment records this sample
            record(k)
    return trajectory(n_rec)


# --- canned scenarios ---------------------------------------------------------

BENCHMARK_EDGES = ((6, 4), (4, 2), (2, 3), (3, 7), (7, 8), (8, 9), (4, 5), (5, 1), (1, 2))
BENCHMARK_PLUG_EDGES = ((2, 10), (8, 10))
BENCHMARK_TRIPS = ((3, 7), (8, 10))
BENCHMARK_REFS = {2: (0.6, 0.5), 8: (0.7, 0.6), 10: (0.8, 0.6)}
DEFAULT_REF = (0.6, 0.5)
CLOCK_DRIFT_DEG = {2: 2.5, 3: 1.0, 7: 2.0, 8: 3.0, 10: 4.0}


@dataclass(frozen=True)
class BenchmarkConfig:
    """Representative electrical parameters of the 10-DGU benchmark."""

    seed: int = 2016
    r_t: float = 0.2
    l_t: float = 1.8e-3
    c_t: float = 25e-6
    spread: float = 0.2
    line_r: tuple[float, float] = (0.05, 0.8)
    line_l: tuple[float, float] = (2e-6, 40e-6)
    load_r: float = 60.0
    load_l: float = 0.02e-3
    load_step_r: float = 120.0
    t_plug: float = 7.5
    t_load: float = 10.0
    t_trip: float = 12.0
    t_end: float = 15.0
    step_s: float = 20e-6
    record_every: int = 1
    sigma_bar: float = 1e4
    synthesis: SynthesisOptions = field(default_factory=SynthesisOptions)


def benchmark_grid(cfg: BenchmarkConfig | None = None) -> tuple[GridSpec, DguParams, tuple[LineParams, ...]]:
    """Initial 9-DGU grid, the DGU that plugs in later and its lines."""
    cfg = cfg or BenchmarkConfig()
    rng = np.random.default_rng(cfg.seed)

    def spread(v):
        return v * rng.uniform(1 - cfg.spread, 1 + cfg.spread)

    dgus = [DguParams(i, spread(cfg.r_t), spread(cfg.l_t), spread(cfg.c_t)) for i in range(1, 11)]
    lines = [
        LineParams(a, b, rng.uniform(*cfg.line_r), rng.uniform(*cfg.line_l))
        for a, b in BENCHMARK_EDGES + BENCHMARK_PLUG_EDGES
    ]
    n0 = len(BENCHMARK_EDGES)
    grid0 = GridSpec(tuple(dgus[:9]), tuple(lines[:n0]), sigma_bar=cfg.sigma_bar)
    return grid0, dgus[9], tuple(lines[n0:])


def benchmark_scenario(cfg: BenchmarkConfig | None = None, controllers: Mapping[int, Controller] | None = None) -> Scenario:
    """Plug-in of DGU 10, load step at its PCC, then the trip that splits the grid."""
    cfg = cfg or BenchmarkConfig()
    grid0, dgu10, lines10 = benchmark_grid(cfg)
    if controllers is None:
        full = GridSpec(grid0.dgus + (dgu10,), (), grid0.omega0, grid0.sigma_bar)
        controllers = {i: c for i, (c, _) in synthesize_all(full, cfg.synthesis).items()}
    refs = {i: BENCHMARK_REFS.get(i, DEFAULT_REF) for i in grid0.ids}
    loads = {i: RlLoad(cfg.load_r, cfg.load_l) for i in grid0.ids}
    events: list[Event] = [
        PlugIn(cfg.t_plug, dgu10, lines10, controllers[10], BENCHMARK_REFS[10], RlLoad(cfg.load_r, cfg.load_l)),
        LoadStep(cfg.t_load, 10, RlLoad(cfg.load_step_r, cfg.load_l)),
    ]
    events += [LineTrip(cfg.t_trip, a, b) for a, b in BENCHMARK_TRIPS]
    return Scenario(
        grid0,
        {i: controllers[i] for i in grid0.ids},
        refs,
        loads,
        tuple(events),
        cfg.t_end,
        cfg.step_s,
        cfg.record_every,
    )


def clock_drift_scenario(
    cfg: BenchmarkConfig | None = None,
    controllers: Mapping[int, Controller] | None = None,
    shifts: Mapping[int, float] | None = None,
) -> Scenario:
    """The benchmark with constant clock phase errors from t = 0."""
    base = benchmark_scenario(cfg, controllers)
    shifts = CLOCK_DRIFT_DEG if shifts is None else shifts
    extra = tuple(ClockShift(0.0, i, th) for i, th in sorted(shifts.items()))
    # DGU 10 is not present at t = 0; its shift takes effect when it plugs in.
    plug_t = {ev.dgu.id: ev.time for ev in base.events if isinstance(ev, PlugIn)}
    extra = tuple(dataclasses.replace(e, time=plug_t.get(e.dgu, 0.0)) for e in extra)
    return dataclasses.replace(base, events=base.events + extra)


def shifted_spectrum(grid: GridSpec, controllers: Mapping[int, Controller], thetas: Mapping[int, float]) -> np.ndarray:
    """Eigenvalues of the closed loop with rotated gains and no loads."""
    gains = {i: _gain_of(controllers[i]) for i in grid.ids}
    seg = build_segment(grid, gains, {}, {}, thetas)
    return np.linalg.eigvals(seg.a)


# --- metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class EventWindow:
    """Metrics over ``[start, stop)``, keyed by DGU id."""

    start: float
    stop: float
    label: str
    recovery_time: dict
    settling_time: dict
    steady_state_error: dict
    max_freq_dev: dict


@dataclass(frozen=True)
class Metrics:
    times: np.ndarray
    ids: tuple[int, ...]
    tracking_error: np.ndarray  # pu, max over d and q
    frequency: np.ndarray  # Hz, NaN where undefined
    rms: np.ndarray  # pu
    windows: tuple[EventWindow, ...]
    tracking_tol: float
    f0: float

    def to_dict(self) -> dict:
        def clean(d):
            return {str(k): (None if v is None or not np.isfinite(v) else float(v)) for k, v in d.items()}

        return {
            "schema": SCHEMA_VERSION,
            "ids": list(self.ids),
            "tracking_tol_pu": self.tracking_tol,
            "f0_hz": self.f0,
            "windows": [
                {
                    "start": w.start,
                    "stop": w.stop,
                    "label": w.label,
                    "recovery_time_s": clean(w.recovery_time),
                    "settling_time_2pct_s": clean(w.settling_time),
                    "steady_state_error_pu": clean(w.steady_state_error),
                    "max_freq_dev_hz": clean(w.max_freq_dev),
                }
                for w in self.windows
            ],
        }


def _smooth(x: np.ndarray, n: int) -> np.ndarray:
    """Trailing moving average over each run of finite values."""
    out = np.full_like(x, np.nan)
    ok = np.isfinite(x)
    edges = np.flatnonzero(np.diff(np.r_[0, ok.astype(int), 0]))
    for s, e in zip(edges[::2], edges[1::2]):
        m = min(n, e - s)
        out[s:e] = uniform_filter1d(x[s:e], size=m, mode="nearest", origin=(m - 1) // 2)
    return out


def frequency_trace(
    times: np.ndarray, v_dq: np.ndarray, omega0: float, window_s: float = FREQ_WINDOW_S, floor: float = 0.0
) -> np.ndarray:
    """Instantaneous frequency (Hz) of a dq voltage, one column per DGU.

    The dq components are smoothed by a trailing moving average of ``window_s``
    before the phase angle is differentiated.  Samples whose amplitude is at
    or below ``floor`` are NaN.
    """
    f0 = omega0 / (2 * np.pi)
    times = np.asarray(times, dtype=float)
    v_dq = np.asarray(v_dq, dtype=float)
    single = v_dq.ndim == 2
    if single:
        v_dq = v_dq[:, None, :]
    out = np.full(v_dq.shape[:2], np.nan)
    if len(times) < 2:
        return out[:, 0] if single else out
    dt = float(np.median(np.diff(times)))
    n = max(1, int(round(window_s / dt)))
    for c in range(v_dq.shape[1]):
        vd, vq = _smooth(v_dq[:, c, 0], n), _smooth(v_dq[:, c, 1], n)
        amp = np.hypot(vd, vq)
        ok = np.isfinite(amp) & (amp > floor)
        edges = np.flatnonzero(np.diff(np.r_[0, ok.astype(int), 0]))
        for s, e in zip(edges[::2], edges[1::2]):
            if e - s < 2:
                continue
            ang = np.unwrap(np.arctan2(vq[s:e], vd[s:e]))
            out[s:e, c] = f0 + np.gradient(ang, times[s:e]) / (2 * np.pi)
    return out[:, 0] if single else out


def _last_exceedance(t: np.ndarray, err: np.ndarray, tol) -> float:
    bad = ~(err <= tol)
    if not bad.any():
        return 0.0
    k = int(np.flatnonzero(bad)[-1])
    if k == len(t) - 1:
        return float("inf")
    return float(t[k + 1] - t[0])


def compute_metrics(traj: Trajectory, omega0: float = 2 * np.pi * 50, tracking_tol: float = 1e-3) -> Metrics:
    """Tracking, frequency and amplitude metrics, split at every event time.

    ``recovery_time`` is the time after a window start until the tracking
    error stays within ``tracking_tol`` (pu) for the rest of the window;
    ``settling_time`` uses a 2% band of the reference magnitude instead.
    Infinite values mean the bound is still violated at the window end.
    """
    vb = traj.v_base
    t = traj.times
    err = np.max(np.abs(traj.outputs - traj.refs), axis=-1) / vb
    freq = frequency_trace(t, traj.outputs / vb, omega0, floor=AMPLITUDE_FLOOR_PU)
    rms = np.hypot(traj.outputs[..., 0], traj.outputs[..., 1]) / (np.sqrt(2) * vb)
    ref_mag = np.hypot(traj.refs[..., 0], traj.refs[..., 1]) / vb
    f0 = omega0 / (2 * np.pi)

    cuts = sorted({0.0} | {tm for tm, _ in traj.events if tm > 0})
    labels = {0.0: "start"}
    for tm, lab in traj.events:
        labels[tm] = lab if tm not in labels or labels[tm] == "start" else labels[tm] + "; " + lab
    t_last = float(t[-1]) if len(t) else 0.0
    windows = []
    for w, start in enumerate(cuts):
        stop = cuts[w + 1] if w + 1 < len(cuts) else t_last + traj.step_s
        m = (t >= start - 1e-12) & (t < stop - 1e-12)
        rec, sett, sse, fdev = {}, {}, {}, {}
        if m.sum() >= 1:
            tw = t[m]
            tail = tw >= tw[0] + 0.9 * (tw[-1] - tw[0])
            for c, i in enumerate(traj.ids):
                e = err[m, c]
                if np.all(np.isnan(e)):
                    continue
                rec[i] = _last_exceedance(tw, e, tracking_tol)
                sett[i] = _last_exceedance(tw, e, 0.02 * ref_mag[m, c])
                sse[i] = float(np.nanmean(e[tail]))
                fw = freq[m, c]
                fdev[i] = float(np.nanmax(np.abs(fw - f0))) if np.any(np.isfinite(fw)) else float("nan")
        windows.append(EventWindow(start, stop, labels.get(start, ""), rec, sett, sse, fdev))
    return Metrics(t, traj.ids, err, freq, rms, tuple(windows), tracking_tol, f0)


# --- abc/dq transforms --------------------------------------------------------


def dq_to_abc(v_dq, omega0: float, t, theta0: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse Park transform, amplitude-invariant.

    ``v_a = V_d cos(phi) - V_q sin(phi)`` with ``phi = omega0 t + theta0``;
    phases b and c lag by 120 and 240 degrees.  The phase peak equals ``|V_dq|``.
    """
    v = np.asarray(v_dq, dtype=float)
    phi = omega0 * np.asarray(t, dtype=float) + theta0
    vd, vq = v[..., 0], v[..., 1]
    out = []
    for shift in (0.0, -2 * np.pi / 3, 2 * np.pi / 3):
        out.append(vd * np.cos(phi + shift) - vq * np.sin(phi + shift))
    return tuple(out)


def abc_to_dq(v_a, v_b, v_c, omega0: float, t, theta0: float = 0.0) -> np.ndarray:
    """Forward Park transform matching :func:`dq_to_abc`."""
    phi = omega0 * np.asarray(t, dtype=float) + theta0
    vd = np.zeros(np.broadcast(v_a, phi).shape)
    vq = np.zeros_like(vd)
    for v, shift in ((v_a, 0.0), (v_b, -2 * np.pi / 3), (v_c, 2 * np.pi / 3)):
        vd = vd + np.asarray(v) * np.cos(phi + shift)
        vq = vq - np.asarray(v) * np.sin(phi + shift)
    return np.stack([2 * vd / 3, 2 * vq / 3], axis=-1)


# --- I/O ----------------------------------------------------------------------

CSV_HEADER = ("t", "dgu", "Vd", "Vq", "Itd", "Itq", "vd", "vq", "ud", "uq")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r, tm in enumerate(traj.times):
            for c, i in enumerate(traj.ids):
                x = traj.states[r, c]
                if np.isnan(x[0]):
                    continue
                w.writerow([repr(float(tm)), i, *map(lambda v: repr(float(v)), x), *map(lambda v: repr(float(v)), traj.inputs[r, c])])


def read_trajectory_csv(path) -> dict[int, np.ndarray]:
    """Rows grouped per DGU as arrays with the CSV column order."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out: dict[int, np.ndarray] = {}
    if data.size == 0:
        return out
    for i in np.unique(data[:, 1]).astype(int):
        out[int(i)] = data[data[:, 1] == i]
    return out


def _load_to_dict(load: LoadModel) -> dict:
    if isinstance(load, RlLoad):
        return {"kind": "rl", "r": load.r, "l": load.l}
    return {"kind": "current", "i_d": load.i_d, "i_q": load.i_q}


def _load_from_dict(d: Mapping) -> LoadModel:
    kind = d.get("kind")
    if kind == "rl":
        return RlLoad(float(d["r"]), float(d.get("l", 0.0)))
    if kind == "current":
        return ConstantCurrent(float(d.get("i_d", 0.0)), float(d.get("i_q", 0.0)))
    raise ScenarioError(f"unknown load kind {kind!r}")


def _event_to_dict(ev: Event) -> dict:
    from .synthesis import controller_to_dict

    if isinstance(ev, PlugIn):
        d = {
            "kind": "plug_in",
            "dgu": {"id": ev.dgu.id, "r_t": ev.dgu.r_t, "l_t": ev.dgu.l_t, "c_t": ev.dgu.c_t},
            "lines": [{"a": ln.a, "b": ln.b, "r": ln.r, "l": ln.l} for ln in ev.lines],
            "ref": list(ev.ref),
        }
        if ev.controller is not None:
            d["controller"] = controller_to_dict(ev.controller)
        if ev.load is not None:
            d["load"] = _load_to_dict(ev.load)
    elif isinstance(ev, PlugOut):
        d = {"kind": "plug_out", "dgu": ev.dgu}
    elif isinstance(ev, LineTrip):
        d = {"kind": "line_trip", "a": ev.a, "b": ev.b}
    elif isinstance(ev, LineAdd):
        d = {"kind": "line_add", "line": {"a": ev.line.a, "b": ev.line.b, "r": ev.line.r, "l": ev.line.l}}
    elif isinstance(ev, LoadStep):
        d = {"kind": "load_step", "dgu": ev.dgu, "load": _load_to_dict(ev.load)}
    elif isinstance(ev, RefStep):
        d = {"kind": "ref_step", "dgu": ev.dgu, "v_d_ref": ev.v_d_ref, "v_q_ref": ev.v_q_ref}
    elif isinstance(ev, ClockShift):
        d = {"kind": "clock_shift", "dgu": ev.dgu, "theta": ev.theta}
    else:
        raise ScenarioError(f"unsupported event {ev!r}")
    return {"time": ev.time, **d}


def _line(d: Mapping) -> LineParams:
    return LineParams(int(d["a"]), int(d["b"]), float(d["r"]), float(d.get("l", 0.0)))


def _event_from_dict(d: Mapping) -> Event:
    from .synthesis import controller_from_dict

    t = float(d["time"])
    kind = d.get("kind")
    if kind == "plug_in":
        g = d["dgu"]
        ctrl = controller_from_dict(d["controller"]) if "controller" in d else None
        load = _load_from_dict(d["load"]) if "load" in d else None
        ref = tuple(float(v) for v in d.get("ref", (0.0, 0.0)))
        dgu = DguParams(int(g["id"]), float(g["r_t"]), float(g["l_t"]), float(g["c_t"]))
        return PlugIn(t, dgu, tuple(_line(ln) for ln in d.get("lines", ())), ctrl, ref, load)
    if kind == "plug_out":
        return PlugOut(t, int(d["dgu"]))
    if kind == "line_trip":
        return LineTrip(t, int(d["a"]), int(d["b"]))
    if kind == "line_add":
        return LineAdd(t, _line(d["line"]))
    if kind == "load_step":
        return LoadStep(t, int(d["dgu"]), _load_from_dict(d["load"]))
    if kind == "ref_step":
        return RefStep(t, int(d["dgu"]), float(d["v_d_ref"]), float(d["v_q_ref"]))
    if kind == "clock_shift":
        return ClockShift(t, int(d["dgu"]), float(d["theta"]))
    raise ScenarioError(f"unknown event kind {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    from .synthesis import controller_to_dict

    return {
        "schema": SCHEMA_VERSION,
        "grid": model.grid_to_dict(sc.grid0),
        "controllers": [controller_to_dict(sc.controllers[i]) for i in sorted(sc.controllers)],
        "refs": {str(i): list(r) for i, r in sorted(sc.refs0.items())},
        "loads": {str(i): _load_to_dict(ld) for i, ld in sorted(sc.loads0.items())},
        "events": [_event_to_dict(ev) for ev in sc.events],
        "t_end": sc.t_end,
        "v_base": sc.v_base,
        "solver": {"method": sc.method, "step_s": sc.step_s, "record_every": sc.record_every},
    }


def scenario_from_dict(d: Mapping, synthesis: SynthesisOptions | None = None) -> Scenario:
    """Build a scenario; controllers missing from the file are synthesized."""
    from .synthesis import controller_from_dict

    if d.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}")
    try:
        grid = model.grid_from_dict(d["grid"])
        events = tuple(_event_from_dict(e) for e in d.get("events", ()))
        ctrls = {}
        for c in d.get("controllers", ()):
            ctrl = controller_from_dict(c)
            ctrls[ctrl.dgu_id] = ctrl
        refs = {int(i): tuple(map(float, r)) for i, r in d.get("refs", {}).items()}
        loads = {int(i): _load_from_dict(ld) for i, ld in d.get("loads", {}).items()}
        solver = d.get("solver", {})
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from None
    missing = [x for x in grid.dgus if x.id not in ctrls]
    missing += [e.dgu for e in events if isinstance(e, PlugIn) and e.controller is None and e.dgu.id not in ctrls]
    if missing:
        sub = GridSpec(tuple(missing), (), grid.omega0, grid.sigma_bar)
        ctrls.update({i: c for i, (c, _) in synthesize_all(sub, synthesis).items()})
    return Scenario(
        grid,
        ctrls,
        refs,
        loads,
        events,
        float(d.get("t_end", 1.0)),
        float(solver.get("step_s", 20e-6)),
        int(solver.get("record_every", 1)),
        float(d.get("v_base", 1.0)),
        str(solver.get("method", "rk4")),
    )


def save_scenario(path, sc: Scenario) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=1)


def load_scenario(path, synthesis: SynthesisOptions | None = None) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh), synthesis)
