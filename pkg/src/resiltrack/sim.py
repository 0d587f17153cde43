"""Closed-loop scenarios with actuation delay, metrics and the Pareto sweep."""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np

from ._kernels import allocate_many, closed_loop
from .controller import allocation_data
from .disturbance import DisturbanceSpec, sample_signal
from .dynamics import CwParams, cw_expm, cw_expm_integral, default_layout, split_layout
from .reference import Mission, ReferenceTrajectory, build_reference, kos_check
from .resilience import design_gains

G0 = 9.80665
DIVERGE_M = 1e6
TRACE_COLUMNS = [
    "t", "x", "y", "vx", "vy", "x_ref", "y_ref", "vx_ref", "vy_ref", "theta",
    "u1", "u2", "u3", "u5", "w", "bu_norm", "pos_err", "vel_err",
]


@dataclass(frozen=True)
class Scenario:
    """One closed-loop run.

    Parameters
    ----------
    params : CwParams
    failed_index : int
        1-based index of the thruster without control authority.
    tau : float
        Actuation delay (s), an integer multiple of ``dt``.
    disturbance : DisturbanceSpec or None
        None means no uncontrolled thrust.
    k : float or None
        Scalar gain of ``K = k S``; None designs it from the certificate.
    dt : float
        Control and sample period (s).
    duration : float or None
        Run length (s); defaults to the mission duration.
    x0_offset : tuple of 4 floats
        Initial state minus the reference initial state.
    success_threshold_m : float
    predictor : {"zoh", "trapezoid"}
    predictor_input : {"applied", "commanded"}
        Input history integrated by the predictor: the delivered thrust or
        the unsaturated feedback target.
    mission : Mission
    """

    params: CwParams = field(default_factory=CwParams)
    failed_index: int = 4
    tau: float = 0.2
    disturbance: DisturbanceSpec | None = field(default_factory=DisturbanceSpec)
    k: float | None = 472.0
    dt: float = 0.1
    duration: float | None = None
    x0_offset: tuple = (0.0, 0.0, 0.0, 0.0)
    success_threshold_m: float = 0.8
    predictor: str = "zoh"
    predictor_input: str = "applied"
    mission: Mission = field(default_factory=Mission)

    def __post_init__(self):
        if self.dt <= 0 or self.tau < 0:
            raise ValueError("dt must be > 0 and tau >= 0")
        n = round(self.tau / self.dt)
        if abs(n * self.dt - self.tau) > 1e-9 * max(1.0, self.tau):
            raise ValueError(f"tau = {self.tau} s is not an integer multiple of dt = {self.dt} s")
        if self.predictor not in ("zoh", "trapezoid"):
            raise ValueError("predictor must be 'zoh' or 'trapezoid'")
        if self.predictor_input not in ("applied", "commanded"):
            raise ValueError("predictor_input must be 'applied' or 'commanded'")
        if len(self.x0_offset) != 4:
            raise ValueError("x0_offset needs 4 entries")
        object.__setattr__(self, "x0_offset", tuple(float(v) for v in self.x0_offset))
        if self.duration is not None and self.duration < self.mission.duration - 1e-9:
            raise ValueError("duration must cover the mission")

    @property
    def n_delay(self):
        return int(round(self.tau / self.dt))

    @property
    def run_duration(self):
        return self.mission.duration if self.duration is None else float(self.duration)


@dataclass
class SimTrace:
    """Per-sample record of a run."""

    t: np.ndarray
    X: np.ndarray
    X_ref: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    w: np.ndarray
    bu_norm: np.ndarray
    pred_err: np.ndarray
    saturated: np.ndarray
    ctrl_indices: tuple

    @property
    def pos_err(self):
        return np.linalg.norm(self.X[:, :2] - self.X_ref[:, :2], axis=1)

    @property
    def vel_err(self):
        return np.linalg.norm(self.X[:, 2:] - self.X_ref[:, 2:], axis=1)

    def to_csv(self, path):
        """Write the trace with the fixed column set (u columns by thruster)."""
        cols = {f"u{j}": self.u[:, i] for i, j in enumerate(self.ctrl_indices)}
        n = len(self.t)
        us = [cols.get(f"u{j}", np.zeros(n)) for j in (1, 2, 3, 5)]
        data = np.column_stack(
            [self.t, self.X, self.X_ref, np.unwrap(self.theta), *us, self.w, self.bu_norm, self.pos_err, self.vel_err]
        )
        data += 0.0  # drop negative zeros
        np.savetxt(path, data, delimiter=",", header=",".join(TRACE_COLUMNS), comments="", fmt="%.17g")


@dataclass
class Metrics:
    """Summary of a run; field names carry units."""

    avg_pos_err_m: float
    max_pos_err_m: float
    avg_vel_err_mps: float
    max_vel_err_mps: float
    max_state_norm_diff: float
    max_pred_err: float
    J_u_Ns: float
    J_w_Ns: float
    J_ref_Ns: float
    m_u_kg: float
    m_w_kg: float
    m_ref_kg: float
    r_fuel: float | None
    min_kos_dist_m: float
    saturation_fraction: float
    success: bool
    diverged: bool
    tau_s: float
    k: float
    epsilon: float
    analytic_tolerance: float
    rho_ref: float

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@lru_cache(maxsize=8)
def _reference(params, mission, dt):
    return build_reference(params, mission, dt)


def scenario_reference(scn):
    """Reference sampled at the scenario period, held at rest after the mission."""
    ref = _reference(scn.params, scn.mission, scn.dt)
    n = int(round(scn.run_duration / scn.dt)) + 1
    if n <= len(ref):
        return ReferenceTrajectory(ref.t[:n], ref.X[:n], ref.p[:n], ref.dt)
    extra = n - len(ref)
    t = scn.dt * np.arange(n)
    X = np.vstack([ref.X, np.tile(ref.X[-1], (extra, 1))])
    p = np.vstack([ref.p, np.tile(ref.p[-1], (extra, 1))])
    return ReferenceTrajectory(t, X, p, ref.dt)


def scenario_gains(scn, ref=None):
    ref = scenario_reference(scn) if ref is None else ref
    layout = split_layout(default_layout(), scn.failed_index)
    lip = scn.disturbance.lip_L if scn.disturbance is not None else 0.0
    y0 = np.asarray(scn.x0_offset)
    gains = design_gains(scn.params, layout, ref.rho_ref, lip, scn.tau, k=scn.k)
    if np.any(y0):
        gains = design_gains(
            scn.params, layout, ref.rho_ref, lip, scn.tau, y0_pnorm=float(np.sqrt(y0 @ gains.P @ y0)), k=gains.k
        )
    return gains


def run_scenario(scn, gains=None):
    """Simulate one scenario.

    Each step predicts the current state from the delayed measurement,
    forms the feedback target, allocates thruster levels and advances the
    plant exactly with the bearing frozen over the step.

    Returns
    -------
    trace : SimTrace
        Truncated at the divergence step when the state blows up.
    metrics : Metrics
    """
    params = scn.params
    ref = scenario_reference(scn)
    layout = split_layout(default_layout(), scn.failed_index)
    gains = scenario_gains(scn, ref) if gains is None else gains
    t = ref.t
    if scn.disturbance is None:
        w = np.zeros(len(t))
    else:
        w = sample_signal(scn.disturbance, t)
    B2, poly = allocation_data(layout.b_ctrl)
    c2 = np.ascontiguousarray(layout.c_fail[2:])
    r = params.thrust_ratio_r
    N = scn.n_delay
    Phi = cw_expm(params, scn.dt)
    Gam_r = cw_expm_integral(params, scn.dt) * r
    PhiPow = np.ascontiguousarray(cw_expm(params, scn.dt * np.arange(N + 1)).reshape(N + 1, 4, 4))
    Gpred = np.ascontiguousarray(PhiPow @ Gam_r)
    BK = np.ascontiguousarray(layout.b_ctrl @ gains.K)
    X0 = ref.X[0] + np.asarray(scn.x0_offset)
    X, U, TH, PE, SAT, done = closed_loop(
        X0, Phi, Gam_r, PhiPow, Gpred, np.ascontiguousarray(ref.X), np.ascontiguousarray(ref.p), w, BK, B2, c2,
        poly.vertices, poly.normals, poly.offsets, N, scn.predictor == "trapezoid", scn.dt, r, DIVERGE_M,
        scn.predictor_input == "commanded",
    )
    n = len(t) - 1
    diverged = done < n
    keep = slice(0, done + 1)
    bu = U[keep] @ B2.T
    trace = SimTrace(
        t[keep], X[keep], ref.X[keep], TH[keep], U[keep], w[keep], np.linalg.norm(bu, axis=1), PE[keep], SAT[keep],
        layout.ctrl_indices,
    )
    return trace, compute_metrics(trace, ref, scn, gains=gains, diverged=diverged)


def reference_impulse(ref, params, layout):
    """Impulse (N s) of the controlled thrusters realising the reference input."""
    B2, poly = allocation_data(layout.b_ctrl)
    th = np.arctan2(ref.X[:, 1], ref.X[:, 0])
    c, s = np.cos(th), np.sin(th)
    p = ref.p
    body = np.column_stack([c * p[:, 0] + s * p[:, 1], -s * p[:, 0] + c * p[:, 1]])
    U, _ = allocate_many(np.ascontiguousarray(body[:-1]), B2, poly.vertices, poly.normals, poly.offsets)
    return params.f_max * ref.dt * float(U.sum())


def compute_metrics(trace, reference, scenario, gains=None, diverged=False):
    """Error, fuel and safety summary of a trace.

    Impulses integrate the held levels: ``J = f_max * sum_i int u_i dt``.
    Masses use ``m = J / (Isp g0)``.
    """
    params = scenario.params
    dt = scenario.dt
    layout = split_layout(default_layout(), scenario.failed_index)
    gains = scenario_gains(scenario, reference) if gains is None else gains
    pe = trace.pos_err
    ve = trace.vel_err
    dX = np.linalg.norm(trace.X - trace.X_ref, axis=1)
    n = len(trace.t)
    ref = ReferenceTrajectory(reference.t[:n], reference.X[:n], reference.p[:n], reference.dt)
    J_u = params.f_max * dt * float(trace.u[:-1].sum())
    J_w = params.f_max * dt * float(trace.w[:-1].sum())
    J_ref = reference_impulse(ref, params, layout)
    conv = 1.0 / (params.isp * G0)
    m_u, m_w, m_ref = J_u * conv, J_w * conv, J_ref * conv
    den = m_w + m_ref
    r_fuel = (m_u - m_w - m_ref) / den if den > 0 else None
    kos, _ = kos_check(trace.X, scenario.mission.kos_radius)
    max_pe = float(pe.max())
    return Metrics(
        avg_pos_err_m=float(pe.mean()),
        max_pos_err_m=max_pe,
        avg_vel_err_mps=float(ve.mean()),
        max_vel_err_mps=float(ve.max()),
        max_state_norm_diff=float(dX.max()),
        max_pred_err=float(np.max(trace.pred_err)),
        J_u_Ns=J_u,
        J_w_Ns=J_w,
        J_ref_Ns=J_ref,
        m_u_kg=m_u,
        m_w_kg=m_w,
        m_ref_kg=m_ref,
        r_fuel=r_fuel,
        min_kos_dist_m=float(kos),
        saturation_fraction=float(np.mean(trace.saturated)),
        success=bool(not diverged and max_pe <= scenario.success_threshold_m),
        diverged=bool(diverged),
        tau_s=float(scenario.tau),
        k=float(gains.k),
        epsilon=float(gains.epsilon),
        analytic_tolerance=float(gains.tolerance),
        rho_ref=float(reference.rho_ref),
    )


def _cell_run(args):
    scn = args
    _, m = run_scenario(scn)
    return m.max_pos_err_m, m.success


def worker_count():
    env = os.environ.get("RESIL_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("RESIL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def pareto_sweep(tau_grid, wmax_grid, base_scenario, seeds_per_cell=3, workers=None):
    """Success map over (tau, w_max) and the largest feasible w_max per tau.

    A cell succeeds when every seed keeps the position error within the
    scenario threshold. Seeds are ``base seed + i``.

    Returns
    -------
    dict
        ``cells``: list of per-cell records; ``front``: list of
        ``(tau, max_feasible_wmax)`` with 0.0 when no w_max succeeds.
    """
    taus = [float(v) for v in tau_grid]
    wms = [float(v) for v in wmax_grid]
    if not taus or not wms or seeds_per_cell < 1:
        raise ValueError("grids must be nonempty and seeds_per_cell >= 1")
    base_dist = base_scenario.disturbance or DisturbanceSpec()
    jobs, keys = [], []
    for tau in taus:
        for wm in wms:
            for i in range(seeds_per_cell):
                d = replace(base_dist, w_max=wm, seed=base_dist.seed + i)
                jobs.append(replace(base_scenario, tau=tau, disturbance=d))
                keys.append((tau, wm))
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_cell_run, jobs))
    else:
        results = [_cell_run(j) for j in jobs]
    cells = {}
    for key, (err, ok) in zip(keys, results):
        c = cells.setdefault(key, {"tau_s": key[0], "w_max": key[1], "max_pos_err_m": [], "success": True})
        c["max_pos_err_m"].append(err)
        c["success"] = c["success"] and ok
    front = []
    for tau in taus:
        good = [wm for wm in wms if cells[(tau, wm)]["success"]]
        front.append((tau, max(good) if good else 0.0))
    return {"cells": list(cells.values()), "front": front}
