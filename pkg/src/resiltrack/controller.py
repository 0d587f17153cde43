"""Delay-compensating controller pieces.

The closed-loop simulator runs a compiled copy of the same arithmetic; the
functions here are the reference implementation used by tests and by the
open-loop linear demo.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .dynamics import cw_expm, cw_expm_integral, cw_matrix, expm_batch, rotation_of
from .input_geometry import ConvexPolygon2, zonotope_of_inputs
from .reference import BHAT, SteeringError


class BufferUnderrun(LookupError):
    pass


class DelayBuffer:
    """Ring buffer of uniformly spaced samples.

    Parameters
    ----------
    dt : float
        Sample period.
    capacity : int
        Number of samples kept.
    width : int
        Length of each sample vector.
    """

    def __init__(self, dt, capacity, width):
        self.dt = float(dt)
        self.capacity = int(capacity)
        self._data = np.zeros((self.capacity, width))
        self._t0 = None
        self._count = 0

    @property
    def t_first(self):
        if self._count == 0:
            return None
        return self._t0 + max(0, self._count - self.capacity) * self.dt

    @property
    def t_last(self):
        return None if self._count == 0 else self._t0 + (self._count - 1) * self.dt

    def push(self, t, v):
        if self._count == 0:
            self._t0 = float(t)
        elif abs(t - (self.t_last + self.dt)) > 1e-9 * max(1.0, abs(t)):
            raise ValueError("samples must be pushed on a uniform grid")
        self._data[self._count % self.capacity] = v
        self._count += 1

    def _index(self, t):
        if self._count == 0:
            raise BufferUnderrun("buffer underrun: empty")
        k = (t - self._t0) / self.dt
        ki = int(round(k))
        if abs(k - ki) > 1e-6:
            raise BufferUnderrun(f"time {t} is not on the buffer grid")
        if ki < max(0, self._count - self.capacity) or ki >= self._count:
            raise BufferUnderrun(f"buffer underrun at t = {t}")
        return ki

    def at(self, t):
        return self._data[self._index(t) % self.capacity].copy()


class ControllerBuffers:
    """Histories needed by the predictor: X, body-frame Bu, w and bearing."""

    def __init__(self, dt, tau):
        n = int(round(tau / dt))
        cap = 2 * n + 4
        self.dt, self.tau = dt, tau
        self.X = DelayBuffer(dt, cap, 4)
        self.bu = DelayBuffer(dt, cap, 2)
        self.w = DelayBuffer(dt, cap, 1)
        self.theta = DelayBuffer(dt, cap, 1)


def _delayed_w(buffers, s, tau):
    """w(s - tau); zero before the start of the record."""
    q = s - tau
    if q < -1e-9 * buffers.dt:
        return 0.0
    return float(buffers.w.at(max(q, 0.0))[0])


def predict_state(params, buffers, t, tau, c_fail, quadrature="zoh"):
    """Predict X(t) from X(t - tau) and the inputs applied since.

    ``X_p = exp(A tau) X(t - tau) + int exp(A (t - s)) r R(s) (B u(s) + C w(s - tau)) ds``
    over ``[t - tau, t]``.

    Parameters
    ----------
    params : CwParams
    buffers : ControllerBuffers
    t : float
    tau : float
        Window length; the actuation delay itself is ``buffers.tau`` and a
        shorter window is used only while the record is still filling.
    c_fail : ndarray, shape (4,)
        Column of the uncontrolled thruster.
    quadrature : {"zoh", "trapezoid"}
        ``"zoh"`` integrates the held inputs exactly; ``"trapezoid"`` uses
        the trapezoid rule on the buffer grid with the last input held at
        the right end.

    Raises
    ------
    BufferUnderrun
        If the buffers do not cover ``[t - tau, t]``.
    """
    dt = buffers.dt
    n = int(round(tau / dt))
    if abs(n * dt - tau) > 1e-9:
        raise ValueError("tau must be a multiple of the buffer period")
    if n == 0:
        return buffers.X.at(t)
    r = params.thrust_ratio_r
    c2 = np.asarray(c_fail, dtype=float)[2:]
    s0 = t - tau
    Xp = cw_expm(params, tau) @ buffers.X.at(s0)
    vs, ths = [], []
    for j in range(n):
        s = s0 + j * dt
        vs.append(buffers.bu.at(s) + c2 * _delayed_w(buffers, s, buffers.tau))
        ths.append(buffers.theta.at(s)[0])
    if quadrature == "zoh":
        Gam = cw_expm_integral(params, dt)
        for j in range(n):
            v4 = np.r_[0.0, 0.0, vs[j]]
            Xp += cw_expm(params, (n - 1 - j) * dt) @ Gam @ (r * rotation_of(ths[j]) @ v4)
    elif quadrature == "trapezoid":
        try:
            th_end = buffers.theta.at(t)[0]
        except BufferUnderrun:
            th_end = ths[-1]
        nodes = list(zip(vs, ths)) + [(vs[-1], th_end)]
        for j, (v, th) in enumerate(nodes):
            wt = 0.5 if j in (0, n) else 1.0
            v4 = np.r_[0.0, 0.0, v]
            Xp += wt * dt * cw_expm(params, (n - j) * dt) @ (r * rotation_of(th) @ v4)
    else:
        raise ValueError("quadrature must be 'zoh' or 'trapezoid'")
    return Xp


def feedback_law(t, X_p, x_ref, p_ref, w_delayed, gains, theta, layout):
    """Body-frame target ``Bu = -C w_d + R^T p_ref + R^T BK (X_ref - X_p)``.

    Parameters
    ----------
    t : float
        Current time (for the record; the law is time-invariant).
    X_p, x_ref : array_like, shape (4,)
    p_ref : array_like, shape (2,)
        Reference thrust in the (e3, e4) plane.
    w_delayed : float
    gains : GainSet
    theta : float
        Current bearing.
    layout : ThrusterLayout

    Returns
    -------
    ndarray, shape (4,)
        Rows 1-2 are zero.
    """
    Rt = rotation_of(theta).T
    p4 = np.r_[0.0, 0.0, np.asarray(p_ref, dtype=float)]
    BK = layout.b_ctrl @ gains.K
    out = -layout.c_fail * w_delayed + Rt @ p4 + Rt @ (BK @ (np.asarray(x_ref, float) - np.asarray(X_p, float)))
    out[:2] = 0.0
    return out


@lru_cache(maxsize=32)
def _alloc_data(key):
    B2 = np.frombuffer(key[0]).reshape(key[1])
    poly = zonotope_of_inputs(B2.T)
    return np.ascontiguousarray(B2), poly


def allocation_data(b_ctrl):
    """Planar actuator rows and the polygon they span."""
    B2 = np.ascontiguousarray(np.asarray(b_ctrl, dtype=float)[-2:])
    return _alloc_data((B2.tobytes(), B2.shape))


def allocate(target_bu, b_ctrl):
    """Thruster levels realising a body-frame target with minimum total throttle.

    Parameters
    ----------
    target_bu : array_like, shape (2,) or (4,)
        Target in the (e3, e4) plane (a 4-vector uses its last two rows).
    b_ctrl : ndarray, shape (4, m) or (2, m)

    Returns
    -------
    u : ndarray, shape (m,)
        Levels in [0, 1].
    saturated : bool
        True when the target is outside the reachable set; ``u`` then
        realises the closest reachable point.
    """
    tg = np.asarray(target_bu, dtype=float).reshape(-1)[-2:].copy()
    B2, poly = allocation_data(b_ctrl)
    u = np.zeros(B2.shape[1])
    sat = _kernels.allocate_nb(tg, B2, poly.vertices, poly.normals, poly.offsets, u)
    return u, bool(sat)


@dataclass(frozen=True)
class StabilizerSignal:
    """Minimum-energy input driving y0 to 0 by t_f, zero afterwards."""

    A: np.ndarray
    input_mat: np.ndarray
    t_f: float
    lam: np.ndarray
    eps_budget: float

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((len(t), self.input_mat.shape[1]))
        if self.t_f > 0:
            act = (t >= 0) & (t <= self.t_f)
            if np.any(act):
                E = expm_batch(self.A, self.t_f - t[act])
                out[act] = (self.lam @ E) @ self.input_mat
        return out


def _gramian_generic(A, Bm, T, n=512):
    ts = np.linspace(0.0, T, n + 1)
    E = expm_batch(A, ts) @ Bm
    F = E @ np.swapaxes(E, 1, 2)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return np.einsum("k,kij->ij", w, F) * (T / n) / 3.0


def finite_time_stabilizer(params, y0, eps_budget, t_grid=None, A=None, input_mat=None, t_cap=1e5, n_peak=257):
    """Shortest-horizon minimum-energy steering of y0 to 0 within an input budget.

    Horizons are scanned on a log grid from 1e-3 s to ``t_cap``; the first
    one whose peak input norm is within ``eps_budget`` is refined by
    bisection against the previous (infeasible) grid point.

    Parameters
    ----------
    params : CwParams or None
        Supplies A = CW matrix and input matrix r Bh when ``A`` is None.
    y0 : array_like, shape (n,)
    eps_budget : float
    t_grid : array_like, optional
        If given, the signal is returned sampled on it.

    Returns
    -------
    p_eps : StabilizerSignal or ndarray
    t_f : float

    Raises
    ------
    SteeringError
        If no horizon up to ``t_cap`` meets the budget.
    """
    if eps_budget <= 0:
        raise ValueError("eps_budget must be > 0")
    if A is None:
        A = cw_matrix(params)
        input_mat = params.thrust_ratio_r * BHAT
    A = np.asarray(A, dtype=float)
    Bm = np.asarray(input_mat, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if not np.any(y0):
        sig = StabilizerSignal(A, Bm, 0.0, np.zeros(len(y0)), eps_budget)
        return (sig(t_grid) if t_grid is not None else sig), 0.0

    def solve(T):
        W = _gramian_generic(A, Bm, T)
        rhs = -expm(A * T) @ y0
        # least squares also covers uncontrollable pairs with y0 in the reachable subspace
        lam = np.linalg.lstsq(W, rhs, rcond=1e-12)[0]
        if np.linalg.norm(W @ lam - rhs) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
            return None, np.inf
        sig = StabilizerSignal(A, Bm, float(T), lam, eps_budget)
        peak = np.max(np.linalg.norm(sig(np.linspace(0.0, T, n_peak)), axis=1))
        return sig, peak

    Ts = np.geomspace(1e-3, t_cap, 120)
    prev = None
    for T in Ts:
        sig, peak = solve(T)
        if peak <= eps_budget:
            break
        prev = T
    else:
        raise SteeringError(f"no horizon below {t_cap} s meets the budget")
    if prev is not None:
        lo, hi = prev, T
        for _ in range(50):
            mid = np.sqrt(lo * hi)
            s_mid, pk = solve(mid)
            if pk <= eps_budget:
                hi, sig = mid, s_mid
            else:
                lo = mid
            if hi / lo - 1 < 1e-9:
                break
    out = sig(t_grid) if t_grid is not None else sig
    return out, sig.t_f


@dataclass(frozen=True)
class LinearReference:
    """Reference of the linear demo: x' = A x + lift(p), p constant."""

    A: np.ndarray
    x0: np.ndarray
    p: np.ndarray

    def p_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.tile(self.p, (len(t), 1))

    @property
    def p_samples(self):
        return self.p[None, :]

    def x_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = self.A.shape[0]
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = self.A
        M[:n, n] = np.r_[np.zeros(n - 2), self.p]
        out = np.empty((len(t), n))
        for i, s in enumerate(t):
            out[i] = (expm(M * s) @ np.r_[self.x0, 1.0])[:n]
        return out


class OpenLoopDelayed:
    """Open-loop delayed controller for linear (non-rotating) dynamics.

    ``Bu(t) = p_ref(t)`` before ``T_c`` and afterwards
    ``p_ref(t) + p_eps(t - T_c) - exp(A T_c) C w(t - T_c)``, all in the
    (e3, e4) plane.
    """

    def __init__(self, ref, p_eps, w_history, T_c, A, layout):
        self.ref, self.p_eps, self.w, self.T_c = ref, p_eps, w_history, float(T_c)
        self.A = np.asarray(A, dtype=float)
        self.layout = layout
        self.ecw = (expm(self.A * self.T_c) @ layout.c_fail)[2:]

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.ref.p_at(t).astype(float)
        late = t >= self.T_c
        if np.any(late):
            s = t[late] - self.T_c
            out[late] += self.p_eps(s) - np.outer(self.w(s), self.ecw)
        return out


def open_loop_delayed(ref, p_eps, w_history, T_c, A, layout, w_max=1.0, tol=1e-9):
    """Build the open-loop delayed controller after checking its budget.

    The reference input hull plus the range of the stabilizer signal must
    fit in the eroded set at ``T_c``.

    Parameters
    ----------
    ref : object
        Provides ``p_at(t)`` and ``p_samples`` (planar reference inputs).
    p_eps : callable
        Stabilizer signal. Its samples on ``[0, t_f]`` enter the check; without
        a ``t_f`` attribute a disc of radius ``eps_budget`` is assumed.
    w_history : callable
        ``w(t)``; values for ``t < 0`` are not used.
    T_c : float
    A : ndarray, shape (4, 4)
    layout : ThrusterLayout

    Raises
    ------
    ValueError
        "budget exceeds P_Tc" when the inclusion fails.
    """
    from .input_geometry import p_set_at_time

    if not np.isfinite(T_c):
        raise ValueError("T_c must be finite")
    P = p_set_at_time(A, layout, T_c, w_max)
    eps = float(getattr(p_eps, "eps_budget", 0.0))
    if P is None:
        raise ValueError("budget exceeds P_Tc: set is empty")
    pr = np.atleast_2d(ref.p_samples)
    h_ref = np.max(pr @ P.normals.T, axis=0)
    t_f = float(getattr(p_eps, "t_f", np.inf))
    if np.isfinite(t_f):
        # support of the sampled correction signal (a disc of radius eps when the input is 2-D)
        pe = np.atleast_2d(p_eps(np.linspace(0.0, t_f, 2049)))
        h_eps = np.maximum(np.max(pe @ P.normals.T, axis=0), 0.0)
    else:
        h_eps = eps * np.linalg.norm(P.normals, axis=1)
    if np.any(h_ref + h_eps > P.offsets + tol):
        raise ValueError("budget exceeds P_Tc")
    return OpenLoopDelayed(ref, p_eps, w_history, T_c, A, layout)


def foh_matrices(A, h):
    """Phi, F1, F2 for exact propagation with inputs linear over a step."""
    n = A.shape[0]
    M = np.zeros((3 * n, 3 * n))
    M[:n, :n] = A
    M[:n, n : 2 * n] = np.eye(n)
    M[n : 2 * n, 2 * n :] = np.eye(n)
    E = expm(M * h)
    return E[:n, :n], E[:n, n : 2 * n], E[:n, 2 * n :]


def simulate_linear(A, layout, bu_fn, w_fn, x0, t_end, dt):
    """Propagate x' = A x + lift(Bu(t)) + c w(t) with inputs linear per step.

    ``bu_fn`` and ``w_fn`` map a time array to arrays of shape (n, 2) and
    (n,) respectively (or add a leading batch axis for both).
    """
    n = int(round(t_end / dt))
    t = dt * np.arange(n + 1)
    bu = np.asarray(bu_fn(t), dtype=float)
    w = np.asarray(w_fn(t), dtype=float)
    v = np.zeros(bu.shape[:-1] + (4,))
    v[..., 2:] = bu
    v = v + w[..., None] * layout.c_fail
    Phi, F1, F2 = foh_matrices(np.asarray(A, dtype=float), dt)
    X = np.empty(v.shape)
    x = np.broadcast_to(np.asarray(x0, dtype=float), v.shape[:-2] + (4,)).copy()
    X[..., 0, :] = x
    for k in range(n):
        dv = (v[..., k + 1, :] - v[..., k, :]) / dt
        x = x @ Phi.T + v[..., k, :] @ F1.T + dv @ F2.T
        X[..., k + 1, :] = x
    return t, X


def demo_system():
    """One-dimensional system x' = -x + 0.5 u + w embedded in the plane.

    Returns ``(A, layout)`` with A = -I and the controlled and uncontrolled
    columns (0.5, 0) and (1, 0).
    """
    from .dynamics import ThrusterLayout

    bbar = np.zeros((4, 2))
    bbar[2] = (0.5, 1.0)
    return -np.eye(4), ThrusterLayout(bbar, failed_index=2)


def linear_demo(n_seeds=100, horizon=10.0, lip_L=0.1, w_max=1.0, steps_per_tc=200, seed0=0):
    """Open-loop delayed tracking on :func:`demo_system`.

    The correction horizon is ``ln 2``, the only admissible reference input
    is ``(0.5, 0)`` and the chaser starts on the reference. Each seed draws a
    Lipschitz disturbance; the run lasts ``horizon + T_c``.

    Returns
    -------
    dict
        ``T_c``, ``rho`` (reach radius bound), ``final_err`` (per seed) and
        ``max_err_after_tc`` (per seed).
    """
    from .disturbance import DisturbanceSpec, sample_signal
    from .resilience import log_norm, reach_radius_bound

    A, layout = demo_system()
    T_c = float(np.log(2.0))
    dt = T_c / steps_per_tc
    t_end = horizon + T_c
    n = int(np.ceil(t_end / dt))
    t = dt * np.arange(n + 1)
    ref = LinearReference(A, np.zeros(4), np.array([0.5, 0.0]))
    p_eps = StabilizerSignal(A, BHAT, 0.0, np.zeros(4), 0.0)
    W = np.empty((n_seeds, n + 1))
    BU = np.empty((n_seeds, n + 1, 2))
    for i in range(n_seeds):
        W[i] = sample_signal(DisturbanceSpec("lipschitz", lip_L, w_max, seed0 + i), t)
        wi = W[i]
        ctl = open_loop_delayed(ref, p_eps, lambda s, wi=wi: np.interp(s, t, wi), T_c, A, layout, w_max)
        BU[i] = ctl(t)
    tt, X = simulate_linear(A, layout, lambda _: BU, lambda _: W, ref.x0, n * dt, dt)
    err = np.linalg.norm(X - ref.x_at(tt)[None], axis=2)
    rho = reach_radius_bound(w_max * np.linalg.norm(layout.c_fail), log_norm(A), T_c)
    return {
        "T_c": T_c,
        "rho": rho,
        "final_err": err[:, -1],
        "max_err_after_tc": err[:, tt >= T_c - 1e-12].max(axis=1),
    }
