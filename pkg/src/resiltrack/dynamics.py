"""Planar Clohessy-Wiltshire relative dynamics.

State ordering is ``(x, y, vx, vy)`` with ``x`` radial and ``y`` along-track.
Thrust acts on the velocity rows only and is expressed in the chaser body
frame, which points at the target, so the inertial input is ``r R(theta) v``
with ``theta = atan2(y, x)``.
"""

from dataclasses import dataclass, field
from math import factorial

import numpy as np

SQRT2 = np.sqrt(2.0)

# full actuator matrix, velocity rows only (thrusters 1..5)
_BBAR_ROWS = np.array(
    [
        [1.0, 1.0, -1.0, -SQRT2, -1.0],
        [1.0, -1.0, -1.0, 0.0, 1.0],
    ]
)


@dataclass(frozen=True)
class CwParams:
    """Orbit and propulsion constants.

    Parameters
    ----------
    omega : float
        Mean orbital rate of the target (1/s). Zero gives the double
        integrator.
    thrust_ratio_r : float
        Thrust-to-mass ratio of one thruster at full throttle (m/s^2).
    f_max : float
        Thrust of one thruster at full throttle (N).
    isp : float
        Specific impulse (s), used only to convert impulse to propellant mass.
    """

    omega: float = 0.00106
    thrust_ratio_r: float = 1.5e-4
    f_max: float = 0.09
    isp: float = 1650.0

    def __post_init__(self):
        for name in ("omega", "thrust_ratio_r", "f_max", "isp"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.omega < 0:
            raise ValueError("omega must be >= 0")
        if self.thrust_ratio_r <= 0 or self.f_max <= 0 or self.isp <= 0:
            raise ValueError("thrust_ratio_r, f_max and isp must be > 0")

    @property
    def period(self):
        """Orbital period 2 pi / omega in seconds (inf when omega is 0)."""
        return np.inf if self.omega == 0 else 2.0 * np.pi / self.omega


@dataclass(frozen=True)
class StateVec:
    """Relative position (m) and velocity (m/s) of the chaser."""

    x: float
    y: float
    vx: float
    vy: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("state entries must be finite")

    def as_array(self):
        return np.array([self.x, self.y, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float).reshape(4)
        return cls(*a.tolist())


def as_state_array(s):
    """Return a float 4-vector from a StateVec or array-like."""
    if isinstance(s, StateVec):
        return s.as_array()
    a = np.asarray(s, dtype=float)
    if a.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {a.shape}")
    return a


@dataclass(frozen=True)
class ThrusterLayout:
    """Actuator matrix and its split after one thruster stops obeying.

    Attributes
    ----------
    bbar : ndarray, shape (4, m)
        Full actuator matrix; rows 1-2 are zero.
    failed_index : int or None
        1-based index of the thruster that lost control authority.
    b_ctrl : ndarray, shape (4, m - 1) or (4, m)
        Columns still under control.
    c_fail : ndarray, shape (4,) or None
        Column of the uncontrolled thruster.
    ctrl_indices : tuple of int
        1-based indices of the columns of ``b_ctrl``.
    """

    bbar: np.ndarray
    failed_index: int | None = None
    b_ctrl: np.ndarray = field(default=None, repr=False)
    c_fail: np.ndarray | None = field(default=None, repr=False)
    ctrl_indices: tuple = ()

    def __post_init__(self):
        bbar = np.array(self.bbar, dtype=float)
        if bbar.ndim != 2 or bbar.shape[0] != 4:
            raise ValueError("bbar must have shape (4, m)")
        if np.any(bbar[:2] != 0):
            raise ValueError("rows 1-2 of bbar must be zero")
        bbar.setflags(write=False)
        object.__setattr__(self, "bbar", bbar)
        m = bbar.shape[1]
        if self.failed_index is None:
            keep = list(range(m))
            c = None
        else:
            if not 1 <= self.failed_index <= m:
                raise ValueError(f"failed_index must be in 1..{m}, got {self.failed_index}")
            keep = [j for j in range(m) if j != self.failed_index - 1]
            c = bbar[:, self.failed_index - 1].copy()
            c.setflags(write=False)
        b = bbar[:, keep].copy()
        b.setflags(write=False)
        object.__setattr__(self, "b_ctrl", b)
        object.__setattr__(self, "c_fail", c)
        object.__setattr__(self, "ctrl_indices", tuple(j + 1 for j in keep))

    @property
    def n_ctrl(self):
        return self.b_ctrl.shape[1]

    def plane_columns(self):
        """Controlled columns as 2-vectors in the (e3, e4) plane."""
        return self.b_ctrl[2:].T.copy()

    def plane_fail(self):
        """Uncontrolled column in the (e3, e4) plane, or None."""
        return None if self.c_fail is None else self.c_fail[2:].copy()


def default_layout():
    """Five-thruster layout with all thrusters healthy."""
    bbar = np.zeros((4, 5))
    bbar[2:] = _BBAR_ROWS
    return ThrusterLayout(bbar)


def split_layout(layout, failed_index):
    """Split ``layout.bbar`` into controlled and uncontrolled columns.

    Parameters
    ----------
    layout : ThrusterLayout
    failed_index : int or None
        1-based thruster index, or None for a healthy configuration.
    """
    return ThrusterLayout(layout.bbar, failed_index)


def cw_matrix(params):
    """State matrix of the planar CW equations."""
    w = params.omega
    return np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [3.0 * w * w, 0.0, 0.0, 2.0 * w],
            [0.0, 0.0, -2.0 * w, 0.0],
        ]
    )


def _trig_kernels(x):
    """Return f_m(x) = sum_j (-1)^j x^(2j) / (2j+m)! for m = 1..4.

    f1 = sin x / x, f2 = (1 - cos x) / x^2, f3 = (x - sin x) / x^3 and
    f4 = (1/2 - f2) / x^2. Small arguments use the series to avoid
    cancellation.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 0.5
    xs = np.where(small, x, 0.0)
    xb = np.where(small, 1.0, x)
    x2s = xs * xs
    out = []
    for m in (1, 2, 3, 4):
        acc = np.zeros_like(xs)
        for j in range(11, -1, -1):
            acc = acc * (-x2s) + 1.0 / factorial(2 * j + m)
        out.append(acc)
    s, c = np.sin(xb), np.cos(xb)
    x2 = xb * xb
    f1 = s / xb
    f2 = (1.0 - c) / x2
    f3 = (xb - s) / (x2 * xb)
    f4 = (0.5 - f2) / x2
    return tuple(np.where(small, o, f) for o, f in zip(out, (f1, f2, f3, f4)))


def cw_expm(params, t):
    """Closed-form state transition matrix exp(A t).

    Parameters
    ----------
    params : CwParams
    t : float or array_like
        Time(s) in seconds; negative values are allowed.

    Returns
    -------
    ndarray, shape (4, 4) or t.shape + (4, 4)
    """
    t = np.asarray(t, dtype=float)
    w = params.omega
    x = w * t
    f1, f2, f3, _ = _trig_kernels(x)
    c = np.cos(x)
    E = np.zeros(t.shape + (4, 4))
    E[..., 0, 0] = 4.0 - 3.0 * c
    E[..., 0, 2] = t * f1
    E[..., 0, 3] = 2.0 * w * t * t * f2
    E[..., 1, 0] = -6.0 * w**3 * t**3 * f3
    E[..., 1, 1] = 1.0
    E[..., 1, 2] = -2.0 * w * t * t * f2
    E[..., 1, 3] = -3.0 * t + 4.0 * t * f1
    E[..., 2, 0] = 3.0 * w * w * t * f1
    E[..., 2, 2] = c
    E[..., 2, 3] = 2.0 * w * t * f1
    E[..., 3, 0] = -6.0 * w**3 * t * t * f2
    E[..., 3, 2] = -2.0 * w * t * f1
    E[..., 3, 3] = 4.0 * c - 3.0
    return E


def cw_expm_integral(params, T):
    """Closed-form integral of exp(A s) over s in [0, T]."""
    T = np.asarray(T, dtype=float)
    w = params.omega
    f1, f2, f3, f4 = _trig_kernels(w * T)
    T2 = T * T
    G = np.zeros(T.shape + (4, 4))
    G[..., 0, 0] = 4.0 * T - 3.0 * T * f1
    G[..., 0, 2] = T2 * f2
    G[..., 0, 3] = 2.0 * w * T2 * T * f3
    G[..., 1, 0] = -6.0 * w**3 * T2 * T2 * f4
    G[..., 1, 1] = T
    G[..., 1, 2] = -2.0 * w * T2 * T * f3
    G[..., 1, 3] = -1.5 * T2 + 4.0 * T2 * f2
    G[..., 2, 0] = 3.0 * w * w * T2 * f2
    G[..., 2, 2] = T * f1
    G[..., 2, 3] = 2.0 * w * T2 * f2
    G[..., 3, 0] = -6.0 * w**3 * T2 * T * f3
    G[..., 3, 2] = -2.0 * w * T2 * f2
    G[..., 3, 3] = 4.0 * T * f1 - 3.0 * T
    return G


def expm_series(A, t, terms=40, squarings=None):
    """Scaling-and-squaring Taylor series of exp(A t), used as an oracle."""
    M = np.asarray(A, dtype=float) * float(t)
    nrm = np.linalg.norm(M, 1)
    if squarings is None:
        squarings = max(0, int(np.ceil(np.log2(nrm))) + 1) if nrm > 0.5 else 0
    M = M / 2.0**squarings
    E = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms + 1):
        term = term @ M / k
        E = E + term
    for _ in range(squarings):
        E = E @ E
    return E


def rotation_of(theta):
    """Block-diagonal rotation diag(I2, rot(theta))."""
    c, s = np.cos(theta), np.sin(theta)
    R = np.eye(4)
    R[2, 2], R[2, 3] = c, -s
    R[3, 2], R[3, 3] = s, c
    return R


def theta_of_state(s):
    """Bearing atan2(y, x) of the chaser, in (-pi, pi]."""
    a = as_state_array(s)
    if a[0] == 0.0 and a[1] == 0.0:
        raise ValueError("angle undefined at target")
    return float(np.arctan2(a[1], a[0]))


def step_exact(params, state, theta_hold, bu_plus_cw, dt):
    """Advance one zero-order-hold step with the body frame frozen.

    Parameters
    ----------
    params : CwParams
    state : StateVec or array_like
    theta_hold : float
        Bearing used for the whole step (rad).
    bu_plus_cw : array_like, shape (4,)
        Body-frame input ``B u + C w`` in thruster units; rows 1-2 are zero.
    dt : float
        Step length (s).

    Returns
    -------
    StateVec
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    v = np.asarray(bu_plus_cw, dtype=float)
    if v.shape != (4,) or np.any(v[:2] != 0):
        raise ValueError("bu_plus_cw must be a 4-vector with zero rows 1-2")
    X = as_state_array(state)
    Xn = cw_expm(params, dt) @ X + cw_expm_integral(params, dt) @ (
        params.thrust_ratio_r * rotation_of(theta_hold) @ v
    )
    return StateVec.from_array(Xn)


def nonlinear_rhs(params, X, body_input):
    """Right-hand side with the body frame tracking the current bearing."""
    A = cw_matrix(params)
    th = np.arctan2(X[1], X[0])
    return A @ X + params.thrust_ratio_r * rotation_of(th) @ body_input


def step_rk4(params, state, bu_plus_cw, dt, substeps=10):
    """RK4 on the rotating-frame dynamics; the body frame follows the state.

    Cross-validation counterpart of :func:`step_exact`.
    """
    X = as_state_array(state).copy()
    v = np.asarray(bu_plus_cw, dtype=float)
    h = dt / substeps
    for _ in range(substeps):
        k1 = nonlinear_rhs(params, X, v)
        k2 = nonlinear_rhs(params, X + 0.5 * h * k1, v)
        k3 = nonlinear_rhs(params, X + 0.5 * h * k2, v)
        k4 = nonlinear_rhs(params, X + h * k3, v)
        X = X + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return StateVec.from_array(X)


def is_cw_matrix(A, atol=0.0):
    """Return omega if ``A`` has the CW structure, else None."""
    A = np.asarray(A, dtype=float)
    if A.shape != (4, 4):
        return None
    w = A[2, 3] / 2.0
    if w < 0:
        return None
    ref = cw_matrix(CwParams(omega=w))
    if np.allclose(A, ref, rtol=0.0, atol=atol):
        return w
    return None


def expm_batch(A, ts):
    """exp(A t) for many t; closed form for CW matrices, scipy otherwise."""
    ts = np.asarray(ts, dtype=float)
    w = is_cw_matrix(A)
    if w is not None:
        return cw_expm(CwParams(omega=w), ts)
    from scipy.linalg import expm

    A = np.asarray(A, dtype=float)
    out = np.empty(ts.shape + A.shape)
    flat = out.reshape(-1, *A.shape)
    tf = ts.reshape(-1)
    chunk = 65536
    for i in range(0, tf.size, chunk):
        flat[i : i + chunk] = expm(tf[i : i + chunk, None, None] * A)
    return out
