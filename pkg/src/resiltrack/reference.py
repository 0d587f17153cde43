"""Inspection reference trajectory by minimum-energy steering.

The input ``p`` is the body-agnostic thrust vector in thruster units, so the
reference obeys ``x' = A x + r Bh p`` with ``Bh = [0; I2]``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._kernels import propagate_zoh
from .dynamics import as_state_array, cw_expm, cw_expm_integral, cw_matrix

BHAT = np.vstack([np.zeros((2, 2)), np.eye(2)])
REF_COLUMNS = ["t", "x_ref", "y_ref", "vx_ref", "vy_ref", "p3_ref", "p4_ref"]


class KosViolation(RuntimeError):
    """Reference enters the keep-out sphere."""

    def __init__(self, t, dist, radius):
        super().__init__(f"keep-out violation at t = {t:.1f} s: distance {dist:.3f} m < {radius} m")
        self.t, self.dist = t, dist


class SteeringError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mission:
    """Waypoints visited in order with equal transfer times.

    Parameters
    ----------
    waypoints : sequence of (x, y)
        Positions in metres; the chaser starts at rest on the first one and
        ends at rest on the last.
    transfer_time : float
        Duration of each leg (s).
    kos_radius : float
        Keep-out radius (m).
    initial_hold : float
        Time spent at rest on the first waypoint before the first transfer.
    rest_at_waypoints : bool
        Zero velocity at interior waypoints. When False the interior
        velocities are chosen to minimise the total input energy while
        keeping ``kos_radius + kos_margin`` clearance.
    kos_margin : float
        Extra clearance (m) demanded of the reference.
    waypoint_velocities : tuple of (vx, vy), optional
        Explicit interior waypoint velocities; skips the optimisation.
    """

    waypoints: tuple = ((0.0, 80.0), (-80.0, 0.0), (0.0, -80.0), (80.0, 0.0), (0.0, 80.0))
    transfer_time: float = 5400.0
    kos_radius: float = 50.0
    initial_hold: float = 5400.0
    rest_at_waypoints: bool = False
    kos_margin: float = 5.0
    waypoint_velocities: tuple | None = None

    def __post_init__(self):
        wp = tuple(tuple(float(c) for c in w) for w in self.waypoints)
        if len(wp) < 2 or any(len(w) != 2 for w in wp):
            raise ValueError("need at least two (x, y) waypoints")
        if self.transfer_time <= 0 or self.kos_radius <= 0 or self.initial_hold < 0 or self.kos_margin < 0:
            raise ValueError("transfer_time and kos_radius must be > 0, initial_hold and kos_margin >= 0")
        object.__setattr__(self, "waypoints", wp)
        if self.waypoint_velocities is not None:
            wv = tuple(tuple(float(c) for c in v) for v in self.waypoint_velocities)
            if len(wv) != len(wp) - 2 or any(len(v) != 2 for v in wv):
                raise ValueError("waypoint_velocities needs one (vx, vy) per interior waypoint")
            object.__setattr__(self, "waypoint_velocities", wv)

    @property
    def duration(self):
        return self.initial_hold + self.transfer_time * (len(self.waypoints) - 1)

    def waypoint_times(self):
        return self.initial_hold + self.transfer_time * np.arange(len(self.waypoints))


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Sampled reference on a uniform grid.

    ``p[k]`` is held over ``[t[k], t[k+1])`` and ``X`` is the exact
    zero-order-hold response, so re-propagation is exact up to rounding.
    """

    t: np.ndarray
    X: np.ndarray
    p: np.ndarray
    dt: float
    rho_ref: float = field(init=False)

    def __post_init__(self):
        norms = np.linalg.norm(self.p, axis=1)
        object.__setattr__(self, "rho_ref", float(norms.max()) if len(norms) else 0.0)

    def __len__(self):
        return len(self.t)

    def rho_ref_accel(self, params):
        """Peak reference acceleration r * rho_ref (m/s^2)."""
        return params.thrust_ratio_r * self.rho_ref

    def to_csv(self, path):
        data = np.column_stack([self.t, self.X, self.p])
        np.savetxt(path, data, delimiter=",", header=",".join(REF_COLUMNS), comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            head = fh.readline().strip().split(",")
        if head != REF_COLUMNS:
            raise ValueError(f"unexpected reference columns {head}")
        d = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = d[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.0
        return cls(t, d[:, 1:5], d[:, 5:7], dt)


def input_matrix(params):
    return params.thrust_ratio_r * BHAT


def gramian(params, T, n_quad=2048):
    """Controllability Gramian of (A, r Bh) over [0, T] by composite Simpson.

    Raises
    ------
    SteeringError
        If the condition number exceeds 1e14.
    """
    if T <= 0:
        raise ValueError("T must be > 0")
    n = int(n_quad) + int(n_quad) % 2
    ts = np.linspace(0.0, T, n + 1)
    E = cw_expm(params, ts)
    Bin = input_matrix(params)
    EB = E @ Bin
    F = EB @ np.swapaxes(EB, 1, 2)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    W = np.einsum("k,kij->ij", w, F) * (T / n) / 3.0
    W = 0.5 * (W + W.T)
    if np.linalg.cond(W) > 1e14:
        raise SteeringError(f"Gramian too ill-conditioned at T = {T}")
    return W


def _gramian_grid(params, h, n):
    """W(k h) for k = 0..n via W((k+1)h) = W(h) + E(kh) W(h) E(kh)^T summed."""
    Wh = gramian(params, h, 64) if h > 0 else np.zeros((4, 4))
    E = cw_expm(params, h * np.arange(n))
    terms = E @ Wh @ np.swapaxes(E, 1, 2)
    out = np.zeros((n + 1, 4, 4))
    np.cumsum(terms, axis=0, out=out[1:])
    return out


@dataclass(frozen=True)
class MinEnergyLeg:
    """Continuous minimum-energy transfer between two states."""

    params: object
    x0: np.ndarray
    T: float
    lam: np.ndarray
    t: np.ndarray
    X: np.ndarray
    p: np.ndarray

    def input_at(self, t):
        E = cw_expm(self.params, self.T - np.asarray(t, dtype=float))
        return np.swapaxes(E @ input_matrix(self.params), -1, -2) @ self.lam


def min_energy_transfer(params, x0, xg, T, dt):
    """Minimum-energy steering from ``x0`` to ``xg`` in time ``T``.

    The input is ``p(t) = r Bh^T exp(A^T (T - t)) W(T)^-1 (xg - exp(A T) x0)``
    and the state is evaluated in closed form on the grid ``0, dt, ..., T``.

    Raises
    ------
    SteeringError
        If the closed-form endpoint misses ``xg`` by more than 1e-6 m or
        1e-8 m/s.
    """
    x0 = as_state_array(x0)
    xg = as_state_array(xg)
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a positive integer multiple of dt")
    W = gramian(params, T)
    lam = np.linalg.solve(W, xg - cw_expm(params, T) @ x0)
    t = dt * np.arange(n + 1)
    Wt = _gramian_grid(params, dt, n)
    Erem = cw_expm(params, T - t)
    X = cw_expm(params, t) @ x0 + np.einsum("kij,kjl,l->ki", Wt, np.swapaxes(Erem, 1, 2), lam)
    p = np.einsum("ij,kjl,l->ki", input_matrix(params).T, np.swapaxes(Erem, 1, 2), lam)
    err = np.abs(X[-1] - xg)
    if err[:2].max() > 1e-6 or err[2:].max() > 1e-8:
        raise SteeringError(f"steering failed: endpoint miss {err}")
    return MinEnergyLeg(params, x0, float(T), lam, t, X, p)


def hold_thrust(params, X):
    """Thrust that keeps ``X`` stationary: A X + r Bh p = 0."""
    return -(cw_matrix(params) @ X)[2:] / params.thrust_ratio_r


def _least_norm_zoh(params, x0, dt, n_steps, cons):
    """Least-norm ZOH input sequence meeting linear state constraints.

    ``cons`` is a list of (step index, selector S, target S x).
    """
    Phi_pow = cw_expm(params, dt * np.arange(n_steps + 1))
    g = Phi_pow[:n_steps] @ (cw_expm_integral(params, dt) @ input_matrix(params))
    rows, rhs = [], []
    for n_j, S, target in cons:
        Gj = np.zeros((S.shape[0], n_steps, 2))
        # state at step n_j depends on p_k through g[n_j - 1 - k]
        Gj[:, :n_j, :] = np.einsum("ij,kjl->ikl", S, g[n_j - 1 :: -1] if n_j > 0 else g[:0])
        rows.append(Gj)
        rhs.append(target - S @ Phi_pow[n_j] @ x0)
    G = np.concatenate(rows, axis=0)
    d = np.concatenate(rhs)
    scale = np.sqrt(np.einsum("ikl,ikl->i", G, G))
    Gs = G / scale[:, None, None]
    M = np.einsum("ikl,jkl->ij", Gs, Gs)
    nu = np.linalg.solve(M, d / scale)
    p = np.einsum("ikl,i->kl", Gs, nu)
    # one step of iterative refinement against rounding in the normal equations
    r = d / scale - np.einsum("ikl,kl->i", Gs, p)
    p += np.einsum("ikl,i->kl", Gs, np.linalg.solve(M, r))
    return p


class _LegModel:
    """Discrete least-norm leg between full states on a coarse grid."""

    def __init__(self, params, T, h):
        n = int(round(T / h))
        Pk = cw_expm(params, h * np.arange(n + 1))
        Phi = Pk[1]
        Gin = cw_expm_integral(params, h) @ input_matrix(params)
        g = Pk[:n] @ Gin
        self.n, self.h, self.Pk, self.g = n, h, Pk, g
        self.Winv = np.linalg.inv(np.einsum("kij,klj->il", g, g))
        M = np.zeros((n + 1, 4, 4))
        for k in range(1, n + 1):
            M[k] = Phi @ M[k - 1] + Gin @ g[n - k].T
        self.M = M

    def solve(self, xs, xe):
        lam = self.Winv @ (xe - self.Pk[-1] @ xs)
        X = self.Pk @ xs + self.M @ lam
        p = np.einsum("kji,j->ki", self.g[::-1], lam)
        return X, p


@lru_cache(maxsize=16)
def _optimal_waypoint_velocities(params, mission, h=30.0, n_starts=24, seed=0):
    """Interior velocities minimising energy subject to keep-out clearance.

    The problem is nonconvex, so SLSQP is restarted from the rest solution
    and from ``n_starts`` seeded uniform draws; the best feasible local
    optimum wins.
    """
    from scipy.optimize import minimize

    wps = np.array(mission.waypoints)
    K = len(wps) - 1
    if K < 2:
        return ()
    leg = _LegModel(params, mission.transfer_time, h)
    R2 = (mission.kos_radius + mission.kos_margin) ** 2

    def states(v):
        S = [np.array([wps[0, 0], wps[0, 1], 0.0, 0.0])]
        for j in range(1, K):
            S.append(np.array([wps[j, 0], wps[j, 1], v[2 * j - 2], v[2 * j - 1]]))
        S.append(np.array([wps[-1, 0], wps[-1, 1], 0.0, 0.0]))
        return S

    def legs(v):
        S = states(v)
        return [leg.solve(S[j], S[j + 1]) for j in range(K)]

    def energy(v):
        return sum(float(np.sum(p * p)) for _, p in legs(v)) * h

    def clearance(v):
        X = np.vstack([X for X, _ in legs(v)])
        return (X[:, 0] ** 2 + X[:, 1] ** 2) / R2 - 1.0

    rng = np.random.Generator(np.random.PCG64(seed))
    starts = [np.zeros(2 * (K - 1))] + [rng.uniform(-0.2, 0.2, 2 * (K - 1)) for _ in range(n_starts)]
    best, best_f = None, np.inf
    for v0 in starts:
        res = minimize(
            energy, v0, method="SLSQP", constraints=[{"type": "ineq", "fun": clearance}],
            options={"maxiter": 300, "ftol": 1e-14},
        )
        if res.success and clearance(res.x).min() > -1e-6 and res.fun < best_f:
            best, best_f = res.x, res.fun
    if best is None:
        raise SteeringError("no waypoint velocities satisfy the keep-out clearance")
    return tuple((float(best[2 * j]), float(best[2 * j + 1])) for j in range(K - 1))


def waypoint_states(params, mission):
    """Full states (x, y, vx, vy) imposed at each waypoint."""
    wps = np.array(mission.waypoints)
    K = len(wps) - 1
    if mission.waypoint_velocities is not None:
        vel = mission.waypoint_velocities
    elif mission.rest_at_waypoints:
        vel = ((0.0, 0.0),) * (K - 1)
    else:
        vel = _optimal_waypoint_velocities(params, mission)
    V = np.zeros((K + 1, 2))
    V[1:K] = np.array(vel).reshape(-1, 2)
    return np.column_stack([wps, V])


def build_reference(params, mission=None, dt=1.0, check_kos=True):
    """Reference through the mission waypoints.

    The chaser holds at rest on the first waypoint, then flies each leg in
    ``mission.transfer_time`` and ends at rest on the last waypoint.
    Inputs are piecewise constant on the grid and have minimum total
    squared norm for the imposed waypoint states (see :func:`waypoint_states`).

    Parameters
    ----------
    params : CwParams
    mission : Mission, optional
    dt : float
        Grid step (s); transfer and hold times must be multiples of it.

    Returns
    -------
    ReferenceTrajectory

    Raises
    ------
    KosViolation
        If any sample comes closer to the target than the keep-out radius.
    """
    mission = Mission() if mission is None else mission
    n_leg = int(round(mission.transfer_time / dt))
    n_hold = int(round(mission.initial_hold / dt))
    if abs(n_leg * dt - mission.transfer_time) > 1e-9 or abs(n_hold * dt - mission.initial_hold) > 1e-9:
        raise ValueError("transfer and hold times must be integer multiples of dt")
    S = waypoint_states(params, mission)
    K = len(S) - 1
    I4 = np.eye(4)
    cons = [(j * n_leg, I4, S[j]) for j in range(1, K + 1)]
    p_tr = _least_norm_zoh(params, S[0], dt, K * n_leg, cons)
    p = np.vstack(
        [
            np.tile(hold_thrust(params, S[0]), (n_hold, 1)),
            p_tr,
            hold_thrust(params, S[-1])[None, :],
        ]
    )
    Phi = cw_expm(params, dt)
    Gin = cw_expm_integral(params, dt) @ input_matrix(params)
    X = propagate_zoh(Phi, Gin, S[0], p[:-1])
    t = dt * np.arange(len(X))
    ref = ReferenceTrajectory(t, X, p, float(dt))
    if check_kos:
        dmin, violated, i = kos_check(ref, mission.kos_radius, return_index=True)
        if violated:
            raise KosViolation(float(t[i]), dmin, mission.kos_radius)
    return ref


def resample(ref, params, dt):
    """Linear interpolation of p onto a new grid and exact ZOH re-propagation."""
    n = int(round(ref.t[-1] / dt))
    if abs(n * dt - ref.t[-1]) > 1e-9 * max(1.0, ref.t[-1]):
        raise ValueError("duration must be a multiple of the new dt")
    t = dt * np.arange(n + 1)
    p = np.column_stack([np.interp(t, ref.t, ref.p[:, i]) for i in range(2)])
    Phi = cw_expm(params, dt)
    Gin = cw_expm_integral(params, dt) @ input_matrix(params)
    X = propagate_zoh(Phi, Gin, ref.X[0], p[:-1])
    return ReferenceTrajectory(t, X, p, float(dt))


def kos_check(traj, kos_radius, return_index=False):
    """Minimum distance to the target over the samples and a violation flag.

    ``traj`` may be a ReferenceTrajectory or an (n, >=2) array of states.
    """
    X = traj.X if hasattr(traj, "X") else np.asarray(traj, dtype=float)
    if len(X) == 0:
        raise ValueError("empty trajectory")
    d = np.hypot(X[:, 0], X[:, 1])
    i = int(np.argmin(d))
    out = (float(d[i]), bool(d[i] < kos_radius))
    return out + (i,) if return_index else out
