"""Resilience verdicts, reachability radius and the tracking certificate."""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import cw_matrix, split_layout
from .input_geometry import (
    Segment2,
    disc_polygon,
    erode_by_segment,
    input_polygon,
    inscribed_radius_at_origin,
)

# sign pattern of the feedback gain, K = k * S
GAIN_SIGNS = np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [-1.0, -1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0, 1.0],
    ]
)


class InfeasibleGainsError(ValueError):
    """No gain in the search range meets the input budget."""


def log_norm(M):
    """Logarithmic 2-norm, the top eigenvalue of the symmetric part of M."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


@dataclass(frozen=True)
class SpectralData:
    """Eigenvalues of A and unit real eigenvectors of A^T.

    ``eigvecs_t`` holds one orthonormal basis (columns) per distinct real
    eigenvalue, listed in ``real_eigs``.
    """

    eigenvalues: np.ndarray
    real_eigs: tuple
    eigvecs_t: tuple

    @property
    def real_eigenvectors(self):
        """All basis vectors of the real eigenspaces of A^T, as rows."""
        if not self.eigvecs_t:
            return np.zeros((0, len(self.eigenvalues)))
        return np.vstack([V.T for V in self.eigvecs_t])


def spectral_data(A, tol=1e-9):
    """Spectrum of A and null-space bases of A^T - lambda I for real lambda."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    lam = np.linalg.eigvals(A)
    lam = lam[np.lexsort((lam.imag, lam.real))]
    reals = []
    for z in lam:
        if abs(z.imag) <= tol * scale and not any(abs(z.real - r) <= tol * scale for r in reals):
            reals.append(float(z.real))
    bases = []
    for r in reals:
        _, s, vt = np.linalg.svd(A.T - r * np.eye(n))
        null = vt[s <= tol * scale].T
        if null.shape[1] == 0:
            null = vt[-1:].T
        # fix signs so the largest entry is positive
        for j in range(null.shape[1]):
            i = np.argmax(np.abs(null[:, j]))
            if null[i, j] < 0:
                null[:, j] *= -1
        bases.append(null)
    return SpectralData(lam, tuple(reals), tuple(bases))


@dataclass
class Verdict:
    """Aggregate verdict with per-condition detail."""

    passed: bool
    conditions: list = field(default_factory=list)

    def to_dict(self):
        return {"passed": self.passed, "conditions": self.conditions}


def _lift(P2):
    P2 = np.atleast_2d(P2)
    out = np.zeros((len(P2), 4))
    out[:, 2:] = P2
    return out


def constrained_controllability_check(A, input_poly, mode="controllable", tol=1e-9):
    """Controllability (or finite-time stabilizability) test with a planar input set.

    Parameters
    ----------
    A : ndarray, shape (4, 4)
    input_poly : ConvexPolygon2
        Input set in the (e3, e4) plane; must contain the origin.
    mode : {"controllable", "stabilizable"}

    Returns
    -------
    Verdict
        Conditions: spectrum, rank, eigenvector.
    """
    if mode not in ("controllable", "stabilizable"):
        raise ValueError("mode must be 'controllable' or 'stabilizable'")
    if not input_poly.contains(np.zeros(2)):
        raise ValueError("input set must contain the origin")
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = max(1.0, float(np.linalg.norm(A, 2)))
    sd = spectral_data(A, tol)
    conds = []

    re = sd.eigenvalues.real
    if mode == "controllable":
        ok = bool(np.all(np.abs(re) <= tol * scale))
        rule = "Re(lambda) = 0"
    else:
        ok = bool(np.all(re <= tol * scale))
        rule = "Re(lambda) <= 0"
    conds.append({"name": "spectrum", "passed": ok, "detail": f"{rule}, max |Re| = {np.max(np.abs(re)):.3e}"})

    V = input_poly.vertices
    if len(V) >= 2:
        i, j = max(
            ((a, b) for a in range(len(V)) for b in range(a + 1, len(V))),
            key=lambda ab: abs(V[ab[0]][0] * V[ab[1]][1] - V[ab[0]][1] * V[ab[1]][0]),
        )
        Pm = _lift(np.array([V[i], V[j]])).T
    else:
        Pm = _lift(V).T
    blocks, M = [], Pm
    for _ in range(n):
        blocks.append(M)
        M = A @ M
    Ctrb = np.hstack(blocks)
    sv = np.linalg.svd(Ctrb, compute_uv=False)
    rank = int(np.sum(sv > tol * max(1.0, sv[0])))
    conds.append({"name": "rank", "passed": rank == n, "detail": f"rank = {rank} of {n}"})

    L = _lift(V)
    ok3 = True
    worst = np.inf
    for basis in sd.eigvecs_t:
        Z = L @ basis
        k = basis.shape[1]
        if k == 1:
            m = min(np.max(Z[:, 0]), np.max(-Z[:, 0]))
        else:
            # origin must be interior to the projected input set
            if np.linalg.matrix_rank(Z, tol=tol) < k or k > 2:
                m = 0.0
            else:
                from .input_geometry import ConvexPolygon2

                m = float(np.min(ConvexPolygon2.from_points(Z).offsets))
        worst = min(worst, m)
        ok3 &= m > tol
    conds.append(
        {
            "name": "eigenvector",
            "passed": bool(ok3),
            "detail": f"min over real eigenvectors v of max_p v.p = {worst if np.isfinite(worst) else 'n/a'}",
        }
    )
    return Verdict(all(c["passed"] for c in conds), conds)


def eroded_input_set(layout):
    """Input set left after countering the worst uncontrolled thrust."""
    bu = input_polygon(layout)
    if layout.c_fail is None:
        return bu
    return erode_by_segment(bu, Segment2(np.zeros(2), -layout.plane_fail()))


@dataclass
class ResilienceReport:
    """Outcome of the resilience analysis for one failure case."""

    failed_index: int | None
    rho_max: float
    resilient: bool
    conditions: list
    rho_ref: float
    eps_budget: float
    tracking_feasible: bool
    eigenvalues: list
    epsilon: float | None = None
    tolerance: float | None = None

    def to_dict(self):
        return {
            "failed_index": self.failed_index,
            "rho_max": self.rho_max,
            "resilient": self.resilient,
            "conditions": self.conditions,
            "epsilon": self.epsilon,
            "tolerance": self.tolerance,
            "rho_ref": self.rho_ref,
            "eps_budget": self.eps_budget,
            "tracking_feasible": self.tracking_feasible,
            "eigenvalues": self.eigenvalues,
        }


def resilience_verdict(params, layout, failed_index, rho_ref):
    """Resilience and tracking-feasibility report for one failed thruster.

    Parameters
    ----------
    params : CwParams
    layout : ThrusterLayout
        Layout providing the full actuator matrix.
    failed_index : int or None
    rho_ref : float
        Peak reference input norm.
    """
    lay = split_layout(layout, failed_index)
    A = cw_matrix(params)
    P = eroded_input_set(lay)
    rho_max = 0.0 if P is None else inscribed_radius_at_origin(P)
    if rho_max > 1e-12:
        v = constrained_controllability_check(A, disc_polygon(rho_max), "controllable")
        resilient, conds = v.passed, v.conditions
    else:
        resilient = False
        conds = [{"name": "inscribed_radius", "passed": False, "detail": "origin not interior to eroded set"}]
    budget = rho_max - rho_ref
    eig = [[float(z.real), float(z.imag)] for z in np.linalg.eigvals(A)]
    return ResilienceReport(
        failed_index, rho_max, bool(resilient), conds, float(rho_ref), float(budget),
        bool(resilient and budget > 1e-12), eig,
    )


def reach_radius_bound(c_max, mu, T_c):
    """Radius (c/mu)(exp(mu T_c) - 1) of the disturbance reach set."""
    if T_c < 0:
        raise ValueError("T_c must be >= 0")
    x = mu * T_c
    if abs(x) < 1e-8:
        return float(c_max * T_c * (1.0 + 0.5 * x))
    return float(c_max / mu * np.expm1(x))


def lyapunov_solve(a_tilde, Q):
    """Solve A^T P + P A = -Q for a Hurwitz A via the Kronecker form."""
    At = np.asarray(a_tilde, dtype=float)
    Q = np.asarray(Q, dtype=float)
    n = At.shape[0]
    if np.max(np.linalg.eigvals(At).real) >= -1e-12:
        raise ValueError("matrix is not Hurwitz")
    I = np.eye(n)
    M = np.kron(I, At.T) + np.kron(At.T, I)
    P = np.linalg.solve(M, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    res = np.max(np.abs(At.T @ P + P @ At + Q))
    if res > 1e-8 * max(1.0, np.max(np.abs(Q))):
        raise ValueError(f"Lyapunov residual too large: {res:.3e}")
    return P


@dataclass
class GainSet:
    """Feedback gain, Lyapunov pair and certificate scalars."""

    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    alpha: float
    beta: float
    gamma: float
    epsilon: float
    tolerance: float
    lip_L: float
    tau: float
    k: float
    mu: float
    bk_norm: float
    eig_spread: float
    closed_loop_eigs: np.ndarray

    def to_dict(self):
        return {
            "k": self.k,
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "tolerance": self.tolerance,
            "lip_L": self.lip_L,
            "tau_s": self.tau,
            "mu": self.mu,
            "bk_norm": self.bk_norm,
            "eig_spread": self.eig_spread,
        }


def certificate(params, layout, k, lip_L, tau, y0_pnorm=0.0, Q=None):
    """Gain set for K = k S with the tracking certificate evaluated."""
    if lip_L < 0 or tau < 0:
        raise ValueError("lip_L and tau must be >= 0")
    A = cw_matrix(params)
    r = params.thrust_ratio_r
    Q = np.eye(4) if Q is None else np.asarray(Q, dtype=float)
    K = k * GAIN_SIGNS
    BK = layout.b_ctrl @ K
    At = A - r * BK
    P = lyapunov_solve(At, Q)
    lp = np.linalg.eigvalsh(P)
    lq = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    mu = log_norm(A)
    bk = float(np.linalg.norm(BK, 2))
    cn = float(np.linalg.norm(layout.c_fail))
    alpha = lq[0] / (2.0 * lp[-1])
    beta = r * np.sqrt(lp[-1]) * cn * lip_L * tau
    gamma = r * bk * (reach_radius_bound(1.0, mu, tau))
    core = max(y0_pnorm, beta / alpha * (1.0 + gamma))
    eps = bk / np.sqrt(lp[0]) * core + gamma * cn * lip_L * tau
    tol = core / np.sqrt(lp[0])
    ev = np.linalg.eigvals(At)
    mag = np.abs(ev)
    spread = float((mag.max() - mag.min()) / mag.max())
    return GainSet(
        K, P, Q, float(alpha), float(beta), float(gamma), float(eps), float(tol),
        float(lip_L), float(tau), float(k), mu, bk, spread, ev,
    )


def design_gains(params, layout, rho_ref, lip_L, tau, y0_pnorm=0.0, k=None, Q=None, k_range=(1.0, 1e5)):
    """Scalar gain search for K = k S.

    With ``k`` given, the certificate is evaluated at that gain. Otherwise
    the gain maximizing epsilon subject to ``epsilon + rho_ref <= rho_max``
    is found by a log-spaced scan and bisection on the budget boundary.

    Parameters
    ----------
    params : CwParams
    layout : ThrusterLayout
        Layout with a failed thruster.
    rho_ref : float
        Peak reference input norm.
    lip_L : float
        Lipschitz constant of the disturbance (1/s).
    tau : float
        Actuation delay (s).
    y0_pnorm : float
        Initial tracking error in the P-norm.

    Returns
    -------
    GainSet

    Raises
    ------
    InfeasibleGainsError
        If no gain in ``k_range`` meets the budget.
    """
    if layout.c_fail is None:
        raise ValueError("layout has no failed thruster")
    P = eroded_input_set(layout)
    rho_max = 0.0 if P is None else inscribed_radius_at_origin(P)
    if rho_max <= 0:
        raise InfeasibleGainsError("tracking infeasible: no input authority left")
    if k is not None:
        return certificate(params, layout, k, lip_L, tau, y0_pnorm, Q)
    budget = rho_max - rho_ref

    def eps(kk):
        try:
            return certificate(params, layout, kk, lip_L, tau, y0_pnorm, Q).epsilon
        except ValueError:
            return np.inf

    ks = np.geomspace(k_range[0], k_range[1], 241)
    es = np.array([eps(kk) for kk in ks])
    ok = es <= budget
    if not np.any(ok):
        raise InfeasibleGainsError(f"tracking infeasible at this (L, tau): min epsilon {es.min():.4g} > budget {budget:.4g}")
    i = int(np.argmax(np.where(ok, es, -np.inf)))
    best = ks[i]
    # refine toward the infeasible neighbour with the larger epsilon
    nb = [j for j in (i - 1, i + 1) if 0 <= j < len(ks) and not ok[j]]
    if nb:
        lo, hi = best, ks[nb[0]]
        for _ in range(60):
            mid = np.sqrt(lo * hi)
            if eps(mid) <= budget:
                lo = mid
            else:
                hi = mid
        best = lo
    return certificate(params, layout, best, lip_L, tau, y0_pnorm, Q)
