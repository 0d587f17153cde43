"""Compiled inner loops.

Everything here is plain numba; the Python-facing wrappers live in
``controller`` and ``sim``.
"""

import numpy as np
from numba import njit

FEAS_TOL = 1e-12


@njit(cache=True)
def propagate_zoh(Phi, Gin, x0, p):
    """x[k+1] = Phi x[k] + Gin p[k]; returns len(p) + 1 states."""
    n = p.shape[0]
    X = np.empty((n + 1, 4))
    X[0] = x0
    for k in range(n):
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += Phi[i, j] * X[k, j]
            for j in range(Gin.shape[1]):
                acc += Gin[i, j] * p[k, j]
            X[k + 1, i] = acc
    return X


@njit(cache=True)
def _basic_solutions(target, B2, tol, u_out):
    """Min-sum basic solution of B2 u = target, 0 <= u <= 1.

    Enumerates every pair of basic columns with the others at 0 or 1.
    Returns the best cost, or inf when nothing is feasible.
    """
    m = B2.shape[1]
    best = np.inf
    u = np.empty(m)
    for i in range(m):
        for j in range(i + 1, m):
            det = B2[0, i] * B2[1, j] - B2[0, j] * B2[1, i]
            if abs(det) < 1e-12:
                continue
            n_free = m - 2
            for mask in range(1 << n_free):
                r0 = target[0]
                r1 = target[1]
                bit = 0
                for k in range(m):
                    if k == i or k == j:
                        continue
                    v = 1.0 if (mask >> bit) & 1 else 0.0
                    bit += 1
                    u[k] = v
                    r0 -= B2[0, k] * v
                    r1 -= B2[1, k] * v
                ui = (B2[1, j] * r0 - B2[0, j] * r1) / det
                uj = (-B2[1, i] * r0 + B2[0, i] * r1) / det
                if ui < -tol or ui > 1.0 + tol or uj < -tol or uj > 1.0 + tol:
                    continue
                u[i] = min(max(ui, 0.0), 1.0)
                u[j] = min(max(uj, 0.0), 1.0)
                c = 0.0
                for k in range(m):
                    c += u[k]
                if c < best - 1e-15:
                    best = c
                    for k in range(m):
                        u_out[k] = u[k]
    return best


@njit(cache=True)
def closest_point_polygon(z, V, N, b):
    """Projection of z onto the convex polygon with CCW vertices V."""
    inside = True
    for k in range(N.shape[0]):
        if N[k, 0] * z[0] + N[k, 1] * z[1] > b[k]:
            inside = False
            break
    out = np.empty(2)
    if inside:
        out[0] = z[0]
        out[1] = z[1]
        return out
    n = V.shape[0]
    bd = np.inf
    for k in range(n):
        a0, a1 = V[k, 0], V[k, 1]
        c0, c1 = V[(k + 1) % n, 0], V[(k + 1) % n, 1]
        d0, d1 = c0 - a0, c1 - a1
        L2 = d0 * d0 + d1 * d1
        s = 0.0
        if L2 > 0:
            s = ((z[0] - a0) * d0 + (z[1] - a1) * d1) / L2
            s = min(max(s, 0.0), 1.0)
        p0, p1 = a0 + s * d0, a1 + s * d1
        dd = (p0 - z[0]) ** 2 + (p1 - z[1]) ** 2
        if dd < bd:
            bd = dd
            out[0] = p0
            out[1] = p1
    return out


@njit(cache=True)
def allocate_nb(target, B2, V, N, b, u_out):
    """Thruster levels for a body-frame target; returns True if saturated."""
    c = _basic_solutions(target, B2, FEAS_TOL, u_out)
    if c < np.inf:
        return False
    proj = closest_point_polygon(target, V, N, b)
    c = _basic_solutions(proj, B2, 1e-9, u_out)
    if c == np.inf:
        c = _basic_solutions(proj, B2, 1e-6, u_out)
    if c == np.inf:
        # projection landed off the polygon by more than rounding
        for k in range(u_out.shape[0]):
            u_out[k] = 0.0
    return True


@njit(cache=True)
def closed_loop(
    X0, Phi, Gam_r, PhiPow, Gpred, Xref, pref, w, BK, B2, c2, V, N, b, n_delay, trapezoid, dt, r, diverge, commanded
):
    """Predictor-feedback loop with actuation delay.

    Step n uses X[n - n_delay], the inputs applied since then, and the
    delayed disturbance w[n - n_delay] to predict X[n], then commands
    Bu = -C w_delayed + R^T (p_ref + BK (X_ref - X_p)) in the body frame.
    The plant advances with the bearing frozen over the step. With
    ``commanded`` the predictor integrates the unsaturated target instead of
    the thrust actually delivered.

    Returns states, thruster levels, bearings, predictor errors, saturation
    flags and the number of completed steps.
    """
    n_steps = Xref.shape[0] - 1
    m = B2.shape[1]
    X = np.zeros((n_steps + 1, 4))
    U = np.zeros((n_steps + 1, m))
    TH = np.zeros(n_steps + 1)
    PE = np.zeros(n_steps + 1)
    SAT = np.zeros(n_steps + 1, dtype=np.bool_)
    VB = np.zeros((n_steps + 1, 2))  # body-frame B u + C w_delayed per step
    X[0] = X0
    xp = np.empty(4)
    tgt = np.empty(2)
    u = np.empty(m)
    done = n_steps
    for n in range(n_steps + 1):
        x = X[n]
        th = np.arctan2(x[1], x[0])
        TH[n] = th
        cth, sth = np.cos(th), np.sin(th)
        m0 = n - n_delay
        if m0 < 0:
            m0 = 0
        k = n - m0
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += PhiPow[k, i, j] * X[m0, j]
            xp[i] = acc
        if trapezoid and k > 0:
            for jj in range(m0, n + 1):
                wt = 0.5 if (jj == m0 or jj == n) else 1.0
                if jj < n:
                    v0, v1 = VB[jj, 0], VB[jj, 1]
                    c, s = np.cos(TH[jj]), np.sin(TH[jj])
                else:
                    # right endpoint: held input with the current bearing
                    v0, v1 = VB[n - 1, 0], VB[n - 1, 1]
                    c, s = cth, sth
                r0 = c * v0 - s * v1
                r1 = s * v0 + c * v1
                mm = n - jj
                for i in range(4):
                    xp[i] += wt * dt * r * (PhiPow[mm, i, 2] * r0 + PhiPow[mm, i, 3] * r1)
        else:
            for jj in range(m0, n):
                c, s = np.cos(TH[jj]), np.sin(TH[jj])
                v0, v1 = VB[jj, 0], VB[jj, 1]
                r0 = c * v0 - s * v1
                r1 = s * v0 + c * v1
                mm = n - 1 - jj
                for i in range(4):
                    xp[i] += Gpred[mm, i, 2] * r0 + Gpred[mm, i, 3] * r1
        err = 0.0
        for i in range(4):
            err += (xp[i] - x[i]) ** 2
        PE[n] = np.sqrt(err)
        wd = w[n - n_delay] if n >= n_delay else 0.0
        # inertial correction BK (X_ref - X_p), rows 3-4
        a0 = pref[n, 0]
        a1 = pref[n, 1]
        for j in range(4):
            e = Xref[n, j] - xp[j]
            a0 += BK[2, j] * e
            a1 += BK[3, j] * e
        tgt[0] = -c2[0] * wd + cth * a0 + sth * a1
        tgt[1] = -c2[1] * wd - sth * a0 + cth * a1
        SAT[n] = allocate_nb(tgt, B2, V, N, b, u)
        for i in range(m):
            U[n, i] = u[i]
        bu0 = 0.0
        bu1 = 0.0
        for i in range(m):
            bu0 += B2[0, i] * u[i]
            bu1 += B2[1, i] * u[i]
        if commanded:
            VB[n, 0] = tgt[0] + c2[0] * wd
            VB[n, 1] = tgt[1] + c2[1] * wd
        else:
            VB[n, 0] = bu0 + c2[0] * wd
            VB[n, 1] = bu1 + c2[1] * wd
        if n == n_steps:
            break
        # plant: actual disturbance w[n]
        f0 = bu0 + c2[0] * w[n]
        f1 = bu1 + c2[1] * w[n]
        g0 = cth * f0 - sth * f1
        g1 = sth * f0 + cth * f1
        nrm = 0.0
        for i in range(4):
            acc = 0.0
            for j in range(4):
                acc += Phi[i, j] * x[j]
            acc += Gam_r[i, 2] * g0 + Gam_r[i, 3] * g1
            X[n + 1, i] = acc
            nrm += acc * acc
        if not np.isfinite(nrm) or nrm > diverge * diverge:
            done = n + 1
            break
    return X, U, TH, PE, SAT, done


@njit(cache=True)
def allocate_many(targets, B2, V, N, b):
    """Row-wise ``allocate_nb`` over an (n, 2) array of targets."""
    n = targets.shape[0]
    U = np.zeros((n, B2.shape[1]))
    SAT = np.zeros(n, dtype=np.bool_)
    u = np.empty(B2.shape[1])
    for k in range(n):
        SAT[k] = allocate_nb(targets[k], B2, V, N, b, u)
        U[k] = u
    return U, SAT
