"""Planar convex sets for input authority analysis.

Sets live in the (e3, e4) velocity plane. A :class:`ConvexPolygon2` keeps
both a halfplane description ``n . z <= b`` with unit normals and a CCW
vertex list; degenerate sets (segments, points) carry a flag.
"""

from dataclasses import dataclass

import numpy as np

from .dynamics import expm_batch

TOL = 1e-9
PLANAR_TOL = 1e-12


@dataclass(frozen=True)
class Segment2:
    """Closed segment between ``p0`` and ``p1`` (they may coincide)."""

    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float).reshape(2)
        p1 = np.asarray(self.p1, dtype=float).reshape(2)
        if not (np.all(np.isfinite(p0)) and np.all(np.isfinite(p1))):
            raise ValueError("segment endpoints must be finite")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def endpoints(self):
        return np.vstack([self.p0, self.p1])


@dataclass(frozen=True)
class ConvexPolygon2:
    """Bounded convex set in the plane.

    Attributes
    ----------
    normals : ndarray, shape (k, 2)
        Unit outward normals.
    offsets : ndarray, shape (k,)
        Support values, the set is ``{z : normals @ z <= offsets}``.
    vertices : ndarray, shape (n, 2)
        CCW vertices; 2 rows for a segment, 1 for a point.
    kind : str
        ``"polygon"``, ``"segment"`` or ``"point"``.
    """

    normals: np.ndarray
    offsets: np.ndarray
    vertices: np.ndarray
    kind: str = "polygon"

    @property
    def degenerate(self):
        return self.kind != "polygon"

    @classmethod
    def from_points(cls, points, tol=TOL):
        """Convex hull of a point cloud."""
        V = hull_ccw(points, tol)
        if len(V) == 0:
            raise ValueError("no points")
        N, b = _hrep_from_vertices(V)
        kind = {1: "point", 2: "segment"}.get(len(V), "polygon")
        return cls(N, b, V, kind)

    @classmethod
    def from_halfplanes(cls, normals, offsets, tol=TOL):
        """Vertex enumeration of a bounded halfplane intersection.

        Returns None when the intersection is empty (beyond ``tol``).
        """
        N = np.asarray(normals, dtype=float)
        b = np.asarray(offsets, dtype=float)
        nrm = np.linalg.norm(N, axis=1)
        N, b = N / nrm[:, None], b / nrm
        pts = []
        k = len(b)
        for i in range(k):
            for j in range(i + 1, k):
                M = np.array([N[i], N[j]])
                det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
                if abs(det) < 1e-14:
                    continue
                z = np.linalg.solve(M, [b[i], b[j]])
                if np.all(N @ z <= b + tol):
                    pts.append(z)
        if not pts:
            return None
        V = hull_ccw(np.array(pts), tol)
        kind = {1: "point", 2: "segment"}.get(len(V), "polygon")
        Nv, bv = _hrep_from_vertices(V)
        return cls(Nv, bv, V, kind)

    def contains(self, z, tol=TOL):
        z = np.asarray(z, dtype=float)
        return np.all(z @ self.normals.T <= self.offsets + tol, axis=-1)

    def support(self, d):
        """max over the set of d . z."""
        return float(np.max(self.vertices @ np.asarray(d, dtype=float)))

    def closest_point(self, z):
        """Euclidean projection of ``z`` onto the set."""
        z = np.asarray(z, dtype=float)
        if self.contains(z, 0.0):
            return z.copy()
        V = self.vertices
        if len(V) == 1:
            return V[0].copy()
        best, bd = None, np.inf
        n = len(V)
        for i in range(n if n > 2 else 1):
            a, c = V[i], V[(i + 1) % n]
            p = _project_segment(z, a, c)
            d = np.dot(p - z, p - z)
            if d < bd:
                best, bd = p, d
        return best


def _project_segment(z, a, c):
    d = c - a
    L2 = float(np.dot(d, d))
    if L2 == 0.0:
        return a.copy()
    s = np.clip(np.dot(z - a, d) / L2, 0.0, 1.0)
    return a + s * d


def hull_ccw(points, tol=TOL):
    """Monotone-chain convex hull, CCW, collinear and duplicate points dropped.

    The chain itself is exact; vertices closer than ``tol`` (relative to the
    coordinate scale) to the line through their neighbours are removed
    afterwards.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(P) == 0:
        return np.zeros((0, 2))
    P = np.unique(P, axis=0)
    scale = max(1.0, float(np.max(np.abs(P))))
    if len(P) == 1:
        return P

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def chain(pts):
        h = []
        for p in pts:
            while len(h) >= 2 and cross(h[-2], h[-1], p) <= 0.0:
                h.pop()
            h.append(p)
        return h

    H = chain(P)[:-1] + chain(P[::-1])[:-1]
    if len(H) < 2:
        H = [P[0], P[-1]]
    H = [np.asarray(h) for h in H]
    changed = True
    while changed and len(H) > 2:
        changed = False
        n = len(H)
        for i in range(n):
            a, v, c = H[i - 1], H[i], H[(i + 1) % n]
            near = np.max(np.abs(v - a)) <= tol * scale or np.max(np.abs(v - c)) <= tol * scale
            # distance to the segment, not the line: thin hulls keep their tips
            if near or np.max(np.abs(_project_segment(v, a, c) - v)) <= tol * scale:
                del H[i]
                changed = True
                break
    H = np.array(H)
    if len(H) == 2 and np.max(np.abs(H[0] - H[1])) <= tol * scale:
        H = H[:1]
    return H


def _hrep_from_vertices(V):
    if len(V) == 1:
        N = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        return N, N @ V[0]
    if len(V) == 2:
        d = V[1] - V[0]
        d = d / np.linalg.norm(d)
        n = np.array([d[1], -d[0]])
        N = np.array([n, -n, d, -d])
        b = np.array([n @ V[0], -n @ V[0], d @ V[1], -d @ V[0]])
        return N, b
    E = np.roll(V, -1, axis=0) - V
    N = np.column_stack([E[:, 1], -E[:, 0]])
    N /= np.linalg.norm(N, axis=1)[:, None]
    b = np.einsum("ij,ij->i", N, V)
    return N, b


def zonotope_of_inputs(columns):
    """Image of the unit box under the given generator columns.

    Parameters
    ----------
    columns : array_like, shape (m, 2)
        Generators ``g_i``; the set is ``{sum u_i g_i : u in [0, 1]^m}``.

    Returns
    -------
    ConvexPolygon2
    """
    G = np.asarray(columns, dtype=float).reshape(-1, 2)
    if len(G) == 0:
        raise ValueError("need at least one column")
    center = 0.5 * G.sum(axis=0)
    H = 0.5 * G[np.linalg.norm(G, axis=1) > TOL]
    if len(H) == 0:
        return ConvexPolygon2.from_points(center[None, :])
    # fold generators into the half-turn [0, pi) and sort by angle
    flip = (H[:, 1] < 0) | ((H[:, 1] == 0) & (H[:, 0] < 0))
    H[flip] *= -1.0
    # in [0, pi]; a value that rounds to pi still belongs at the end
    ang = np.arctan2(H[:, 1], H[:, 0])
    H = H[np.argsort(ang, kind="stable")]
    start = center - H.sum(axis=0)
    pts = [start]
    for h in H:
        pts.append(pts[-1] + 2.0 * h)
    for h in H:
        pts.append(pts[-1] - 2.0 * h)
    return ConvexPolygon2.from_points(np.array(pts))


def erode_by_segment(poly, seg):
    """Minkowski difference ``{z : z + s in poly for all s in seg}``.

    Returns None for an empty result.
    """
    shift = np.maximum(poly.normals @ seg.p0, poly.normals @ seg.p1)
    return ConvexPolygon2.from_halfplanes(poly.normals, poly.offsets - shift)


def inscribed_radius_at_origin(poly):
    """Radius of the largest origin-centred disc inside ``poly``."""
    if poly is None:
        raise ValueError("empty set")
    if poly.degenerate:
        return 0.0
    return float(max(0.0, np.min(poly.offsets)))


def disc_polygon(radius, n=64):
    """Regular n-gon inscribed in the disc of the given radius."""
    a = 2.0 * np.pi * np.arange(n) / n
    return ConvexPolygon2.from_points(radius * np.column_stack([np.cos(a), np.sin(a)]))


def input_polygon(layout):
    """Zonotope of the controlled thruster columns."""
    return zonotope_of_inputs(layout.plane_columns())


def _propagated_fail(A, layout, ts, w_max):
    E = expm_batch(A, ts)
    return w_max * (E @ layout.c_fail)


def _p_set_from_v(bu, v):
    if np.any(np.abs(v[:2]) > PLANAR_TOL):
        return None
    return erode_by_segment(bu, Segment2(np.zeros(2), -v[2:]))


def p_set_at_time(A, layout, t, w_max):
    """Eroded input set with the disturbance pushed forward by exp(A t).

    Parameters
    ----------
    A : ndarray, shape (4, 4)
    layout : ThrusterLayout
        Must have a failed thruster.
    t : float
        Horizon (s), ``t >= 0``.
    w_max : float
        Disturbance saturation in (0, 1].

    Returns
    -------
    ConvexPolygon2 or None
        None when the set is empty, including when the propagated
        disturbance leaves the input plane.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 0 < w_max <= 1:
        raise ValueError("w_max must be in (0, 1]")
    v = _propagated_fail(A, layout, np.array([t]), w_max)[0]
    return _p_set_from_v(input_polygon(layout), v)


def minimal_correction_time(A, layout, tau, w_max, t_max, dt_search=0.01):
    """Smallest t in [tau, t_max] at which the eroded set is nonempty.

    A uniform grid of step ``dt_search`` is scanned and the first hit is
    refined by bisection to 1e-6 s. Emptiness patterns finer than the grid
    are not detected. Returns None if no grid point gives a nonempty set.
    """
    if tau < 0 or t_max <= tau:
        raise ValueError("need 0 <= tau < t_max")
    bu = input_polygon(layout)
    n = int(np.floor((t_max - tau) / dt_search + 1e-9))
    ts = tau + dt_search * np.arange(n + 1)
    if ts[-1] < t_max:
        ts = np.append(ts, t_max)
    chunk = 200_000
    hit = None
    for i in range(0, len(ts), chunk):
        V = _propagated_fail(A, layout, ts[i : i + chunk], w_max)
        planar = np.all(np.abs(V[:, :2]) <= PLANAR_TOL, axis=1)
        for j in np.flatnonzero(planar):
            if _p_set_from_v(bu, V[j]) is not None:
                hit = i + j
                break
        if hit is not None:
            break
    if hit is None:
        return None
    if hit == 0:
        return float(ts[0])

    def nonempty(t):
        v = _propagated_fail(A, layout, np.array([t]), w_max)[0]
        return _p_set_from_v(bu, v) is not None

    lo, hi = float(ts[hit - 1]), float(ts[hit])
    while hi - lo > 1e-7:
        mid = 0.5 * (lo + hi)
        if nonempty(mid):
            hi = mid
        else:
            lo = mid
    return hi


def rotation_residual(params, T, theta_grid_size=3600):
    """Out-of-plane residuals of the rotated, propagated disturbance column.

    Both must vanish for every bearing for a delay-independent correction
    time to exist.

    Parameters
    ----------
    params : CwParams
    T : float or array_like
        Horizon(s) in seconds.
    theta_grid_size : int
        Number of bearings sampled on [0, 2 pi).

    Returns
    -------
    res1, res2 : float or ndarray
    """
    if theta_grid_size < 360:
        raise ValueError("theta_grid_size must be >= 360")
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0):
        raise ValueError("T must be > 0")
    x = params.omega * T
    s, c = np.sin(x), np.cos(x)
    th = 2.0 * np.pi * np.arange(theta_grid_size) / theta_grid_size
    trig = np.vstack([np.cos(th), np.sin(th)])
    # coefficient pairs (cos, sin) for each residual
    c1 = np.stack([s, 2.0 * (1.0 - c)], axis=-1).reshape(-1, 2)
    c2 = np.stack([2.0 * (c - 1.0), 4.0 * s - 3.0 * x], axis=-1).reshape(-1, 2)
    res1 = np.empty(len(c1))
    res2 = np.empty(len(c2))
    step = max(1, 4_000_000 // theta_grid_size)
    for i in range(0, len(c1), step):
        sl = slice(i, i + step)
        res1[sl] = np.max(np.abs(c1[sl] @ trig), axis=1)
        res2[sl] = np.max(np.abs(c2[sl] @ trig), axis=1)
    if T.ndim == 0:
        return float(res1[0]), float(res2[0])
    return res1.reshape(T.shape), res2.reshape(T.shape)
