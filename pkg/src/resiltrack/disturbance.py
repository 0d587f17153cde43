"""Seeded generators for the uncontrolled thrust w(t) in [0, w_max].

Randomness comes from the PCG64 bit generator (a permuted linear
congruential generator) through its raw 64-bit output, converted to
doubles as ``(x >> 11) * 2**-53``. Only the bit stream is used, so the
signals do not depend on numpy's distribution algorithms.
"""

from dataclasses import asdict, dataclass

import numpy as np

KINDS = ("lipschitz", "bangbang", "constant")


@dataclass(frozen=True)
class DisturbanceSpec:
    """Shape of the uncontrolled thrust.

    Parameters
    ----------
    kind : {"lipschitz", "bangbang", "constant"}
    lip_L : float
        Slope bound (1/s) of the Lipschitz kind.
    w_max : float
        Saturation level in (0, 1].
    seed : int
        64-bit seed.
    min_dwell : float
        Shortest bang-bang dwell (s).
    mean_dwell : float
        Mean of the exponential bang-bang dwell before flooring (s).
    segment : float
        Interval (s) after which the Lipschitz slope is redrawn.
    """

    kind: str = "lipschitz"
    lip_L: float = 0.1
    w_max: float = 0.01
    seed: int = 0
    min_dwell: float = 60.0
    mean_dwell: float = 600.0
    segment: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not 0.0 < self.w_max <= 1.0:
            raise ValueError("w_max must be in (0, 1]")
        if self.lip_L < 0:
            raise ValueError("lip_L must be >= 0")
        if self.min_dwell <= 0 or self.mean_dwell <= 0 or self.segment <= 0:
            raise ValueError("min_dwell, mean_dwell and segment must be > 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def to_dict(self):
        return asdict(self)


class _Uniform:
    """Uniform doubles in [0, 1) from the raw PCG64 stream."""

    def __init__(self, seed):
        self._bg = np.random.PCG64(int(seed))

    def draw(self, n):
        raw = self._bg.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def sample_signal(spec, t_grid):
    """Evaluate w on a uniform time grid starting at its first entry.

    Returns
    -------
    ndarray
        ``w(t_i)`` for every grid point, within ``[0, w_max]``.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t_grid must be a nonempty 1-D array")
    if len(t) > 2:
        d = np.diff(t)
        if np.ptp(d) > 1e-9 * max(1.0, abs(d[0])):
            raise ValueError("t_grid must be uniform")
    if spec.kind == "constant":
        return np.full(len(t), spec.w_max)
    rng = _Uniform(spec.seed)
    span = t[-1] - t[0]
    s = t - t[0]
    if spec.kind == "lipschitz":
        n_seg = int(np.floor(span / spec.segment)) + 1
        u = rng.draw(n_seg + 1)
        slopes = spec.lip_L * (2.0 * u[1:] - 1.0)
        w0 = np.empty(n_seg)
        w0[0] = spec.w_max * u[0]
        for i in range(1, n_seg):
            w0[i] = min(max(w0[i - 1] + slopes[i - 1] * spec.segment, 0.0), spec.w_max)
        i = np.minimum((s / spec.segment).astype(np.int64), n_seg - 1)
        return np.clip(w0[i] + slopes[i] * (s - i * spec.segment), 0.0, spec.w_max)
    # bang-bang: random initial level, floored exponential dwells
    level = rng.draw(1)[0] < 0.5
    edges = [0.0]
    while edges[-1] <= span:
        u = rng.draw(64)
        dw = np.maximum(spec.min_dwell, -spec.mean_dwell * np.log1p(-u))
        edges.extend((edges[-1] + np.cumsum(dw)).tolist())
    k = np.searchsorted(np.asarray(edges), s, side="right") - 1
    on = (k % 2 == 0) == level
    return np.where(on, spec.w_max, 0.0)


def signal_to_csv(path, t, w):
    np.savetxt(path, np.column_stack([t, w]), delimiter=",", header="t,w", comments="", fmt="%.17g")
