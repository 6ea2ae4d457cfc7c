"""Natural cubic spline control paths through the observed points of each series."""
from __future__ import annotations

import numpy as np


def _second_derivatives(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot second derivatives of the natural cubic spline (Thomas algorithm).

    t: [K] strictly increasing knots, y: [K, C] values.  Returns [K, C].
    """
    k = t.shape[0]
    m = np.zeros_like(y)
    if k < 3:
        return m
    h = np.diff(t)
    slope = np.diff(y, axis=0) / h[:, None]
    rhs = 6.0 * (slope[1:] - slope[:-1])  # [K-2, C]
    diag = 2.0 * (h[:-1] + h[1:])
    off = h[1:-1]
    n = k - 2
    c_prime = np.zeros(max(n - 1, 0))
    d_prime = np.zeros_like(rhs)
    c_prime_prev, d_prev = 0.0, np.zeros(y.shape[1])
    for i in range(n):
        sub = off[i - 1] if i > 0 else 0.0
        denom = diag[i] - sub * c_prime_prev
        if i < n - 1:
            c_prime[i] = off[i] / denom
            c_prime_prev = c_prime[i]
        d_prev = (rhs[i] - sub * d_prev) / denom
        d_prime[i] = d_prev
    inner = np.zeros_like(rhs)
    inner[-1] = d_prime[-1]
    for i in range(n - 2, -1, -1):
        inner[i] = d_prime[i] - c_prime[i] * inner[i + 1]
    m[1:-1] = inner
    return m


class ControlPath:
    """Batched natural cubic splines with per-sample knot sets.

    Outside the knot range the path continues linearly, which keeps it twice
    differentiable because the second derivative vanishes at both ends.
    """

    def __init__(self, knots: list[np.ndarray], values: list[np.ndarray]):
        self.n_samples = len(knots)
        self.channels = values[0].shape[1]
        kmax = max(len(t) for t in knots)
        self.n_knots = np.array([len(t) for t in knots])
        self.knots = np.full((self.n_samples, kmax), np.inf)
        self.y = np.zeros((self.n_samples, kmax, self.channels))
        self.m = np.zeros((self.n_samples, kmax, self.channels))
        for b, (t, y) in enumerate(zip(knots, values)):
            k = len(t)
            self.knots[b, :k] = t
            self.y[b, :k] = y
            self.m[b, :k] = _second_derivatives(t, y)

    def _segment(self, t: float):
        b = np.arange(self.n_samples)
        last = self.n_knots - 1
        idx = np.clip((self.knots <= t).sum(axis=1) - 1, 0, last - 1)
        t0, t1 = self.knots[b, idx], self.knots[b, idx + 1]
        y0, y1 = self.y[b, idx], self.y[b, idx + 1]
        m0, m1 = self.m[b, idx], self.m[b, idx + 1]
        return t0, t1, y0, y1, m0, m1

    def _eval_inside(self, t, t0, t1, y0, y1, m0, m1):
        h = (t1 - t0)[:, None]
        a = (t1[:, None] - t) / h
        c = (t - t0[:, None]) / h
        value = a * y0 + c * y1 + ((a**3 - a) * m0 + (c**3 - c) * m1) * h**2 / 6.0
        deriv = (y1 - y0) / h + ((1 - 3 * a**2) * m0 + (3 * c**2 - 1) * m1) * h / 6.0
        return value, deriv

    def evaluate(self, t: float, derivative: bool = False) -> np.ndarray:
        """Path value (or dX/dt) at scalar time t for every sample: [batch, channels]."""
        b = np.arange(self.n_samples)
        first = self.knots[:, 0]
        last = self.knots[b, self.n_knots - 1]
        tc = np.clip(t, first, last)[:, None]
        seg = self._segment(float(t))
        value, deriv = self._eval_inside(tc, *seg)
        # linear continuation outside [first, last]
        value = value + deriv * (t - tc)
        return deriv if derivative else value

    def derivative(self, t: float) -> np.ndarray:
        return self.evaluate(t, derivative=True)


def natural_cubic_spline(times: np.ndarray, values: np.ndarray, mask: np.ndarray) -> ControlPath:
    """Build one natural cubic spline per sample through its observed points.

    times [B, N], values [B, N, C], mask [B, N].
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    knots, ys = [], []
    for b in range(values.shape[0]):
        obs = mask[b]
        if obs.sum() < 2:
            raise ValueError(f"sample {b}: a spline needs at least 2 observed points")
        t = times[b, obs]
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"sample {b}: observation times must be strictly increasing")
        knots.append(t)
        ys.append(values[b, obs])
    return ControlPath(knots, ys)
