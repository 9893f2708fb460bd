"""Natural cubic spline x(y) through knots ordered by y."""

from __future__ import annotations

import numpy as np


def solve_tridiagonal(lower, diag, upper, rhs) -> np.ndarray:
    """Thomas algorithm for a diagonally dominant tridiagonal system.

    ``lower[i]`` multiplies unknown i-1 in row i (``lower[0]`` unused),
    ``upper[i]`` multiplies unknown i+1 (``upper[-1]`` unused).
    """
    n = len(diag)
    c = np.zeros(n)
    d = np.zeros(n)
    c[0] = upper[0] / diag[0] if n > 1 else 0.0
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / m if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m
    out = np.empty(n)
    out[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]
    return out


class NaturalCubicSpline:
    """Interpolant with zero second derivative at both end knots.

    Evaluation outside the knot range continues the end cubic pieces.
    """

    def __init__(self, y, x):
        y = np.asarray(y, dtype=np.float64).ravel()
        x = np.asarray(x, dtype=np.float64).ravel()
        if y.shape != x.shape:
            raise ValueError(f"spline: {y.size} y-knots vs {x.size} x-values")
        if y.size < 2:
            raise ValueError("spline: need at least 2 knots")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("spline: knots must be finite")
        if np.any(np.diff(y) <= 0):
            raise ValueError("spline: knot y values must be strictly increasing (no duplicates)")
        self.y, self.x = y, x
        h = np.diff(y)
        n = y.size
        m = np.zeros(n)  # second derivatives; ends fixed at 0
        if n > 2:
            slopes = np.diff(x) / h
            rhs = 6.0 * np.diff(slopes)
            lower = np.concatenate([[0.0], h[1:-1]])
            upper = np.concatenate([h[1:-1], [0.0]])
            m[1:-1] = solve_tridiagonal(lower, 2.0 * (h[:-1] + h[1:]), upper, rhs)
        self.m = m
        self.h = h

    def __call__(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        i = np.clip(np.searchsorted(self.y, q, side="right") - 1, 0, self.y.size - 2)
        h = self.h[i]
        a = (self.y[i + 1] - q) / h
        b = (q - self.y[i]) / h
        return (a * self.x[i] + b * self.x[i + 1]
                + ((a ** 3 - a) * self.m[i] + (b ** 3 - b) * self.m[i + 1]) * h * h / 6.0)


def fit_natural_cubic_spline(points) -> NaturalCubicSpline:
    """Fit x(y) through ``points`` given as (x, y) rows ordered by increasing y."""
    p = np.asarray(points, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"spline: expected (n, 2) points, got shape {p.shape}")
    return NaturalCubicSpline(p[:, 1], p[:, 0])


def sample_spline(spline: NaturalCubicSpline, count: int = 500, y_range=None) -> np.ndarray:
    """``count`` (x, y) points evenly spaced in y over the knot range (or ``y_range``)."""
    if int(count) != count or count < 2:
        raise ValueError(f"sample_spline: count must be an integer >= 2, got {count}")
    lo, hi = (spline.y[0], spline.y[-1]) if y_range is None else y_range
    ys = np.linspace(lo, hi, int(count))
    return np.column_stack([spline(ys), ys])
