"""Batched adaptive RK4 integration and bracketed bisection.

Both routines operate on a batch of independent problems at once (one per
row). Every row keeps its own step size and its own bracket, so a row's
result does not depend on which other rows share the batch.
"""

from __future__ import annotations

import numpy as np

from .errors import IntegrationError

__all__ = ["rk4_step", "integrate_adaptive", "integrate_fixed", "bisect_increasing"]

_SAFETY = 0.9
_MAX_GROW = 5.0
_MAX_SHRINK = 0.2


def rk4_step(f, y, h):
    """One classical RK4 step. ``h`` broadcasts against ``y`` (shape (B, 1) or scalar)."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_adaptive(f, y0, length, *, tol=1e-9, h0=None, err_cols=None,
                       min_step=None, max_attempts=100_000):
    """Integrate ``dy/dz = f(y)`` over ``[0, length]`` for every row of ``y0``.

    Step-doubling RK4: each attempt compares one full step against two half
    steps; the difference / 15 estimates the local error of the half-step
    result, which is then extrapolated to fifth order. A step is accepted
    when the max-norm error over ``err_cols`` is at most ``tol`` (absolute).

    Returns
    -------
    y : ndarray, shape like ``y0``
    n_steps : ndarray of int, accepted steps per row
    """
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("y0 must be 2-D (batch, state)")
    n_rows = y.shape[0]
    length = float(length)
    if length <= 0:
        raise ValueError("integration length must be positive")
    cols = slice(None) if err_cols is None else err_cols
    min_step = length * 1e-14 if min_step is None else min_step
    z = np.zeros(n_rows)
    h = np.full(n_rows, length / 16.0 if h0 is None else float(h0))
    n_steps = np.zeros(n_rows, dtype=int)
    active = np.ones(n_rows, dtype=bool)

    attempts = 0
    while active.any():
        attempts += 1
        if attempts > max_attempts:
            raise IntegrationError("adaptive integrator exceeded its attempt budget")
        idx = np.flatnonzero(active)
        ya = y[idx]
        hs = np.minimum(h[idx], length - z[idx])
        H = hs[:, None]
        full = rk4_step(f, ya, H)
        half = rk4_step(f, rk4_step(f, ya, 0.5 * H), 0.5 * H)
        diff = half - full
        err = np.abs(diff[:, cols]).max(axis=1) / 15.0
        finite = np.all(np.isfinite(half), axis=1) & np.isfinite(err)
        err = np.where(finite, err, np.inf)
        ok = err <= tol

        acc = idx[ok]
        y[acc] = half[ok] + diff[ok] / 15.0
        last = hs[ok] >= length - z[acc]
        z[acc] = np.where(last, length, z[acc] + hs[ok])
        n_steps[acc] += 1

        with np.errstate(divide="ignore"):
            fac = _SAFETY * (tol / np.maximum(err, 1e-300)) ** 0.2
        fac = np.clip(np.where(finite, fac, _MAX_SHRINK), _MAX_SHRINK, _MAX_GROW)
        h_new = hs * fac
        h[idx] = h_new
        if np.any(h_new[~ok] < min_step):
            raise IntegrationError(
                f"step size underflow (h < {min_step:.3g}); parameters are stiff or unphysical"
            )
        active = z < length
    return y, n_steps


def integrate_fixed(f, y0, length, n_steps):
    """Fixed-step RK4 with ``n_steps`` uniform steps (rows share the step)."""
    y = np.array(y0, dtype=float, copy=True)
    h = float(length) / int(n_steps)
    for _ in range(int(n_steps)):
        y = rk4_step(f, y, h)
    return y


def bisect_increasing(residual, lo, hi, *, tol, max_iter=200, r_lo=None, r_hi=None):
    """Vectorized bisection for increasing residuals.

    ``residual(x, rows)`` evaluates the residuals of the problems listed in
    ``rows`` at abscissae ``x`` and returns an array aligned with ``rows``.
    The caller guarantees ``r(lo) <= 0 <= r(hi)`` per row.

    Returns
    -------
    x : ndarray
        Roots with ``|r(x)| < tol``.
    n_iter : ndarray of int
        Midpoint evaluations used by each row.
    converged : ndarray of bool
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    n = lo.size
    x = np.full(n, np.nan)
    n_iter = np.zeros(n, dtype=int)
    done = np.zeros(n, dtype=bool)
    if r_lo is not None:
        hit = np.abs(r_lo) < tol
        x[hit], done[hit] = lo[hit], True
    if r_hi is not None:
        hit = ~done & (np.abs(r_hi) < tol)
        x[hit], done[hit] = hi[hit], True

    for _ in range(max_iter):
        rows = np.flatnonzero(~done)
        if rows.size == 0:
            break
        mid = 0.5 * (lo[rows] + hi[rows])
        stalled = (mid <= lo[rows]) | (mid >= hi[rows])
        r = np.asarray(residual(mid, rows), dtype=float)
        n_iter[rows] += 1
        hit = np.abs(r) < tol
        x[rows[hit]] = mid[hit]
        done[rows[hit]] = True
        up = ~hit & (r < 0)
        dn = ~hit & ~up
        lo[rows[up]] = mid[up]
        hi[rows[dn]] = mid[dn]
        # bracket collapsed to adjacent floats without meeting tol
        done[rows[stalled & ~hit]] = True
    return x, n_iter, np.isfinite(x)
