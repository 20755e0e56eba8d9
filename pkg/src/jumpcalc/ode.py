"""Embedded Dormand-Prince 5(4) steps for autonomous ODEs, vectorized over rows.

Each row of the state array is an independent initial value problem with its
own step size, so a batch of trajectories advances in lockstep while every
row follows exactly the step sequence it would follow alone.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DivergenceError, NumericError

_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
# fifth-order minus embedded fourth-order weights
_E = (
    71 / 57600,
    0.0,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def dp54_step(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray, dt: np.ndarray):
    """One step for every row of ``y`` (shape ``(n, D)``) with per-row ``dt``.

    Returns the fifth-order solution and the embedded error estimate.
    """
    dt = dt[:, None]
    k = [f(y)]
    for i in range(1, 7):
        acc = y.copy()
        for j, a in enumerate(_A[i]):
            if a:
                acc += dt * a * k[j]
        k.append(f(acc))
    # stage 7 is evaluated at the new point itself
    y_new = y + dt * sum(b * kk for b, kk in zip(_B, k[:6]) if b)
    err = dt * sum(e * kk for e, kk in zip(_E, k) if e)
    return y_new, err


def error_ratio(y: np.ndarray, y_new: np.ndarray, err: np.ndarray, tol: float) -> np.ndarray:
    scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
    return np.max(np.abs(err) / scale, axis=1)


def next_step(h: np.ndarray, ratio: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        factor = np.where(ratio > 0, SAFETY * ratio ** -0.2, MAX_FACTOR)
    return h * np.clip(factor, MIN_FACTOR, MAX_FACTOR)


def initial_step(f, y: np.ndarray, tol: float) -> np.ndarray:
    d0 = np.max(np.abs(y), axis=1)
    d1 = np.max(np.abs(f(y)), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = np.where(d1 > 1e-12, 0.01 * np.maximum(d0, 1e-3) / d1, 1e-2)
    return np.clip(h * (tol / 1e-6) ** 0.2, 1e-8, 0.1)


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    duration: np.ndarray,
    tol: float = 1e-10,
    max_steps: int = 1_000_000,
    bound: float = np.inf,
) -> np.ndarray:
    """Advance every row of ``y0`` by its own ``duration`` (>= 0).

    Raises ``DivergenceError`` as soon as an accepted state exceeds ``bound``
    in absolute value.
    """
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim == 1:
        y = y[:, None]
    remaining = np.array(duration, dtype=float).reshape(len(y)).copy()
    h = initial_step(f, y, tol)
    active = remaining > 0
    steps = 0
    while active.any():
        steps += 1
        if steps > max_steps:
            raise NumericError("step budget exhausted")
        idx = np.flatnonzero(active)
        dt = np.minimum(h[idx], remaining[idx])
        with np.errstate(over="ignore", invalid="ignore"):
            y_new, err = dp54_step(f, y[idx], dt)
            ratio = error_ratio(y[idx], y_new, err, tol)
        # an overflowing trial step is a rejection with the smallest shrink factor
        ratio = np.where(np.isfinite(ratio), ratio, np.inf)
        ok = ratio <= 1.0
        if not np.all(np.isfinite(y_new[ok])):
            raise NumericError("integration produced non-finite values")
        acc = idx[ok]
        y[acc] = y_new[ok]
        if np.any(np.abs(y_new[ok]) > bound):
            raise DivergenceError(f"state exceeded {bound:g} in absolute value")
        last = dt[ok] >= remaining[acc]
        remaining[acc] = np.where(last, 0.0, remaining[acc] - dt[ok])
        # an accepted clamped step says nothing about the natural step size
        keep = ok & (dt < h[idx])
        h[idx] = np.where(keep, h[idx], next_step(dt, ratio))
        active = remaining > 0
    return y
