"""Time-stretching flows of the half-line and the transformations they induce.

For h with compact support, Jh(x) = int_0^x h is continuous and vanishes at 0.
``flow(h, t, x)`` is the value at time t of the solution of z' = Jh(z),
z(0) = x; the family t -> flow(h, t, .) is a one-parameter group and
flow(h, t, .) = flow(t*h, 1, .).

A configuration is transformed by moving every point with mark in Gamma
from tau to flow(h, -1, tau); the image law has density p_h^Gamma against
the original one.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional

import numpy as np
from scipy import integrate as spi

from . import ode
from .errors import DomainError, NumericError, WindowError
from .point_measure import ConfigBatch, Configuration, MarkSubset, integrate

log = logging.getLogger(__name__)

TINY_VALUE = 1e-200


class StretchFunction:
    """Piecewise-constant h: value ``values[k]`` on ``[s_k, s_{k+1})``, zero past the last breakpoint.

    ``breakpoints`` must start at 0 and increase strictly.
    """

    approximate = False

    def __init__(self, breakpoints, values):
        s = np.asarray(breakpoints, dtype=float).reshape(-1)
        v = np.asarray(values, dtype=float).reshape(-1)
        if len(s) < 2 or s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise DomainError("breakpoints must be 0 = s_0 < s_1 < ... < s_K")
        if len(v) != len(s) - 1:
            raise DomainError("need one value per segment")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
            raise DomainError("breakpoints and values must be finite")
        # values this small move points far below double resolution; drop them to
        # keep the closed-form segment times free of underflow
        v = np.where(np.abs(v) < TINY_VALUE, 0.0, v)
        J = np.concatenate([[0.0], np.cumsum(v * np.diff(s))])
        scale = float(np.sum(np.abs(v) * np.diff(s)))
        J[np.abs(J) <= 1e-13 * max(scale, 1e-300)] = 0.0
        self.breakpoints = s
        self.values = v
        self._J = J
        for arr in (self.breakpoints, self.values, self._J):
            arr.setflags(write=False)

    # -- evaluation ---------------------------------------------------------

    @property
    def support_end(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def J_end(self) -> float:
        """Jh on [support_end, inf), i.e. the integral of h."""
        return float(self._J[-1])

    @property
    def sup_abs_J(self) -> float:
        return float(np.max(np.abs(self._J)))

    def h(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.breakpoints, x, side="right")
        ext = np.concatenate([[0.0], self.values, [0.0]])
        return ext[k]

    def J(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = np.searchsorted(self.breakpoints, x, side="right")
        inside = k <= len(self.values)
        kk = np.clip(k - 1, 0, len(self.values) - 1)
        lin = self._J[kk] + self.values[kk] * (x - self.breakpoints[kk])
        return np.where(inside, lin, self._J[-1])

    def scaled(self, a: float) -> "StretchFunction":
        return StretchFunction(self.breakpoints, a * self.values)

    def __neg__(self) -> "StretchFunction":
        return self.scaled(-1.0)

    def vanishes_beyond(self, T: float) -> bool:
        """True iff Jh is identically zero on [T, inf)."""
        if self._J[-1] != 0.0:
            return False
        tail = self.breakpoints >= T
        return bool(np.all(self._J[tail] == 0.0)) and float(self.J(T)) == 0.0

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.breakpoints.tolist()}, {self.values.tolist()})"

    # -- flow ---------------------------------------------------------------

    def _advance(self, x: np.ndarray, t: float):
        """Flow every entry of ``x`` for signed time ``t``; also return int_0^t h(z(u)) du."""
        sgn = 1.0 if t >= 0 else -1.0
        s = self.breakpoints
        K = len(self.values)
        hv = np.concatenate([[0.0], sgn * self.values, [0.0]])  # index = segment number
        Jb = sgn * self._J
        s_ext = np.concatenate([s, [np.inf]])
        z = np.array(x, dtype=float, copy=True).reshape(-1)
        rem = np.full(z.shape, abs(t))
        r = np.zeros(z.shape)
        active = rem > 0
        for _ in range(K + 3):
            if not active.any():
                break
            idx = np.flatnonzero(active)
            zi = z[idx]
            k_right = np.searchsorted(s, zi, side="right")
            kr = np.clip(k_right, 1, K)
            Jz = np.where(
                k_right <= K, Jb[kr - 1] + hv[kr] * (zi - s[kr - 1]), Jb[K]
            )
            fixed = Jz == 0.0
            right = Jz > 0.0
            seg = np.where(right, k_right, np.searchsorted(s, zi, side="left"))
            hk = hv[seg]
            target = np.where(right, s_ext[seg], s[np.maximum(seg - 1, 0)])
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                # J at the target is Jz + hk (target - zi); log1p avoids cancellation for tiny hk
                arg = hk * (target - zi) / Jz
                tau_exp = np.where(arg > -1.0, np.log1p(arg) / hk, np.inf)
                tau_lin = (target - zi) / Jz
            tau = np.where(hk != 0.0, tau_exp, tau_lin)
            tau = np.where(fixed | ~np.isfinite(target), np.inf, tau)
            tau = np.where(tau < 0, 0.0, tau)
            remi = rem[idx]
            stay = tau >= remi
            # finish inside the current segment
            hr = hk * remi
            with np.errstate(divide="ignore", invalid="ignore"):
                phi = np.where(hr != 0.0, np.expm1(hr) / hr, 1.0)
            z_stay = np.where(fixed, zi, zi + Jz * remi * phi)
            h_here = np.where(fixed, hv[np.minimum(k_right, K + 1)], hk)
            fin = idx[stay]
            z[fin] = z_stay[stay]
            r[fin] += h_here[stay] * remi[stay]
            rem[fin] = 0.0
            cross = idx[~stay]
            z[cross] = target[~stay]
            r[cross] += hk[~stay] * tau[~stay]
            rem[cross] = remi[~stay] - tau[~stay]
            active = rem > 0
        if active.any():
            raise NumericError("flow failed to settle within the segment budget")
        return z, sgn * r


class GridDirection(StretchFunction):
    """A direction h for one grid cell (a, b): Jh > 0 inside (a, b) and Jh = 0 outside."""

    def __init__(self, a: float, b: float, breakpoints=None, values=None):
        a, b = float(a), float(b)
        if not (0 <= a < b and math.isfinite(b)):
            raise DomainError("grid interval must satisfy 0 <= a < b < inf")
        if breakpoints is None:
            mid = 0.5 * (a + b)
            breakpoints = [0.0, a, mid, b] if a > 0 else [0.0, mid, b]
            values = [0.0, 1.0, -1.0] if a > 0 else [1.0, -1.0]
        super().__init__(breakpoints, values)
        self.a, self.b = a, b
        s, J = self.breakpoints, self._J
        if a not in s or b not in s:
            raise DomainError("a and b must be breakpoints of h")
        inside = (s > a) & (s < b)
        outside = (s <= a) | (s >= b)
        if np.any(J[outside] != 0.0) or np.any(J[inside] <= 0.0) or self.J_end != 0.0:
            raise DomainError("Jh must be > 0 inside (a, b) and vanish outside")

    @classmethod
    def bump(cls, a: float, b: float) -> "GridDirection":
        """Canonical direction: +1 on the left half of (a, b), -1 on the right half."""
        return cls(a, b)

    def scaled(self, c: float) -> StretchFunction:
        # a negative multiple keeps the support but flips the sign of Jh
        return StretchFunction(self.breakpoints, c * self.values)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(a=self.a, b=self.b)
        return out


class SmoothStretch:
    """A general compactly supported h given as a callable; flow by adaptive RK.

    Results carry ``approximate = True``: the flow is computed numerically
    (local error control 1e-12) rather than in closed form.
    """

    approximate = True

    def __init__(self, h: Callable[[float], float], support_end: float, tol: float = 1e-12):
        self._h = h
        self._end = float(support_end)
        self.tol = tol
        self.J_end = self.J(self._end).item()

    @property
    def support_end(self) -> float:
        return self._end

    def h(self, x):
        x = np.asarray(x, dtype=float)
        return np.vectorize(lambda u: self._h(u) if 0 <= u < self._end else 0.0)(x)

    def J(self, x):
        x = np.asarray(x, dtype=float)

        def one(u):
            return spi.quad(self._h, 0.0, min(u, self._end), epsabs=1e-13, epsrel=1e-12, limit=200)[0]

        return np.vectorize(one)(x)

    def _advance(self, x, t):
        x = np.asarray(x, dtype=float).reshape(-1)
        sgn = 1.0 if t >= 0 else -1.0

        def rhs(y):
            return np.column_stack([sgn * self.J(y[:, 0]), sgn * self.h(y[:, 0])])

        y0 = np.column_stack([x, np.zeros_like(x)])
        y = ode.integrate(rhs, y0, np.full(len(x), abs(t)), tol=self.tol)
        return y[:, 0], sgn * y[:, 1]


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def eval_J(h, x):
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("Jh is defined on the half-line x >= 0")
    out = h.J(x_arr)
    return float(out) if np.ndim(x) == 0 else out


def flow(h, t: float, x):
    """T_{th} x: time-t value of z' = Jh(z), z(0) = x."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("the flow acts on the half-line x >= 0")
    if t == 0:
        out = x_arr.copy()
    else:
        out, _ = h._advance(x_arr.reshape(-1), float(t))
        out = out.reshape(x_arr.shape)
    if not np.all(np.isfinite(out)):
        raise NumericError("flow produced a non-finite value")
    return float(out) if np.ndim(x) == 0 else out


def log_jacobian(h, x):
    """r_h(x) = int_0^1 h(T_{sh} x) ds, the logarithm of d/dx T_h x.

    The integrand is piecewise constant along the flow path, so the integral
    is accumulated exactly from the time spent in each segment of h.
    """
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("r_h is defined on the half-line x >= 0")
    _, r = h._advance(x_arr.reshape(-1), 1.0)
    r = r.reshape(x_arr.shape)
    if log.isEnabledFor(logging.DEBUG):
        log.debug("r_h = %s, d/dx T_h x = exp(r_h) = %s", r, np.exp(r))
    return float(r) if np.ndim(x) == 0 else r


def _check_window(h, T: float) -> None:
    if not h.vanishes_beyond(T):
        raise WindowError(
            f"Jh does not vanish beyond the window end {T}; the transform would "
            "carry points across it"
        )


def transform_configuration(config: Configuration, h, subset: MarkSubset) -> Configuration:
    """T_h^Gamma: move each point with mark in ``subset`` from tau to T_{-h} tau."""
    _check_window(h, config.window)
    sel = subset.contains(config.marks, config.atoms)
    if not sel.any():
        return config
    times = np.array(config.times, copy=True)
    times[sel] = flow(h, -1.0, times[sel])
    if np.any(times < 0) or np.any(times >= config.window):
        raise WindowError("a transformed time left [0, window)")
    return config.with_times(times)


def transform_batch(batch: ConfigBatch, h, subset: MarkSubset) -> ConfigBatch:
    """Row-wise ``transform_configuration`` over a padded batch."""
    _check_window(h, batch.window)
    sel = batch.mask(subset)
    if not sel.any():
        return batch
    times = np.array(batch.times, copy=True)
    times[sel] = flow(h, -1.0, times[sel])
    if np.any(times[sel] < 0) or np.any(times[sel] >= batch.window):
        raise WindowError("a transformed time left [0, window)")
    return batch.with_times(times)


def limit_term(h) -> float:
    """lim_{t -> inf} [T_h t - t], evaluated exactly just past the support."""
    t_star = h.support_end + abs(h.J_end)
    return flow(h, 1.0, t_star) - t_star


def density(config: Configuration, h, subset: MarkSubset, space=None) -> float:
    """p_h^Gamma = exp( sum_{tau in D^Gamma} r_h(tau) - lim[T_h t - t] Pi(Gamma) )."""
    tau = config.times[subset.contains(config.marks, config.atoms)]
    s = math.fsum(log_jacobian(h, tau)) if len(tau) else 0.0
    return math.exp(s - limit_term(h) * subset.mass)


def density_batch(batch: ConfigBatch, h, subset: MarkSubset) -> np.ndarray:
    sel = batch.mask(subset)
    r = np.zeros(batch.times.shape)
    if sel.any():
        r[sel] = log_jacobian(h, batch.times[sel])
    return np.exp(r.sum(axis=1) - limit_term(h) * subset.mass)


def log_derivative_rho(
    config: Configuration, h, subset: MarkSubset, space=None, T: Optional[float] = None
) -> float:
    """rho = -int h(t) nu-tilde(dt, Gamma), the limit of (1 - p_{eps h}) / eps."""
    T = config.window if T is None else T
    comp = float(h.J(T)) * subset.mass
    return -integrate(
        config, lambda t, m: h.h(t), compensate=True, subset=subset, compensator_value=comp
    )


def rho_batch(batch: ConfigBatch, h, subset: MarkSubset) -> np.ndarray:
    sel = batch.mask(subset)
    vals = np.zeros(batch.times.shape)
    if sel.any():
        vals[sel] = h.h(batch.times[sel])
    return -(vals.sum(axis=1) - float(h.J(batch.window)) * subset.mass)
