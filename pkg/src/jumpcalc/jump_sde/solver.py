"""Batched path solver for additive and thinned jump SDEs.

Paths advance in lockstep over event columns of a ``ConfigBatch``. Between
events each row is integrated by adaptive Dormand-Prince steps; event times
are exact step boundaries. An optional tangent block ``W`` (shape ``(n, m, q)``)
follows dW = grad a(X) W between events, is multiplied by (I + grad c) at
accepted thinned jumps and receives caller-defined injections at events.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import ode
from ..errors import DivergenceError, DomainError
from ..point_measure import ConfigBatch, Configuration, sample_batch, sample_configuration
from .models import AdditiveModel, ThinnedModel

ODE_TOL = 1e-10
BLOWUP = 1e12

# injection(j, rows, times, marks, atoms, x_pre, accepted) -> (k, m, q)
Injection = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Solved paths. Event arrays are aligned with the columns of ``batch``."""

    model: object
    x0: np.ndarray  # (n, m)
    t_end: np.ndarray  # (n,)
    batch: ConfigBatch
    pre: np.ndarray  # (n, K, m); NaN where no event happened
    post: np.ndarray  # (n, K, m)
    happened: np.ndarray  # (n, K) event inside (start, t_end]
    accepted: np.ndarray  # (n, K) event changed the state equation (always True for additive)
    final: np.ndarray  # (n, m)
    tangent: Optional[np.ndarray] = None  # (n, m, q)

    def __len__(self) -> int:
        return len(self.final)

    def trajectory(self, i: int) -> "Trajectory":
        k = int(self.batch.counts[i])
        return Trajectory(
            model=self.model,
            x=self.x0[i].copy(),
            t=float(self.t_end[i]),
            config=self.batch.config(i),
            happened=self.happened[i, :k].copy(),
            accepted=self.accepted[i, :k].copy(),
            pre=self.pre[i, :k].copy(),
            post=self.post[i, :k].copy(),
            final=self.final[i].copy(),
        )


def _rhs(model, m: int, q: int):
    drift = model.effective_drift
    if q == 0:
        return drift

    def f(y):
        x = y[:, :m]
        W = y[:, m:].reshape(len(y), m, q)
        J = model.drift_jac(x)
        dW = (J[:, :, :, None] * W[:, None, :, :]).sum(axis=2)
        return np.concatenate([drift(x), dW.reshape(len(y), m * q)], axis=1)

    return f


def _advance(f, y, rows, dur, tol):
    rows = rows[dur[rows] > 0]
    if len(rows):
        try:
            y[rows] = ode.integrate(f, y[rows], dur[rows], tol=tol, bound=BLOWUP)
        except DivergenceError:
            raise DivergenceError("state norm exceeded 1e12; the model violates its growth bound") from None
    return y


def solve(
    model,
    x0,
    t_end,
    batch: ConfigBatch,
    *,
    start=0.0,
    tangent0: Optional[np.ndarray] = None,
    injection: Optional[Injection] = None,
    tol: float = ODE_TOL,
) -> PathBatch:
    """Solve every row of ``batch`` from ``x0`` at time ``start`` up to ``t_end``.

    Events with start < tau <= t_end act on the state; for a thinned model the
    batch holds candidate marks ``[v..., p]`` and a candidate is accepted iff
    p <= b(X(tau-), v).
    """
    n = len(batch)
    m = model.dim
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n, m)).copy()
    t_end = np.broadcast_to(np.asarray(t_end, dtype=float), (n,)).copy()
    start = np.broadcast_to(np.asarray(start, dtype=float), (n,)).copy()
    if np.any(t_end > batch.window) or np.any(start > t_end):
        raise DomainError("need start <= t <= window for every path")
    q = 0 if tangent0 is None else tangent0.shape[2]
    y = np.concatenate([x0] + ([tangent0.reshape(n, m * q)] if q else []), axis=1)
    f = _rhs(model, m, q)
    thinned = isinstance(model, ThinnedModel)

    K = batch.times.shape[1]
    pre = np.full((n, K, m), np.nan)
    post = np.full((n, K, m), np.nan)
    happened = (batch.times > start[:, None]) & (batch.times <= t_end[:, None])
    accepted = np.zeros((n, K), dtype=bool)
    cur = start.copy()
    for j in range(K):
        rows = np.flatnonzero(happened[:, j])
        if not len(rows):
            continue
        tau = batch.times[rows, j]
        dur = np.zeros(n)
        dur[rows] = tau - cur[rows]
        y = _advance(f, y, rows, dur, tol)
        cur[rows] = tau
        x_pre = y[rows, :m].copy()
        marks, atoms = batch.marks[rows, j], batch.atoms[rows, j]
        if thinned:
            v = marks[:, :-1]
            acc = marks[:, -1] <= model.check_rate(x_pre, v, atoms)
            dx = np.where(acc[:, None], model.jumps(x_pre, v, atoms), 0.0)
        else:
            acc = np.ones(len(rows), dtype=bool)
            dx = model.jumps(marks, atoms)
        if q:
            W = y[rows, m:].reshape(len(rows), m, q)
            if thinned and acc.any():
                G = model.jump_jacs(x_pre, v, atoms) * acc[:, None, None]
                W = W + (G[:, :, :, None] * W[:, None, :, :]).sum(axis=2)
            if injection is not None:
                W = W + injection(j, rows, tau, marks, atoms, x_pre, acc)
            y[rows, m:] = W.reshape(len(rows), m * q)
        y[rows, :m] = x_pre + dx
        pre[rows, j] = x_pre
        post[rows, j] = y[rows, :m]
        accepted[rows, j] = acc
    y = _advance(f, y, np.arange(n), t_end - cur, tol)
    tangent = y[:, m:].reshape(n, m, q) if q else None
    return PathBatch(model, x0, t_end, batch, pre, post, happened, accepted, y[:, :m].copy(), tangent)


# --------------------------------------------------------------------------
# Jump responses
# --------------------------------------------------------------------------


def delta_batch(model, x: np.ndarray, marks: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """Additive: a(x + c(u)) - a(x). Thinned: a(y + c) - a(y) - grad c(y) a(y)."""
    if isinstance(model, ThinnedModel):
        v = marks[:, :-1] if marks.shape[1] > model.base.dimension else marks
        c = model.jumps(x, v, atoms)
        a = model.drift(x)
        G = model.jump_jacs(x, v, atoms)
        return model.drift(x + c) - a - np.einsum("kij,kj->ki", G, a)
    c = model.jumps(marks, atoms)
    return model.drift(x + c) - model.drift(x)


def grid_injection(model, grid) -> Injection:
    """Jh_i(tau) Delta(X(tau-), u) into column i for accepted events in cell i."""
    cells = grid.cells

    def inj(j, rows, tau, marks, atoms, x_pre, acc):
        d = delta_batch(model, x_pre, marks, atoms)
        out = np.zeros((len(rows), model.dim, len(cells)))
        for i, cell in enumerate(cells):
            w = cell.direction.J(tau) * (cell.subset.contains(marks, atoms) & acc)
            out[:, :, i] = w[:, None] * d
        return out

    return inj


def grid_derivative_batch(model, x0, t_end, batch: ConfigBatch, grid, tol: float = ODE_TOL):
    """Analytic Sigma^{X(x,t),G} per path, shape ``(n, m, len(grid))``, and the solved paths."""
    n = len(batch)
    W0 = np.zeros((n, model.dim, grid.dimension))
    res = solve(model, x0, t_end, batch, tangent0=W0, injection=grid_injection(model, grid), tol=tol)
    return res.tangent, res


# --------------------------------------------------------------------------
# Single trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    model: object
    x: np.ndarray
    t: float
    config: Configuration
    happened: np.ndarray
    accepted: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    final: np.ndarray

    @property
    def jump_mask(self) -> np.ndarray:
        return self.happened & self.accepted

    def events(self) -> list:
        out = []
        for k in np.flatnonzero(self.happened):
            out.append({
                "time": float(self.config.times[k]),
                "pre": self.pre[k].tolist(),
                "mark": self.config.marks[k].tolist(),
                "atom": int(self.config.atoms[k]),
                "accepted": bool(self.accepted[k]),
                "post": self.post[k].tolist(),
            })
        return out

    def state_at(self, s: float) -> np.ndarray:
        """X(x, s), right-continuous: jumps at times <= s are included."""
        if not 0 <= s <= self.t:
            raise DomainError(f"s={s} outside [0, {self.t}]")
        idx = np.flatnonzero(self.happened & (self.config.times <= s))
        if len(idx):
            k = idx[-1]
            x0, t0 = self.post[k], float(self.config.times[k])
        else:
            x0, t0 = self.x, 0.0
        if s == t0:
            return np.array(x0, copy=True)
        y = ode.integrate(self.model.effective_drift, x0[None, :], np.array([s - t0]), tol=ODE_TOL)
        return y[0]

    def rerun(self, **kw) -> PathBatch:
        return solve(self.model, self.x, self.t, ConfigBatch.from_configs([self.config]), **kw)

    def to_dict(self) -> dict:
        return {"model": self.model.name, "x": self.x.tolist(), "t": self.t,
                "events": self.events(), "final": self.final.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_csv(self) -> str:
        m = len(self.x)
        d = self.config.marks.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time"] + [f"pre_{j}" for j in range(m)] + [f"mark_{j}" for j in range(d)]
                   + ["accepted"] + [f"post_{j}" for j in range(m)])
        for e in self.events():
            w.writerow([repr(e["time"])] + [repr(v) for v in e["pre"]] + [repr(v) for v in e["mark"]]
                       + [int(e["accepted"])] + [repr(v) for v in e["post"]])
        return buf.getvalue()


def simulate_additive(model: AdditiveModel, x, t: float, config: Configuration) -> Trajectory:
    if not isinstance(model, AdditiveModel):
        raise DomainError("simulate_additive needs an AdditiveModel")
    if config.window < t:
        raise DomainError("configuration window must cover [0, t]")
    return solve(model, x, t, ConfigBatch.from_configs([config])).trajectory(0)


def sample_candidates(model: ThinnedModel, t: float, seed: int, paths, *, window=None) -> ConfigBatch:
    return sample_batch(model.space, model.space.full(), window or t, seed, paths, role="candidates")


def simulate_thinned(model: ThinnedModel, x, t: float, seed: int, *, path: int = 0, window=None) -> Trajectory:
    if not isinstance(model, ThinnedModel):
        raise DomainError("simulate_thinned needs a ThinnedModel")
    cfg = sample_configuration(model.space, model.space.full(), window or t, seed, path=path, role="candidates")
    return solve(model, x, t, ConfigBatch.from_configs([cfg])).trajectory(0)
