"""Stochastic exponents, analytic grid derivatives and rank probes for SDE paths."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import DomainError
from ..grid_calculus import DifferentialGrid, Functional
from ..point_measure import AtomicSpace, BandSpace, ConfigBatch, MarkSubset
from .models import AdditiveModel, ThinnedModel
from .solver import ODE_TOL, Trajectory, delta_batch, grid_derivative_batch, solve

RANK_TOL = 1e-8
INVERT_TOL = 1e-10


def delta(model, y, mark, atom: int = -1) -> np.ndarray:
    """Delta(y, u) for one state and one mark (for thinned models, mark = v)."""
    y = np.asarray(y, dtype=float).reshape(1, model.dim)
    mark = np.atleast_1d(np.asarray(mark, dtype=float)).reshape(1, -1)
    return delta_batch(model, y, mark, np.array([atom]))[0]


def tilde_delta(model: ThinnedModel, y, v, atom: int = -1) -> Optional[np.ndarray]:
    """[I + grad c(y, v)]^{-1} Delta(y, v), or None when the factor is not invertible."""
    y = np.asarray(y, dtype=float).reshape(1, model.dim)
    v = np.atleast_1d(np.asarray(v, dtype=float)).reshape(1, -1)
    a = np.array([atom])
    F = np.eye(model.dim) + model.jump_jacs(y, v, a)[0]
    sv = np.linalg.svd(F, compute_uv=False)
    if not sv[-1] > INVERT_TOL * sv[0]:
        return None
    return np.linalg.solve(F, delta_batch(model, y, v, a)[0])


def stochastic_exponent(trajectory: Trajectory, s: float, t: float) -> np.ndarray:
    """E_s^t: linearized flow from s to t, with factors (I + grad c) at accepted jumps in (s, t]."""
    if not 0 <= s <= t <= trajectory.t:
        raise DomainError("need 0 <= s <= t <= trajectory horizon")
    m = trajectory.model.dim
    xs = trajectory.state_at(s)
    res = solve(trajectory.model, xs, t, ConfigBatch.from_configs([trajectory.config]),
                start=s, tangent0=np.eye(m)[None])
    return res.tangent[0]


def _grid_single(model, trajectory: Trajectory, grid: DifferentialGrid, i: int) -> np.ndarray:
    if not 0 <= i < grid.dimension:
        raise DomainError(f"cell index {i} out of range")
    sigma, _ = grid_derivative_batch(model, trajectory.x, trajectory.t,
                                     ConfigBatch.from_configs([trajectory.config]), grid)
    return sigma[0, :, i]


def derivative_additive(model: AdditiveModel, trajectory: Trajectory, grid: DifferentialGrid, i: int) -> np.ndarray:
    """D_i^G X(x, t): dY = grad a Y between jumps, Y += Jh_i(s) Delta(X(s-), u) at jumps in cell i."""
    if not isinstance(model, AdditiveModel):
        raise DomainError("derivative_additive needs an AdditiveModel")
    return _grid_single(model, trajectory, grid, i)


def derivative_thinned(model: ThinnedModel, trajectory: Trajectory, grid: DifferentialGrid, i: int) -> np.ndarray:
    """As above, plus Y <- (I + grad c) Y at every accepted jump."""
    if not isinstance(model, ThinnedModel):
        raise DomainError("derivative_thinned needs a ThinnedModel")
    return _grid_single(model, trajectory, grid, i)


def endpoint_functional(model, x, t: float) -> Functional:
    """X(x, t) as a functional of the (candidate) configuration, with analytic derivative."""
    x = np.asarray(x, dtype=float).reshape(model.dim)

    def many(batch: ConfigBatch):
        return solve(model, x, t, batch).final

    def one(config):
        return many(ConfigBatch.from_configs([config]))[0]

    def deriv(batch: ConfigBatch, grid: DifferentialGrid):
        return grid_derivative_batch(model, x, t, batch, grid)[0]

    return Functional(f"X({model.name})", model.dim, one, many, deriv,
                      params={"model": model.name, "x": x.tolist(), "t": t})


# --------------------------------------------------------------------------
# Rank of the span of propagated jump responses
# --------------------------------------------------------------------------


def span_vectors_batch(model, x0, t_end, batch: ConfigBatch, tol: float = ODE_TOL):
    """E_tau^t Delta(X(tau-), u) for every accepted event, as columns ``(n, m, K)``."""
    n, K = batch.times.shape
    m = model.dim

    def inj(j, rows, tau, marks, atoms, x_pre, acc):
        out = np.zeros((len(rows), m, K))
        out[:, :, j] = delta_batch(model, x_pre, marks, atoms) * acc[:, None]
        return out

    res = solve(model, x0, t_end, batch, tangent0=np.zeros((n, m, K)), injection=inj, tol=tol)
    return res.tangent, res


def _rank(vectors: np.ndarray, rel_tol: float):
    if vectors.shape[1] == 0:
        return 0, np.zeros((vectors.shape[0], 0))
    u, sv, _ = np.linalg.svd(vectors, full_matrices=False)
    if sv[0] == 0:
        return 0, np.zeros((vectors.shape[0], 0))
    r = int(np.count_nonzero(sv > rel_tol * sv[0]))
    return r, u[:, :r]


def span_rank(trajectory: Trajectory, model=None, t: Optional[float] = None, rel_tol: float = RANK_TOL):
    """Rank and orthonormal basis of S = span{E_tau^t Delta(X(tau-), p(tau))} over accepted jumps."""
    model = trajectory.model if model is None else model
    t = trajectory.t if t is None else t
    if not 0 <= t <= trajectory.t:
        raise DomainError("t beyond trajectory horizon")
    vecs, _ = span_vectors_batch(model, trajectory.x, t, ConfigBatch.from_configs([trajectory.config]))
    return _rank(vecs[0], rel_tol)


def span_rank_batch(model, x0, t_end, batch: ConfigBatch, rel_tol: float = RANK_TOL) -> np.ndarray:
    vecs, _ = span_vectors_batch(model, x0, t_end, batch)
    return np.array([_rank(v, rel_tol)[0] for v in vecs])


# --------------------------------------------------------------------------
# Infinite-mass condition probe
# --------------------------------------------------------------------------


def _weighted_marks(model, space, subset: MarkSubset, y: np.ndarray, band_points: int):
    """Marks of ``subset`` with weights Pi (additive) or b(y, v) pi (thinned), plus Delta/Delta-tilde."""
    if isinstance(space, AtomicSpace):
        ids = np.arange(len(space.atoms))
        ok = subset.contains(space.atoms, ids)
        marks, atoms, w = space.atoms[ok], ids[ok], space.weights[ok]
    elif isinstance(space, BandSpace):
        lo, hi = space.support
        edges = np.linspace(lo, hi, band_points + 1)
        mids = 0.5 * (edges[1:] + edges[:-1])
        marks = mids[:, None]
        atoms = np.full(len(mids), -1)
        w = space.density(mids) * np.diff(edges)
        ok = subset.contains(marks, atoms)
        marks, atoms, w = marks[ok], atoms[ok], w[ok]
    else:
        raise DomainError("condition probe needs an atomic or band mark space")
    ys = np.broadcast_to(y, (len(atoms), len(y))).copy()
    if isinstance(model, ThinnedModel):
        w = w * model.check_rate(ys, marks, atoms)
        vecs = np.full((len(atoms), len(y)), np.nan)
        for k in range(len(atoms)):
            d = tilde_delta(model, y, marks[k], int(atoms[k]))
            if d is not None:
                vecs[k] = d
        return w, vecs
    return w, delta_batch(model, ys, marks, atoms)


def condition_probe(
    model,
    y,
    directions,
    ladder: Sequence[MarkSubset],
    threshold: float = 1e-9,
    band_points: int = 20000,
) -> np.ndarray:
    """Mass of {u : |<Delta(y, u), l>| > threshold} per direction l and truncation level.

    Returns an array of shape ``(len(directions), len(ladder))``. For thinned
    models Delta-tilde and the weights b(y, v) pi(dv) are used; marks where
    I + grad c is singular are skipped.
    """
    y = np.asarray(y, dtype=float).reshape(model.dim)
    L = np.atleast_2d(np.asarray(directions, dtype=float))
    space = model.base if isinstance(model, ThinnedModel) else model.space
    out = np.zeros((len(L), len(ladder)))
    for k, level in enumerate(ladder):
        w, vecs = _weighted_marks(model, space, level, y, band_points)
        if not len(w):
            continue
        proj = np.abs(vecs @ L.T)  # (atoms, directions)
        hit = np.nan_to_num(proj, nan=0.0) > threshold
        out[:, k] = (w[:, None] * hit).sum(axis=0)
    return out
