"""Differential grids, the additive transformation group they generate, and
finite-difference stochastic derivatives of configuration functionals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .point_measure import ConfigBatch, Configuration, MarkSubset
from .time_stretch import GridDirection, transform_batch

DEFAULT_SCHEDULE = (1e-2, 1e-3, 1e-4)
DEFAULT_FD_TOL = 1e-4


@dataclass(frozen=True)
class Cell:
    direction: GridDirection
    subset: MarkSubset

    @property
    def a(self) -> float:
        return self.direction.a

    @property
    def b(self) -> float:
        return self.direction.b

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "subset": self.subset.to_dict(),
                "h": self.direction.to_dict()}


class DifferentialGrid:
    """m cells [a_i, b_i) x Gamma_i, pairwise disjoint, each with a direction h_i."""

    def __init__(self, cells: Sequence[Cell]):
        cells = tuple(cells)
        if not cells:
            raise ConfigurationError("a grid needs at least one cell")
        for c in cells:
            if not isinstance(c.direction, GridDirection):
                raise ConfigurationError("cell directions must be GridDirection instances")
        for i in range(len(cells)):
            for j in range(i + 1, len(cells)):
                ci, cj = cells[i], cells[j]
                if max(ci.a, cj.a) >= min(ci.b, cj.b):
                    continue
                verdict = ci.subset.disjoint_from(cj.subset)
                if verdict is None:
                    raise ConfigurationError(
                        f"cannot verify that cells {i} and {j} are disjoint; "
                        "use structured (atom/interval) subsets"
                    )
                if not verdict:
                    raise ConfigurationError(f"cells {i} and {j} overlap")
        self.cells = cells

    @property
    def dimension(self) -> int:
        return len(self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def to_dict(self) -> dict:
        return {"cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def uniform(cls, subset: MarkSubset, intervals: Sequence[tuple]) -> "DifferentialGrid":
        """Cells sharing one mark set over disjoint time intervals, canonical bumps."""
        return cls([Cell(GridDirection.bump(a, b), subset) for a, b in intervals])


@dataclass(frozen=True)
class Functional:
    """An R^dim-valued functional of a configuration.

    ``batch_evaluator`` (optional) evaluates a whole ``ConfigBatch`` at once;
    ``derivative`` (optional) returns analytic grid derivatives with shape
    ``(n, dim, m)`` for a batch.
    """

    name: str
    dim: int
    evaluator: Callable[[Configuration], np.ndarray]
    batch_evaluator: Optional[Callable[[ConfigBatch], np.ndarray]] = None
    derivative: Optional[Callable[[ConfigBatch, DifferentialGrid], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __call__(self, config: Configuration) -> np.ndarray:
        return np.asarray(self.evaluator(config), dtype=float).reshape(self.dim)

    def batch(self, batch: ConfigBatch) -> np.ndarray:
        if self.batch_evaluator is not None:
            return np.asarray(self.batch_evaluator(batch), dtype=float).reshape(len(batch), self.dim)
        return np.stack([self(c) for c in batch.configs()])


def first_jump_time(subset: MarkSubset, n: int = 1) -> Functional:
    """tau_n^Gamma, the n-th jump time in ``subset`` (inf when there is none)."""

    def one(c: Configuration):
        t = c.times[subset.contains(c.marks, c.atoms)]
        return t[n - 1] if len(t) >= n else np.inf

    def many(b: ConfigBatch):
        mask = b.mask(subset)
        t = np.where(mask, b.times, np.inf)
        t.sort(axis=1)
        return t[:, n - 1] if t.shape[1] >= n else np.full(len(b), np.inf)

    return Functional(f"tau_{n}", 1, one, many, params={"subset": subset.label, "n": n})


def cell_count(subset: MarkSubset, t: float) -> Functional:
    def one(c):
        return np.count_nonzero(subset.contains(c.marks, c.atoms) & (c.times <= t))

    def many(b):
        return np.count_nonzero(b.mask(subset) & (b.times <= t), axis=1)

    return Functional("count", 1, one, many, params={"subset": subset.label, "t": t})


def constant(value) -> Functional:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return Functional(
        "constant", len(value), lambda c: value, lambda b: np.tile(value, (len(b), 1)),
        params={"value": value.tolist()},
    )


# --------------------------------------------------------------------------
# Transformation group
# --------------------------------------------------------------------------


def grid_transform_batch(batch: ConfigBatch, grid: DifferentialGrid, z, order=None) -> ConfigBatch:
    z = np.asarray(z, dtype=float).reshape(-1)
    if len(z) != grid.dimension:
        raise DomainError(f"z has length {len(z)}, grid dimension is {grid.dimension}")
    for i in order if order is not None else range(grid.dimension):
        if z[i] != 0.0:
            cell = grid.cells[i]
            batch = transform_batch(batch, cell.direction.scaled(z[i]), cell.subset)
    return batch


def grid_transform(config: Configuration, grid: DifferentialGrid, z, order=None) -> Configuration:
    """T_z^G = T^1_{z_1} o ... o T^m_{z_m}; cells commute, so ``order`` does not matter."""
    return grid_transform_batch(ConfigBatch.from_configs([config]), grid, z, order).config(0)


# --------------------------------------------------------------------------
# Finite-difference derivatives
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FdResult:
    value: np.ndarray
    error: np.ndarray
    stable: np.ndarray  # bool; one flag per row in batch results

    def __iter__(self):
        return iter((self.value, self.error, self.stable))


def _richardson(levels: list, schedule: Sequence[float]):
    """Extrapolate central differences (error O(eps^2)) over a decreasing schedule."""
    est = []
    for k in range(len(levels) - 1):
        r2 = (schedule[k] / schedule[k + 1]) ** 2
        est.append(levels[k + 1] + (levels[k + 1] - levels[k]) / (r2 - 1.0))
    if len(est) == 1:
        return est[0], np.abs(levels[1] - levels[0])
    return est[-1], np.abs(est[-1] - est[-2])


def _flag(value, error, tol):
    finite = np.all(np.isfinite(value), axis=1) & np.all(np.isfinite(error), axis=1)
    within = np.all(error <= tol * (1.0 + np.abs(value)), axis=1)
    return finite & within


def fd_derivative_batch(
    f: Functional,
    batch: ConfigBatch,
    grid: DifferentialGrid,
    i: int,
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    tol: float = DEFAULT_FD_TOL,
) -> FdResult:
    """Central differences of f along cell ``i`` with Richardson extrapolation.

    Rows whose extrapolation does not settle (error estimate above ``tol``
    relative to 1 + |value|) are flagged unstable; their values are still
    returned. Jumps of f in the transformation parameter show up this way.
    """
    schedule = tuple(float(e) for e in schedule)
    if len(schedule) < 2 or any(e <= 0 for e in schedule) or list(schedule) != sorted(schedule, reverse=True):
        raise DomainError("schedule must hold >= 2 decreasing positive steps")
    m = grid.dimension
    levels = []
    for eps in schedule:
        zp = np.zeros(m)
        zp[i] = eps
        fp = f.batch(grid_transform_batch(batch, grid, zp))
        fm = f.batch(grid_transform_batch(batch, grid, -zp))
        with np.errstate(invalid="ignore"):
            levels.append((fp - fm) / (2.0 * eps))
    value, error = _richardson(levels, schedule)
    return FdResult(value, error, _flag(value, error, tol))


def fd_derivative(
    f: Functional,
    config: Configuration,
    grid: DifferentialGrid,
    i: int,
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    tol: float = DEFAULT_FD_TOL,
) -> FdResult:
    res = fd_derivative_batch(f, ConfigBatch.from_configs([config]), grid, i, schedule, tol)
    return FdResult(res.value[0], res.error[0], bool(res.stable[0]))


def jacobian_batch(
    f: Functional,
    batch: ConfigBatch,
    grid: DifferentialGrid,
    source: str = "fd",
    schedule: Sequence[float] = DEFAULT_SCHEDULE,
    tol: float = DEFAULT_FD_TOL,
):
    """Sigma^{f,G} per row, shape ``(n, dim, m)``, with FD errors and stability flags.

    Analytic rows report zero error and are always stable.
    """
    if source == "analytic":
        if f.derivative is None:
            raise ConfigurationError(f"functional {f.name!r} has no analytic derivative")
        sigma = np.asarray(f.derivative(batch, grid), dtype=float)
        return sigma, np.zeros_like(sigma), np.ones(len(batch), dtype=bool)
    if source != "fd":
        raise DomainError(f"unknown derivative source {source!r}")
    cols, errs, stable = [], [], np.ones(len(batch), dtype=bool)
    for i in range(grid.dimension):
        res = fd_derivative_batch(f, batch, grid, i, schedule, tol)
        cols.append(res.value)
        errs.append(res.error)
        stable &= res.stable
    return np.stack(cols, axis=2), np.stack(errs, axis=2), stable


def jacobian_matrix(f: Functional, config: Configuration, grid: DifferentialGrid, source: str = "fd") -> np.ndarray:
    if f.dim != grid.dimension:
        raise DomainError(f"functional dimension {f.dim} differs from grid dimension {grid.dimension}")
    sigma, _, _ = jacobian_batch(f, ConfigBatch.from_configs([config]), grid, source)
    return sigma[0]


def nondegenerate(sigma, rel_tol: float = 1e-8):
    """Smallest singular value > rel_tol x largest; works on one matrix or a stack."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape[-1] != sigma.shape[-2]:
        raise DomainError("matrix must be square")
    if not np.all(np.isfinite(sigma)):
        bad = ~np.all(np.isfinite(sigma), axis=(-2, -1))
        sigma = np.where(bad[..., None, None], 0.0, sigma)
    sv = np.linalg.svd(sigma, compute_uv=False)
    out = (sv[..., 0] > 0) & (sv[..., -1] > rel_tol * sv[..., 0])
    return bool(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MixedResult:
    h_then_g: float
    g_then_h: float
    error_hg: float
    error_gh: float
    stable: bool


def _mixed_level(f, batch, first, second, subset, e):
    total = 0.0
    for s1 in (1.0, -1.0):
        b1 = transform_batch(batch, first.scaled(s1 * e), subset)
        for s2 in (1.0, -1.0):
            b2 = transform_batch(b1, second.scaled(s2 * e), subset)
            with np.errstate(invalid="ignore"):
                total = total + s1 * s2 * f.batch(b2)
    return total / (4.0 * e * e)


def mixed_second_fd_batch(
    f: Functional,
    batch: ConfigBatch,
    g,
    h,
    subset: MarkSubset,
    schedule: Sequence[float] = (2e-3, 1e-3),
    tol: float = DEFAULT_FD_TOL,
):
    """D_h D_g f and D_g D_h f by four-point mixed differences.

    D_h D_g f evaluates f on T_{delta g}(T_{eps h} omega): the h-step is applied
    first. Two step sizes are combined by Richardson extrapolation.
    Returns ``(hg, gh, err_hg, err_gh, stable)`` arrays of shape ``(n, dim)``.
    """
    out = []
    for first, second in ((h, g), (g, h)):
        levels = [_mixed_level(f, batch, first, second, subset, e) for e in schedule]
        out.append(_richardson(levels, schedule))
    (hg, ehg), (gh, egh) = out
    stable = _flag(hg, ehg, tol) & _flag(gh, egh, tol)
    return hg, gh, ehg, egh, stable


def mixed_second_fd(f: Functional, config: Configuration, g, h, subset: MarkSubset, **kw) -> MixedResult:
    hg, gh, ehg, egh, stable = mixed_second_fd_batch(f, ConfigBatch.from_configs([config]), g, h, subset, **kw)
    return MixedResult(float(hg[0, 0]), float(gh[0, 0]), float(ehg[0, 0]), float(egh[0, 0]), bool(stable[0]))
