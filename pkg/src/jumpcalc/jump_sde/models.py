"""SDE model descriptions: additive noise and state-dependent (thinned) jump rate.

All model callables are vectorized over a leading batch axis:

* ``drift(x)``: ``(n, m) -> (n, m)`` and ``drift_jac(x)``: ``(n, m) -> (n, m, m)``;
* additive ``jump(marks, atoms)``: ``(k, d), (k,) -> (k, m)``;
* thinned ``rate(x, v, atoms) -> (k,)``, ``jump(x, v, atoms) -> (k, m)``,
  ``jump_jac(x, v, atoms) -> (k, m, m)``, ``envelope(v) -> (k,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as spi

from ..errors import ConfigurationError, ModelError
from ..point_measure import AtomicSpace, BandSpace, EnvelopeSpace, MarkSpace, MarkSubset

JAC_CHECK_TOL = 1e-5


def fd_jacobian(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a batched map at rows of ``x``; shape ``(n, m_out, m)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cols = []
    for j in range(x.shape[1]):
        e = np.zeros(x.shape[1])
        e[j] = eps
        cols.append((fn(x + e) - fn(x - e)) / (2 * eps))
    return np.stack(cols, axis=-1)


def check_jacobian(fn, jac, points: np.ndarray, what: str, tol: float = JAC_CHECK_TOL) -> None:
    num = fd_jacobian(fn, points)
    ana = np.asarray(jac(points), dtype=float)
    err = np.max(np.abs(num - ana) / (1.0 + np.abs(ana)))
    if not err <= tol:
        raise ConfigurationError(f"{what}: analytic Jacobian disagrees with finite differences ({err:.3g})")


def _probe_points(m: int, seed: int = 12345, n: int = 16, scale: float = 2.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-scale, scale, size=(n, m))


def _jump_mean(space: MarkSpace, subset: MarkSubset, jump, m: int) -> np.ndarray:
    """int_subset c dPi over the simulated truncation."""
    if subset.is_empty or subset.mass == 0:
        return np.zeros(m)
    if isinstance(space, AtomicSpace):
        ids = np.arange(len(space.atoms))
        ok = subset.contains(space.atoms, ids)
        if not ok.any():
            return np.zeros(m)
        c = np.asarray(jump(space.atoms[ok], ids[ok]), dtype=float).reshape(-1, m)
        return np.array([np.dot(space.weights[ok], c[:, j]) for j in range(m)])
    if isinstance(space, BandSpace):
        lo, hi = space.support
        if subset.interval is not None:
            lo, hi = max(lo, subset.interval[0]), min(hi, subset.interval[1])
        out = np.zeros(m)
        for j in range(m):
            def f(u, j=j):
                mk = np.array([[u]])
                keep = subset.contains(mk, np.array([-1]))[0]
                return float(space.density(np.array([u]))[0] * jump(mk, np.array([-1]))[0, j]) * keep
            out[j] = spi.quad(f, lo, hi, limit=400)[0]
        return out
    raise ConfigurationError("compensated jumps need an atomic or band mark space")


@dataclass(frozen=True, eq=False)
class AdditiveModel:
    """dX = a(X) dt + dZ with Z = int_{U1} c dnu + int_{U2} c dnu-tilde.

    ``space`` is the simulated mark truncation; ``compensated`` selects its
    U2 part, whose mean jump enters the drift as ``-kappa``. ``small_jump_drift``
    is a user-declared drift standing in for discarded small jumps (reported,
    not estimated).
    """

    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jac: Callable[[np.ndarray], np.ndarray]
    jump: Callable[[np.ndarray, np.ndarray], np.ndarray]
    space: MarkSpace
    compensated: Optional[MarkSubset] = None
    small_jump_drift: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)
    validate: bool = True

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("model dimension must be >= 1")
        kappa = np.zeros(self.dim)
        if self.compensated is not None:
            kappa = _jump_mean(self.space, self.compensated, self.jump, self.dim)
        small = np.zeros(self.dim) if self.small_jump_drift is None else np.asarray(
            self.small_jump_drift, dtype=float).reshape(self.dim)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "drift_shift", small - kappa)
        if self.validate:
            check_jacobian(self.drift, self.drift_jac, _probe_points(self.dim), f"{self.name} drift")

    kind = "additive"

    def effective_drift(self, x: np.ndarray) -> np.ndarray:
        return self.drift(x) + self.drift_shift

    def jumps(self, marks: np.ndarray, atoms: np.ndarray) -> np.ndarray:
        return np.asarray(self.jump(marks, atoms), dtype=float).reshape(len(atoms), self.dim)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "name": self.name, "dim": self.dim, "params": self.params,
            "space": self.space.to_dict(),
            "compensated": None if self.compensated is None else self.compensated.to_dict(),
            "compensator_drift": (-self.kappa).tolist(),
            "small_jump_drift": (self.drift_shift + self.kappa).tolist(),
        }


@dataclass(frozen=True, eq=False)
class ThinnedModel:
    """dX = a(X) dt + int_V int_0^{b(X-, v)} c(X-, v) nu(dt, dv, dp).

    Candidates live on the envelope space {(v, p): p <= beta(v)} over the
    base measure ``base``. ``gamma`` (optional) bounds |c(x, v)|.
    ``metadata`` carries the declared constants b0, beta1, gamma1; they are
    recorded, not validated.
    """

    name: str
    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    drift_jac: Callable[[np.ndarray], np.ndarray]
    rate: Callable
    envelope: Callable[[np.ndarray], np.ndarray]
    jump: Callable
    jump_jac: Callable
    base: MarkSpace
    gamma: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    validate: bool = True

    kind = "thinned"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("model dimension must be >= 1")
        object.__setattr__(self, "space", EnvelopeSpace(self.base, self.envelope, name=f"{self.name}:candidates"))
        if self.validate:
            self._spot_check()

    def _spot_check(self, n: int = 16) -> None:
        x = _probe_points(self.dim, n=n)
        check_jacobian(self.drift, self.drift_jac, x, f"{self.name} drift")
        rng = np.random.default_rng(54321)
        marks, atoms = self.space.sample(rng, n)
        v = marks[:, :-1]
        self.check_rate(x, v, atoms)
        num = fd_jacobian(lambda y: self.jumps(y, v, atoms), x)
        ana = self.jump_jacs(x, v, atoms)
        if np.max(np.abs(num - ana) / (1.0 + np.abs(ana))) > JAC_CHECK_TOL:
            raise ConfigurationError(f"{self.name}: jump Jacobian disagrees with finite differences")
        if self.gamma is not None:
            g = np.asarray(self.gamma(v), dtype=float).reshape(n)
            if np.any(np.linalg.norm(self.jumps(x, v, atoms), axis=1) > g * (1 + 1e-12)):
                raise ConfigurationError(f"{self.name}: |c(x, v)| exceeds gamma(v)")

    def rates(self, x, v, atoms) -> np.ndarray:
        return np.asarray(self.rate(x, v, atoms), dtype=float).reshape(len(atoms))

    def check_rate(self, x, v, atoms) -> np.ndarray:
        b = self.rates(x, v, atoms)
        beta = np.asarray(self.envelope(v), dtype=float).reshape(len(atoms))
        if np.any(b < 0) or np.any(b > beta * (1 + 1e-12)):
            raise ModelError(f"{self.name}: rate b(x, v) outside [0, beta(v)]")
        return b

    def jumps(self, x, v, atoms) -> np.ndarray:
        return np.asarray(self.jump(x, v, atoms), dtype=float).reshape(len(atoms), self.dim)

    def jump_jacs(self, x, v, atoms) -> np.ndarray:
        return np.asarray(self.jump_jac(x, v, atoms), dtype=float).reshape(len(atoms), self.dim, self.dim)

    def effective_drift(self, x: np.ndarray) -> np.ndarray:
        return self.drift(x)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "name": self.name, "dim": self.dim, "params": self.params,
            "base": self.base.to_dict(), "envelope_mass": self.space.total_mass,
            "metadata": self.metadata,
        }
