"""Finite realizations of a Poisson point measure with intensity dt x Pi(du).

Marks are real vectors. Pi is always handled through a finite-mass
truncation (a ``MarkSpace``); bounded mark sets are ``MarkSubset`` objects
carrying their exact mass under the space that built them.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as spi

from .errors import ConfigurationError, DomainError, NumericError
from .rng import stream

MarkPredicate = Callable[[np.ndarray], np.ndarray]


# --------------------------------------------------------------------------
# Mark subsets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkSubset:
    """A bounded mark set Gamma with its mass Pi(Gamma).

    Membership is the conjunction of the constraints that are set:

    * ``atoms``: atom indices of an atomic space (identity by index, never by
      float comparison of the mark values);
    * ``interval``: half-open ``[lo, hi)`` on mark component 0;
    * ``p_interval``: half-open ``[lo, hi)`` on the last component, the
      auxiliary acceptance coordinate of an envelope space;
    * ``predicate``: a vectorized callable ``marks -> bool array``.

    Build subsets through ``MarkSpace.subset``/``MarkSpace.full`` so that the
    mass is computed, or through ``MarkSubset.empty``.
    """

    mass: float
    label: str = "subset"
    atoms: Optional[frozenset] = None
    interval: Optional[tuple] = None
    p_interval: Optional[tuple] = None
    predicate: Optional[MarkPredicate] = field(default=None, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass >= 0):
            raise ConfigurationError(f"subset {self.label!r} has invalid mass {self.mass!r}")

    @classmethod
    def empty(cls, label: str = "empty") -> "MarkSubset":
        return cls(mass=0.0, label=label, atoms=frozenset())

    @property
    def is_empty(self) -> bool:
        if self.atoms is not None and not self.atoms:
            return True
        for iv in (self.interval, self.p_interval):
            if iv is not None and not iv[0] < iv[1]:
                return True
        return False

    def contains(self, marks: np.ndarray, atoms: np.ndarray) -> np.ndarray:
        """Boolean mask over points given their marks ``(..., d)`` and atom ids ``(...)``."""
        atoms = np.asarray(atoms)
        marks = np.asarray(marks, dtype=float)
        mask = np.ones(atoms.shape, dtype=bool)
        if self.atoms is not None:
            if not self.atoms:
                return np.zeros(atoms.shape, dtype=bool)
            mask &= np.isin(atoms, np.fromiter(self.atoms, dtype=np.int64))
        if self.interval is not None:
            lo, hi = self.interval
            mask &= (marks[..., 0] >= lo) & (marks[..., 0] < hi)
        if self.p_interval is not None:
            lo, hi = self.p_interval
            mask &= (marks[..., -1] >= lo) & (marks[..., -1] < hi)
        if self.predicate is not None and mask.any():
            mask &= np.asarray(self.predicate(marks), dtype=bool)
        return mask

    def constraints(self) -> dict:
        return {
            "atoms": self.atoms,
            "interval": self.interval,
            "p_interval": self.p_interval,
            "predicate": self.predicate,
        }

    def intersect(self, other: "MarkSubset", space: "MarkSpace") -> "MarkSubset":
        atoms = _meet_sets(self.atoms, other.atoms)
        interval = _meet_intervals(self.interval, other.interval)
        p_interval = _meet_intervals(self.p_interval, other.p_interval)
        predicate = _meet_predicates(self.predicate, other.predicate)
        return space.subset(
            atoms=atoms,
            interval=interval,
            p_interval=p_interval,
            predicate=predicate,
            label=f"({self.label})&({other.label})",
        )

    def disjoint_from(self, other: "MarkSubset") -> Optional[bool]:
        """True/False when decidable from the structured constraints, else None."""
        if self.is_empty or other.is_empty:
            return True
        if self.atoms is not None and other.atoms is not None and not (self.atoms & other.atoms):
            return True
        for a, b in ((self.interval, other.interval), (self.p_interval, other.p_interval)):
            if a is not None and b is not None and not max(a[0], b[0]) < min(a[1], b[1]):
                return True
        if self.predicate is not None or other.predicate is not None:
            return None
        return False

    def to_dict(self) -> dict:
        out: dict = {"label": self.label, "mass": self.mass}
        if self.atoms is not None:
            out["atoms"] = sorted(self.atoms)
        if self.interval is not None:
            out["interval"] = list(self.interval)
        if self.p_interval is not None:
            out["p_interval"] = list(self.p_interval)
        if self.predicate is not None:
            out["predicate"] = getattr(self.predicate, "__name__", "callable")
        return out


def _meet_sets(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return frozenset(a) & frozenset(b)


def _meet_intervals(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return (max(a[0], b[0]), min(a[1], b[1]))


def _meet_predicates(a, b):
    if a is None:
        return b
    if b is None:
        return a

    def both(marks):
        return np.asarray(a(marks), dtype=bool) & np.asarray(b(marks), dtype=bool)

    return both


def _interval_overlap(lo: np.ndarray, hi: np.ndarray, iv) -> np.ndarray:
    if iv is None:
        return hi - lo
    return np.clip(np.minimum(hi, iv[1]) - np.maximum(lo, iv[0]), 0.0, None)


# --------------------------------------------------------------------------
# Mark spaces (finite-mass truncations of Pi)
# --------------------------------------------------------------------------


class MarkSpace:
    """Finite-mass truncation of the mark intensity Pi."""

    name: str
    dimension: int
    total_mass: float
    is_atomic = False

    def full(self) -> MarkSubset:
        return MarkSubset(mass=self.total_mass, label=f"{self.name}:all")

    def subset(
        self,
        *,
        atoms=None,
        interval=None,
        p_interval=None,
        predicate: Optional[MarkPredicate] = None,
        label: str = "subset",
    ) -> MarkSubset:
        atoms = None if atoms is None else frozenset(int(a) for a in atoms)
        probe = MarkSubset(
            mass=0.0, label=label, atoms=atoms, interval=interval,
            p_interval=p_interval, predicate=predicate,
        )
        mass = 0.0 if probe.is_empty else float(self._mass(probe))
        return MarkSubset(
            mass=mass, label=label, atoms=atoms, interval=interval,
            p_interval=p_interval, predicate=predicate,
        )

    def _mass(self, subset: MarkSubset) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` i.i.d. marks from Pi / Pi(U); returns ``(marks, atom_ids)``."""
        raise NotImplementedError

    def in_support(self, marks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample_restricted(
        self, rng: np.random.Generator, n: int, subset: MarkSubset
    ) -> tuple[np.ndarray, np.ndarray]:
        """``n`` i.i.d. marks from Pi restricted to ``subset``, by rejection.

        Restricting a Poisson measure to a set is exact thinning, so rejection
        from the full truncation is an exact sampler.
        """
        if n == 0:
            return np.zeros((0, self.dimension)), np.zeros(0, dtype=np.int64)
        if subset.mass <= 0:
            raise ConfigurationError(f"cannot sample from null subset {subset.label!r}")
        ratio = subset.mass / self.total_mass
        if ratio < 1e-6:
            raise ConfigurationError(
                f"subset {subset.label!r} carries a fraction {ratio:.3g} of the truncation; "
                "declare a tighter space instead"
            )
        marks_out, atoms_out, have = [], [], 0
        while have < n:
            draw = max(16, int(1.2 * (n - have) / ratio) + 8)
            marks, atoms = self.sample(rng, draw)
            keep = subset.contains(marks, atoms)
            marks_out.append(marks[keep])
            atoms_out.append(atoms[keep])
            have += int(keep.sum())
        return np.concatenate(marks_out)[:n], np.concatenate(atoms_out)[:n]

    def to_dict(self) -> dict:
        raise NotImplementedError


class AtomicSpace(MarkSpace):
    """Pi = sum_k w_k delta_{u_k} over finitely many distinct atoms."""

    is_atomic = True

    def __init__(self, atoms, weights, name: str = "atomic"):
        atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        if atoms.ndim != 2:
            raise ConfigurationError("atoms must be an array of mark vectors")
        weights = np.asarray(weights, dtype=float).reshape(-1)
        if len(weights) != len(atoms) or len(atoms) == 0:
            raise ConfigurationError("need one positive weight per atom")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ConfigurationError("atomic weights must be finite and > 0")
        if len(np.unique(atoms, axis=0)) != len(atoms):
            raise ConfigurationError("atoms must be distinct")
        self.name = name
        self.atoms = atoms
        self.atoms.setflags(write=False)
        self.weights = weights
        self.weights.setflags(write=False)
        self.dimension = atoms.shape[1]
        self.total_mass = float(math.fsum(weights))

    def _allowed(self, subset: MarkSubset) -> np.ndarray:
        return subset.contains(self.atoms, np.arange(len(self.atoms)))

    def _mass(self, subset: MarkSubset) -> float:
        return float(math.fsum(self.weights[self._allowed(subset)]))

    def sample(self, rng, n):
        idx = rng.choice(len(self.weights), size=n, p=self.weights / self.weights.sum())
        return self.atoms[idx].copy(), idx.astype(np.int64)

    def sample_restricted(self, rng, n, subset):
        if n == 0:
            return np.zeros((0, self.dimension)), np.zeros(0, dtype=np.int64)
        allowed = np.flatnonzero(self._allowed(subset))
        if len(allowed) == 0:
            raise ConfigurationError(f"cannot sample from null subset {subset.label!r}")
        w = self.weights[allowed]
        idx = allowed[rng.choice(len(allowed), size=n, p=w / w.sum())]
        return self.atoms[idx].copy(), idx.astype(np.int64)

    def in_support(self, marks):
        marks = np.atleast_2d(marks)
        return np.array([bool(np.any(np.all(self.atoms == m, axis=1))) for m in marks])

    def to_dict(self):
        return {
            "kind": "atomic",
            "name": self.name,
            "atoms": self.atoms.tolist(),
            "weights": self.weights.tolist(),
        }


class BandSpace(MarkSpace):
    """Absolutely continuous Pi(du) = density(u) du on a real interval (1-d marks).

    ``total_mass`` is declared by the user and checked against quadrature.
    Without a custom ``sampler(rng, n)`` marks are drawn by rejection under
    ``density_max`` (estimated on a fine grid with 10% headroom if omitted).
    """

    def __init__(
        self,
        support,
        density: Callable[[np.ndarray], np.ndarray],
        total_mass: float,
        *,
        density_max: Optional[float] = None,
        sampler=None,
        name: str = "band",
    ):
        lo, hi = (float(v) for v in support)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ConfigurationError("band support must be a finite interval lo < hi")
        if not (math.isfinite(total_mass) and total_mass > 0):
            raise ConfigurationError("band total_mass must be finite and > 0")
        quad, _ = spi.quad(lambda u: float(density(np.array([u]))[0]), lo, hi, limit=200, epsabs=0)
        if abs(quad - total_mass) > 1e-6 * total_mass:
            raise ConfigurationError(
                f"declared total_mass {total_mass} disagrees with quadrature {quad}"
            )
        self.name = name
        self.support = (lo, hi)
        self.density = density
        self.total_mass = float(total_mass)
        self.dimension = 1
        self.sampler = sampler
        if density_max is None:
            grid = np.linspace(lo, hi, 4097)
            density_max = 1.1 * float(np.max(density(grid)))
        self.density_max = float(density_max)

    def _mass(self, subset):
        lo, hi = self.support
        if subset.interval is not None:
            lo, hi = max(lo, subset.interval[0]), min(hi, subset.interval[1])
            if not lo < hi:
                return 0.0
        if subset.atoms is not None or subset.p_interval is not None:
            raise ConfigurationError("band spaces have no atoms or auxiliary coordinate")
        if subset.predicate is None:
            f = lambda u: float(self.density(np.array([u]))[0])  # noqa: E731
        else:
            def f(u):
                m = np.array([[u]])
                return float(self.density(np.array([u]))[0]) * float(subset.predicate(m)[0])
        val, _ = spi.quad(f, lo, hi, limit=400)
        return val

    def sample(self, rng, n):
        if self.sampler is not None:
            marks = np.asarray(self.sampler(rng, n), dtype=float).reshape(n, 1)
        else:
            marks = _rejection_1d(rng, n, self.density, self.support, self.density_max).reshape(n, 1)
        return marks, np.full(n, -1, dtype=np.int64)

    def in_support(self, marks):
        marks = np.atleast_2d(marks)
        return (marks[:, 0] >= self.support[0]) & (marks[:, 0] <= self.support[1])

    def to_dict(self):
        return {
            "kind": "band",
            "name": self.name,
            "support": list(self.support),
            "total_mass": self.total_mass,
        }


def _rejection_1d(rng, n, density, support, fmax):
    lo, hi = support
    out, have = [], 0
    while have < n:
        m = max(32, 2 * (n - have))
        u = lo + (hi - lo) * rng.random(m)
        y = fmax * rng.random(m)
        fu = density(u)
        if np.any(fu > fmax):
            raise ConfigurationError("density exceeds declared density_max")
        keep = u[y < fu]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


class EnvelopeSpace(MarkSpace):
    """Marks (v, p) with v ~ pi on V and p uniform under an envelope beta(v).

    This is the truncation {p <= beta(v)} of pi(dv) x dp used to simulate a
    state-dependent jump rate by thinning; its mass is the integral of beta
    against pi. Mark vectors are ``[v..., p]`` and atom ids are those of v.
    """

    def __init__(self, base: MarkSpace, envelope: Callable[[np.ndarray], np.ndarray], name=None):
        self.base = base
        self.envelope = envelope
        self.name = name or f"{base.name}*envelope"
        self.dimension = base.dimension + 1
        self.is_atomic = base.is_atomic
        self.total_mass = float(self._mass(MarkSubset(mass=0.0)))
        if not (math.isfinite(self.total_mass) and self.total_mass > 0):
            raise ConfigurationError("envelope mass must be finite and > 0")

    def _beta(self, v: np.ndarray) -> np.ndarray:
        b = np.asarray(self.envelope(v), dtype=float).reshape(len(v))
        if np.any(~np.isfinite(b)) or np.any(b < 0):
            raise ConfigurationError("envelope must be finite and non-negative")
        return b

    def _mass(self, subset):
        base_sub = MarkSubset(
            mass=0.0, atoms=subset.atoms, interval=subset.interval,
        )
        if isinstance(self.base, AtomicSpace):
            v = self.base.atoms
            beta = self._beta(v)
            ok = base_sub.contains(v, np.arange(len(v)))
            length = _interval_overlap(np.zeros_like(beta), beta, subset.p_interval)
            if subset.predicate is not None:
                # Predicate sees full (v, p) marks; resolve it at the interval midpoint
                # only when it does not depend on p, which is checked below.
                mids = np.column_stack([v, 0.5 * beta])
                lows = np.column_stack([v, 0.25 * beta])
                pm, pl = subset.predicate(mids), subset.predicate(lows)
                if np.any(np.asarray(pm) != np.asarray(pl)):
                    raise ConfigurationError("envelope predicates may only depend on v; use p_interval")
                ok &= np.asarray(pm, dtype=bool)
            return float(math.fsum(self.base.weights[ok] * length[ok]))
        if isinstance(self.base, BandSpace):
            lo, hi = self.base.support
            if subset.interval is not None:
                lo, hi = max(lo, subset.interval[0]), min(hi, subset.interval[1])
                if not lo < hi:
                    return 0.0

            def f(u):
                vv = np.array([[u]])
                b = self._beta(vv)
                ln = _interval_overlap(np.zeros(1), b, subset.p_interval)[0]
                w = float(self.base.density(np.array([u]))[0]) * ln
                if subset.predicate is not None:
                    w *= float(subset.predicate(np.array([[u, 0.5 * b[0]]]))[0])
                return w

            val, _ = spi.quad(f, lo, hi, limit=400)
            return val
        raise ConfigurationError("envelope base must be atomic or band")

    def sample(self, rng, n):
        if isinstance(self.base, AtomicSpace):
            w = self.base.weights * self._beta(self.base.atoms)
            idx = rng.choice(len(w), size=n, p=w / w.sum())
            v = self.base.atoms[idx]
            atoms = idx.astype(np.int64)
        else:
            dens = lambda u: self.base.density(u) * self._beta(u.reshape(-1, 1))  # noqa: E731
            grid = np.linspace(*self.base.support, 4097)
            fmax = 1.1 * float(np.max(dens(grid)))
            v = _rejection_1d(rng, n, dens, self.base.support, fmax).reshape(n, 1)
            atoms = np.full(n, -1, dtype=np.int64)
        p = rng.random(n) * self._beta(v)
        return np.column_stack([v, p]), atoms

    def sample_restricted(self, rng, n, subset):
        if isinstance(self.base, AtomicSpace) and subset.predicate is None:
            if n == 0:
                return np.zeros((0, self.dimension)), np.zeros(0, dtype=np.int64)
            v_all = self.base.atoms
            beta = self._beta(v_all)
            ok = MarkSubset(mass=0.0, atoms=subset.atoms, interval=subset.interval).contains(
                v_all, np.arange(len(v_all))
            )
            piv = subset.p_interval or (0.0, math.inf)
            plo = np.clip(np.full_like(beta, piv[0]), 0.0, beta)
            phi = np.clip(np.full_like(beta, piv[1]), 0.0, beta)
            w = np.where(ok, self.base.weights * (phi - plo), 0.0)
            if w.sum() <= 0:
                raise ConfigurationError(f"cannot sample from null subset {subset.label!r}")
            idx = rng.choice(len(w), size=n, p=w / w.sum())
            p = plo[idx] + (phi[idx] - plo[idx]) * rng.random(n)
            return np.column_stack([v_all[idx], p]), idx.astype(np.int64)
        return super().sample_restricted(rng, n, subset)

    def in_support(self, marks):
        marks = np.atleast_2d(marks)
        v, p = marks[:, :-1], marks[:, -1]
        return self.base.in_support(v) & (p >= 0) & (p <= self._beta(v))

    def to_dict(self):
        return {"kind": "envelope", "name": self.name, "base": self.base.to_dict(),
                "total_mass": self.total_mass}


# --------------------------------------------------------------------------
# Configurations
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Configuration:
    """Sorted points (t, mark) of one realization on the window [0, window)."""

    window: float
    times: np.ndarray
    marks: np.ndarray
    atoms: np.ndarray
    source: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.window) and self.window > 0):
            raise DomainError(f"window must be > 0, got {self.window!r}")
        times = np.array(self.times, dtype=float).reshape(-1)
        marks = np.array(self.marks, dtype=float)
        if marks.ndim == 1:
            marks = marks.reshape(len(times), -1) if len(times) else marks.reshape(0, max(1, marks.size))
        atoms = np.array(self.atoms, dtype=np.int64).reshape(-1)
        if not (len(times) == len(marks) == len(atoms)):
            raise ConfigurationError("times, marks and atoms must have equal length")
        if len(times):
            if np.any(~np.isfinite(times)) or times[0] < 0 or times[-1] >= self.window:
                raise ConfigurationError("point times must lie in [0, window)")
            if np.any(np.diff(times) <= 0):
                raise ConfigurationError("point times must be strictly increasing")
        for arr in (times, marks, atoms):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "atoms", atoms)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def mark_dim(self) -> int:
        return self.marks.shape[1]

    def same_as(self, other: "Configuration") -> bool:
        return (
            self.window == other.window
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
            and np.array_equal(self.atoms, other.atoms)
        )

    def with_times(self, times: np.ndarray) -> "Configuration":
        """Same points with new times, re-sorted (marks travel with their times)."""
        times = np.asarray(times, dtype=float)
        order = np.argsort(times, kind="stable")
        return Configuration(
            self.window,
            _break_ties(times[order]),
            self.marks[order],
            self.atoms[order],
            self.source,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "window": self.window,
                "source": self.source,
                "times": [float(t) for t in self.times],
                "marks": self.marks.tolist(),
                "atoms": self.atoms.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        d = json.loads(text)
        marks = np.array(d["marks"], dtype=float)
        if marks.size == 0:
            marks = marks.reshape(0, 1)
        return cls(d["window"], d["times"], marks, d["atoms"], d.get("source", ""))

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["t"] + [f"mark_{j}" for j in range(self.mark_dim)]
        buf.write(",".join(cols) + "\n")
        for t, m in zip(self.times, self.marks):
            buf.write(",".join(f"{v:.17g}" for v in (t, *m)) + "\n")
        return buf.getvalue()


def _break_ties(times: np.ndarray) -> np.ndarray:
    """Nudge equal consecutive times apart by one ulp (a probability-zero event)."""
    if len(times) < 2 or np.all(np.diff(times) > 0):
        return times
    times = times.copy()
    for k in range(1, len(times)):
        if times[k] <= times[k - 1]:
            times[k] = np.nextafter(times[k - 1], np.inf)
    warnings.warn("tied point times perturbed by one ulp", RuntimeWarning, stacklevel=3)
    return times


def empty_configuration(window: float, mark_dim: int = 1, source: str = "") -> Configuration:
    return Configuration(window, np.zeros(0), np.zeros((0, mark_dim)), np.zeros(0, dtype=np.int64), source)


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def sample_configuration(
    space: MarkSpace,
    subset: MarkSubset,
    T: float,
    seed: int,
    *,
    path: int = 0,
    role: str = "config",
) -> Configuration:
    """Draw the restriction of the point measure to [0, T) x subset.

    The point count is Poisson(Pi(subset) T), times are i.i.d. uniform and then
    sorted, marks i.i.d. from Pi restricted to ``subset``. Draws come from the
    stream keyed by ``(seed, path, role)``.
    """
    return _sample(space, subset, T, stream(seed, path, role))


def _sample(space: MarkSpace, subset: MarkSubset, T: float, rng: np.random.Generator) -> Configuration:
    if not (isinstance(T, (int, float)) and math.isfinite(T) and T > 0):
        raise DomainError(f"window T must be > 0, got {T!r}")
    lam = subset.mass
    if not math.isfinite(lam) or lam < 0:
        raise ConfigurationError(f"subset mass must be finite, got {lam!r}")
    n = int(rng.poisson(lam * T)) if lam > 0 else 0
    times = np.sort(rng.random(n) * T)
    # rng.random is in [0, 1) but the product can round up to T
    times = np.minimum(times, np.nextafter(T, 0.0))
    marks, atoms = space.sample_restricted(rng, n, subset)
    return Configuration(float(T), _break_ties(times), marks.reshape(n, space.dimension), atoms, space.name)


def count(config: Configuration, t: float, subset: Optional[MarkSubset] = None) -> int:
    """nu([0, t] x subset)."""
    if not 0 <= t <= config.window:
        raise DomainError(f"t={t} outside the window [0, {config.window}]")
    mask = config.times <= t
    if subset is not None:
        mask &= subset.contains(config.marks, config.atoms)
    return int(mask.sum())


def restrict(config: Configuration, subset: MarkSubset) -> Configuration:
    keep = subset.contains(config.marks, config.atoms)
    return Configuration(config.window, config.times[keep], config.marks[keep], config.atoms[keep], config.source)


def jump_times(config: Configuration, subset: Optional[MarkSubset] = None) -> np.ndarray:
    """Ordered jump times tau_1 < tau_2 < ... of the points with marks in ``subset``."""
    if subset is None:
        return config.times.copy()
    return config.times[subset.contains(config.marks, config.atoms)].copy()


def compensator(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    space: MarkSpace,
    subset: MarkSubset,
    T: float,
) -> float:
    """int_0^T int_subset f(t, u) Pi(du) dt by quadrature (exact finite sum over atoms)."""
    if subset.is_empty or subset.mass == 0:
        return 0.0

    def ft(t, m):
        return float(np.asarray(f(np.array([t]), np.asarray(m, dtype=float).reshape(1, -1)))[0])

    if isinstance(space, AtomicSpace):
        allowed = np.flatnonzero(subset.contains(space.atoms, np.arange(len(space.atoms))))
        parts = []
        for k in allowed:
            val, _ = spi.quad(lambda t: ft(t, space.atoms[k]), 0.0, T, limit=200)
            parts.append(space.weights[k] * val)
        return math.fsum(parts)
    if isinstance(space, BandSpace):
        lo, hi = space.support
        if subset.interval is not None:
            lo, hi = max(lo, subset.interval[0]), min(hi, subset.interval[1])

        def g(u, t):
            w = float(space.density(np.array([u]))[0])
            if subset.predicate is not None:
                w *= float(subset.predicate(np.array([[u]]))[0])
            return w * ft(t, [u])

        val, _ = spi.dblquad(g, 0.0, T, lo, hi)
        return val
    if isinstance(space, EnvelopeSpace) and isinstance(space.base, AtomicSpace):
        v_all = space.base.atoms
        beta = space._beta(v_all)
        ok = MarkSubset(mass=0.0, atoms=subset.atoms, interval=subset.interval).contains(
            v_all, np.arange(len(v_all))
        )
        piv = subset.p_interval or (0.0, math.inf)
        parts = []
        for k in np.flatnonzero(ok):
            plo, phi = max(0.0, piv[0]), min(beta[k], piv[1])
            if not plo < phi:
                continue
            val, _ = spi.dblquad(lambda p, t: ft(t, [*v_all[k], p]), 0.0, T, plo, phi)
            parts.append(space.base.weights[k] * val)
        return math.fsum(parts)
    raise ConfigurationError(f"no compensator quadrature for space {space.name!r}")


def integrate(
    config: Configuration,
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    compensate: bool = False,
    space: Optional[MarkSpace] = None,
    subset: Optional[MarkSubset] = None,
    T: Optional[float] = None,
    *,
    compensator_value: Optional[float] = None,
) -> float:
    """Sum of f over the points in ``subset``; with ``compensate`` the integral against nu-tilde.

    ``f`` is vectorized: ``f(times, marks) -> values``. A precomputed
    ``compensator_value`` skips the quadrature (useful inside Monte Carlo loops).
    """
    times, marks = config.times, config.marks
    if subset is not None:
        keep = subset.contains(marks, config.atoms)
        times, marks = times[keep], marks[keep]
    vals = np.asarray(f(times, marks), dtype=float).reshape(-1) if len(times) else np.zeros(0)
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrand is not finite on the configuration")
    total = math.fsum(vals)
    if compensate:
        if compensator_value is None:
            if space is None:
                raise ConfigurationError("compensation needs the mark space")
            compensator_value = compensator(
                f, space, subset if subset is not None else space.full(), config.window if T is None else T
            )
        total -= compensator_value
    return total


# --------------------------------------------------------------------------
# Padded batches for vectorized evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfigBatch:
    """Many configurations on a common window, padded to equal length.

    Padding slots have time ``+inf`` and atom id ``-2`` so that no subset
    contains them.
    """

    window: float
    times: np.ndarray  # (n, K)
    marks: np.ndarray  # (n, K, d)
    atoms: np.ndarray  # (n, K)
    counts: np.ndarray  # (n,)
    source: str = ""

    @classmethod
    def from_configs(cls, configs: list) -> "ConfigBatch":
        if not configs:
            raise ConfigurationError("empty batch")
        window = configs[0].window
        d = configs[0].mark_dim
        K = max(1, max(len(c) for c in configs))
        n = len(configs)
        times = np.full((n, K), np.inf)
        marks = np.zeros((n, K, d))
        atoms = np.full((n, K), -2, dtype=np.int64)
        counts = np.zeros(n, dtype=np.int64)
        for i, c in enumerate(configs):
            if c.window != window or c.mark_dim != d:
                raise ConfigurationError("batch members must share window and mark dimension")
            k = len(c)
            times[i, :k] = c.times
            marks[i, :k] = c.marks
            atoms[i, :k] = c.atoms
            counts[i] = k
        return cls(window, times, marks, atoms, counts, configs[0].source)

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.times)

    def config(self, i: int) -> Configuration:
        k = int(self.counts[i])
        return Configuration(self.window, self.times[i, :k], self.marks[i, :k], self.atoms[i, :k], self.source)

    def configs(self) -> list:
        return [self.config(i) for i in range(len(self))]

    def mask(self, subset: MarkSubset) -> np.ndarray:
        return self.valid & subset.contains(self.marks, self.atoms)

    def with_times(self, times: np.ndarray) -> "ConfigBatch":
        order = np.argsort(times, axis=1, kind="stable")
        t = np.take_along_axis(times, order, axis=1)
        return ConfigBatch(
            self.window,
            t,
            np.take_along_axis(self.marks, order[:, :, None], axis=1),
            np.take_along_axis(self.atoms, order, axis=1),
            self.counts,
            self.source,
        )

    def take(self, rows: np.ndarray) -> "ConfigBatch":
        return ConfigBatch(self.window, self.times[rows], self.marks[rows], self.atoms[rows],
                           self.counts[rows], self.source)

    @classmethod
    def concat(cls, batches: list) -> "ConfigBatch":
        K = max(b.times.shape[1] for b in batches)
        parts = []
        for b in batches:
            pad = K - b.times.shape[1]
            if pad:
                b = ConfigBatch(
                    b.window,
                    np.pad(b.times, ((0, 0), (0, pad)), constant_values=np.inf),
                    np.pad(b.marks, ((0, 0), (0, pad), (0, 0))),
                    np.pad(b.atoms, ((0, 0), (0, pad)), constant_values=-2),
                    b.counts,
                    b.source,
                )
            parts.append(b)
        return cls(
            parts[0].window,
            np.concatenate([b.times for b in parts]),
            np.concatenate([b.marks for b in parts]),
            np.concatenate([b.atoms for b in parts]),
            np.concatenate([b.counts for b in parts]),
            parts[0].source,
        )


def sample_batch(
    space: MarkSpace,
    subset: MarkSubset,
    T: float,
    seed: int,
    paths,
    *,
    role: str = "config",
) -> ConfigBatch:
    """One configuration per path index, each from its own keyed stream."""
    return ConfigBatch.from_configs(
        [_sample(space, subset, T, stream(seed, int(p), role)) for p in paths]
    )
