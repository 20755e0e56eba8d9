"""Monte Carlo checks: admissibility identities, derivative agreement, total
variation between laws, atom diagnostics, transform scans and
characteristic-function probes."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateInputError, DomainError
from .grid_calculus import DifferentialGrid, Functional, jacobian_batch, nondegenerate
from .parallel import map_paths
from .point_measure import ConfigBatch, Configuration, MarkSpace, MarkSubset, sample_batch
from .rng import stream
from .time_stretch import density_batch, flow, transform_batch, transform_configuration

SE_THRESHOLD = 3.0
N_BOOT = 200


def _fsum_mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / len(x)


def mean_se(x) -> tuple[float, float]:
    """Sample mean (compensated summation) and its standard error std/sqrt(N)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if len(x) < 2:
        raise DegenerateInputError("need at least two samples")
    mu = _fsum_mean(x)
    var = math.fsum(((x - mu) ** 2).tolist()) / (len(x) - 1)
    return mu, math.sqrt(var / len(x))


@dataclass(frozen=True)
class McReport:
    """A Monte Carlo estimate with the rule that decides its verdict.

    ``rule`` is ``"within"`` (|estimate - target| <= threshold * std_error + tolerance)
    or ``"at_least"`` (estimate >= target); ``"info"`` reports always pass.
    """

    name: str
    estimate: float
    std_error: float
    target: float
    n_paths: int
    seed: int
    threshold: float = SE_THRESHOLD
    tolerance: float = 0.0
    rule: str = "within"
    confidence: float = 0.9973
    details: dict = field(default_factory=dict)

    @property
    def ci(self) -> tuple[float, float]:
        return (self.estimate - self.threshold * self.std_error, self.estimate + self.threshold * self.std_error)

    @property
    def passed(self) -> bool:
        if self.rule == "info":
            return True
        if self.rule == "at_least":
            return bool(self.estimate >= self.target)
        return bool(abs(self.estimate - self.target) <= self.threshold * self.std_error + self.tolerance)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        out["kind"] = "mc"
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "McReport":
        d = {k: v for k, v in d.items() if k not in ("passed", "kind")}
        return cls(**d)


# --------------------------------------------------------------------------
# Admissibility
# --------------------------------------------------------------------------


def check_admissibility(
    h,
    subset: MarkSubset,
    phi: Functional,
    space: MarkSpace,
    T: float,
    N: int,
    seed: int,
    *,
    bound: float = 1.0,
    paired: bool = True,
    threads: Optional[int] = None,
    name: str = "admissibility",
) -> McReport:
    """E phi(T_h^Gamma nu) against E p_h^Gamma phi(nu).

    ``paired`` evaluates both sides on the same configurations (common random
    numbers) and uses the standard error of the per-path difference;
    otherwise the right side uses an independent stream and the two standard
    errors are pooled.
    """

    def work(lo, hi):
        b = sample_batch(space, space.full(), T, seed, range(lo, hi), role="admissibility")
        lhs = phi.batch(transform_batch(b, h, subset))[:, 0]
        if not paired:
            b = sample_batch(space, space.full(), T, seed, range(lo, hi), role="admissibility-rhs")
        rhs = density_batch(b, h, subset) * phi.batch(b)[:, 0]
        return lhs, rhs, phi.batch(b)[:, 0]

    lhs, rhs, plain = map_paths(work, N, threads)
    if np.any(np.abs(lhs) > bound) or np.any(np.abs(plain) > bound):
        raise DomainError(f"functional exceeds its declared bound {bound}")
    ml, sl = mean_se(lhs)
    mr, sr = mean_se(rhs)
    if paired:
        diff, se = mean_se(lhs - rhs)
    else:
        diff, se = ml - mr, math.hypot(sl, sr)
    return McReport(
        name, diff, se, 0.0, N, seed,
        details={"lhs": ml, "lhs_se": sl, "rhs": mr, "rhs_se": sr, "paired": paired,
                 "unchanged_paths": int(np.count_nonzero(lhs == plain))},
    )


def check_normalization(h, subset: MarkSubset, space: MarkSpace, T: float, N: int, seed: int,
                        threads: Optional[int] = None) -> McReport:
    """E p_h^Gamma = 1 on the same configurations ``check_admissibility`` draws."""

    def work(lo, hi):
        return density_batch(sample_batch(space, space.full(), T, seed, range(lo, hi), role="admissibility"),
                             h, subset)

    mu, se = mean_se(map_paths(work, N, threads))
    return McReport("normalization", mu, se, 1.0, N, seed)


# --------------------------------------------------------------------------
# Total variation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TvReport:
    name: str
    estimate: float
    ci_low: float
    ci_high: float
    baseline: float
    bins: int
    box_low: list
    box_high: list
    kept_a: int
    total_a: int
    kept_b: int
    total_b: int
    n_boot: int
    seed: int
    paired: bool

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = "tv"
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TvReport":
        return cls(**{k: v for k, v in d.items() if k != "kind"})


def _bin_index(x: np.ndarray, keep: np.ndarray, lo: np.ndarray, hi: np.ndarray, bins: int) -> np.ndarray:
    """Flat bin id per sample, -1 for samples that are not kept."""
    width = np.where(hi > lo, hi - lo, 1.0)
    k = np.floor((x - lo) / width * bins).astype(np.int64)
    k = np.clip(k, 0, bins - 1)
    flat = np.ravel_multi_index(tuple(k.T), (bins,) * x.shape[1]) if len(x) else np.zeros(0, np.int64)
    return np.where(keep, flat, -1)


def _tv_from_ids(ia, ib, na, nb, nbins) -> float:
    ca = np.bincount(ia[ia >= 0], minlength=nbins) / na
    cb = np.bincount(ib[ib >= 0], minlength=nbins) / nb
    return 0.5 * math.fsum(np.abs(ca - cb).tolist())


def estimate_tv(
    samples_a,
    samples_b,
    keep_a=None,
    keep_b=None,
    *,
    bins: int = 32,
    n_boot: int = N_BOOT,
    seed: int = 0,
    paired: bool = False,
    name: str = "tv",
) -> TvReport:
    """Histogram TV distance between (sub-probability) laws of two sample sets.

    Each law puts mass 1/N_total on every kept sample, so restricted laws keep
    their total mass. TV = 1/2 sum over bins |p_a - p_b| on a common box with
    ``bins`` cells per axis. ``paired`` means row i of both sets shares its
    randomness; the bootstrap then resamples rows jointly. The same-law
    baseline compares the two halves of ``samples_a`` on the same bins.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    ka = np.ones(len(a), bool) if keep_a is None else np.asarray(keep_a, bool)
    kb = np.ones(len(b), bool) if keep_b is None else np.asarray(keep_b, bool)
    if not ka.any() or not kb.any():
        raise DegenerateInputError("a sample set has no kept samples")
    if paired and len(a) != len(b):
        raise DomainError("paired samples need equal lengths")
    m = a.shape[1]
    if m > 3:
        raise DomainError("histogram TV supports dimension <= 3")
    kept = np.concatenate([a[ka], b[kb]])
    if not np.all(np.isfinite(kept)):
        raise DegenerateInputError("kept samples must be finite")
    lo, hi = kept.min(axis=0), kept.max(axis=0)
    nbins = bins ** m
    ia = _bin_index(a, ka, lo, hi, bins)
    ib = _bin_index(b, kb, lo, hi, bins)
    est = _tv_from_ids(ia, ib, len(a), len(b), nbins)

    rng = stream(seed, 0, "bootstrap:" + name)
    boot = np.empty(n_boot)
    for r in range(n_boot):
        sa = rng.integers(0, len(a), len(a))
        sb = sa if paired else rng.integers(0, len(b), len(b))
        boot[r] = _tv_from_ids(ia[sa], ib[sb], len(a), len(b), nbins)
    ci_low, ci_high = (float(v) for v in np.percentile(boot, [2.5, 97.5]))

    half = len(a) // 2
    baseline = _tv_from_ids(ia[:half], ia[half:2 * half], half, half, nbins) if half else 0.0
    return TvReport(name, est, ci_low, ci_high, baseline, bins, lo.tolist(), hi.tolist(),
                    int(ka.sum()), len(a), int(kb.sum()), len(b), n_boot, seed, paired)


# --------------------------------------------------------------------------
# Transform scans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanResult:
    ls: np.ndarray
    values: np.ndarray  # (L, dim)
    max_increment: float
    lipschitz: float
    jumps: list  # [(l_location, signed size)]
    dominated: Optional[bool]

    def to_dict(self) -> dict:
        return {"ls": self.ls.tolist(), "values": self.values.tolist(), "max_increment": self.max_increment,
                "lipschitz": self.lipschitz, "jumps": [list(j) for j in self.jumps], "dominated": self.dominated}


def _scan_values(f: Functional, config: Configuration, h, subset, ls) -> np.ndarray:
    with warnings.catch_warnings():
        # bisection toward a crossing lands on exact ties by design
        warnings.filterwarnings("ignore", message="tied point times", category=RuntimeWarning)
        configs = [transform_configuration(config, h.scaled(float(l)), subset) if l else config for l in ls]
    return f.batch(ConfigBatch.from_configs(configs))


def transform_scan(
    f: Functional,
    config: Configuration,
    h,
    subset: MarkSubset,
    l_range: tuple = (-1.0, 1.0),
    resolution: int = 401,
    *,
    dominating: Optional[Callable[[float], float]] = None,
    jump_tol: float = 1e-6,
    bisections: int = 50,
) -> ScanResult:
    """The curve l -> f(T_{lh}^Gamma config), with a jump detector.

    A jump is an adjacent pair whose increment survives repeated bisection:
    the bracket is narrowed toward the larger half-increment until its width
    reaches round-off; a remaining increment above ``jump_tol`` is a jump and
    its size is the increment across the final bracket. A continuous curve
    roughly halves the increment at every step, so a bracket is abandoned
    after three consecutive steps that shrink it below 3/4 or once it drops
    under ``jump_tol``.
    """
    ls = np.linspace(l_range[0], l_range[1], resolution)
    vals = _scan_values(f, config, h, subset, ls)
    inc = np.max(np.abs(np.diff(vals, axis=0)), axis=1)
    dl = np.diff(ls)
    lip = float(np.max(inc / dl)) if len(inc) else 0.0
    jumps = []
    for k in np.flatnonzero(inc > jump_tol):
        lo, hi = ls[k], ls[k + 1]
        vlo, vhi = vals[k], vals[k + 1]
        width_inc = inc[k]
        shrinking = 0
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            vm = _scan_values(f, config, h, subset, [mid])[0]
            left, right = np.max(np.abs(vm - vlo)), np.max(np.abs(vhi - vm))
            if left >= right:
                hi, vhi = mid, vm
            else:
                lo, vlo = mid, vm
            new_inc = max(left, right)
            shrinking = shrinking + 1 if new_inc < 0.75 * width_inc else 0
            width_inc = new_inc
            if shrinking >= 3 or new_inc <= jump_tol:
                break
        size = vhi - vlo
        if shrinking < 3 and np.max(np.abs(size)) > jump_tol:
            jumps.append((float(0.5 * (lo + hi)), float(size[0]) if len(size) == 1 else size.tolist()))
    dominated = None
    if dominating is not None:
        i0 = int(np.argmin(np.abs(ls)))
        dev = np.max(np.abs(vals - vals[i0]), axis=1)
        dominated = bool(np.all(dev <= np.array([dominating(abs(l - ls[i0])) for l in ls]) + 1e-12))
    return ScanResult(ls, vals, float(inc.max()) if len(inc) else 0.0, lip, jumps, dominated)


# --------------------------------------------------------------------------
# Atom diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomReport:
    verdict: str  # "pass" | "fail" | "inconclusive"
    n_kept: int
    duplicate_fraction: float
    bin_mass_coarse: float
    bin_mass_fine: float
    cdf_jump: Optional[float]
    cdf_jump_se: Optional[float]
    bins: tuple

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kind"] = "atom"
        out["bins"] = list(self.bins)
        return out


def _max_bin_mass(x: np.ndarray, bins: int) -> float:
    lo, hi = x.min(axis=0), x.max(axis=0)
    ids = _bin_index(x, np.ones(len(x), bool), lo, hi, bins)
    return float(np.bincount(ids).max() / len(x))


def atom_probe(samples, keep=None, *, bins: int = 32, refine: int = 4, min_samples: int = 1000) -> AtomReport:
    """Empirical signs of atoms in the (restricted) law of ``samples``.

    Passes when there are no exact duplicates beyond sampling noise, the
    heaviest bin shrinks under refinement, and (m = 1) the largest jump of the
    empirical CDF is of order 1/sqrt(N).
    """
    x = np.asarray(samples, dtype=float)
    x = x.reshape(len(x), -1)
    if keep is not None:
        x = x[np.asarray(keep, bool)]
    n = len(x)
    if n < min_samples:
        return AtomReport("inconclusive", n, math.nan, math.nan, math.nan, None, None, (bins, bins * refine))
    _, counts = np.unique(x, axis=0, return_counts=True)
    dup = 1.0 - len(counts) / n
    coarse = _max_bin_mass(x, bins)
    fine = _max_bin_mass(x, bins * refine)
    cdf_jump = cdf_se = None
    if x.shape[1] == 1:
        cdf_jump = float(counts.max() / n)
        cdf_se = math.sqrt(max(cdf_jump * (1 - cdf_jump), 1.0 / n) / n)
    noise = SE_THRESHOLD / math.sqrt(n)
    ok = dup <= noise
    ok &= fine <= 0.5 * coarse + SE_THRESHOLD * math.sqrt(fine * (1 - fine) / n)
    if cdf_jump is not None:
        ok &= cdf_jump <= noise
    return AtomReport("pass" if ok else "fail", n, dup, coarse, fine, cdf_jump, cdf_se, (bins, bins * refine))


# --------------------------------------------------------------------------
# Characteristic functions
# --------------------------------------------------------------------------


def parabola_cf(theta: float, t: float = 1.0, K: int = 20) -> complex:
    """E exp(i theta Z_1(t)) for Z_1 = sum_k N_k / k!, N_k ~ Poisson(t), k <= K."""
    s = sum(complex(math.cos(theta / math.factorial(k)) - 1.0, math.sin(theta / math.factorial(k)))
            for k in range(1, K + 1))
    return complex(np.exp(t * s))


def parabola_cf_factorial(N: int, t: float = 1.0, K: int = 20) -> complex:
    """The same at theta = 2 pi N!, with the phases reduced exactly mod 2 pi."""
    s = 0j
    for k in range(1, K + 1):
        frac = Fraction(math.factorial(N), math.factorial(k)) % 1
        ang = 2 * math.pi * float(frac)
        s += complex(math.cos(ang) - 1.0, math.sin(ang))
    return complex(np.exp(t * s))


@dataclass(frozen=True)
class CfEstimate:
    theta: float
    value: complex
    std_error: float  # of the complex mean, sqrt((var cos + var sin) / N)
    n: int

    @property
    def modulus(self) -> float:
        return abs(self.value)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "re": self.value.real, "im": self.value.imag,
                "std_error": self.std_error, "n": self.n}


def cf_probe(samples, theta: float) -> CfEstimate:
    """Empirical characteristic function of real samples at ``theta``."""
    if not math.isfinite(theta):
        raise DomainError("theta must be finite")
    z = np.asarray(samples, dtype=float).reshape(-1)
    if theta == 0:
        return CfEstimate(0.0, 1 + 0j, 0.0, len(z))
    ph = theta * z
    c, s = np.cos(ph), np.sin(ph)
    mc, sc = mean_se(c)
    ms, ss = mean_se(s)
    return CfEstimate(float(theta), complex(mc, ms), math.hypot(sc, ss), len(z))


# --------------------------------------------------------------------------
# Derivative agreement
# --------------------------------------------------------------------------


def derivative_agreement(f: Functional, batch: ConfigBatch, grid: DifferentialGrid, i: Optional[int] = None,
                         abs_tol: float = 1e-4):
    """Per-path (agree, stable, analytic, fd, fd_error) for cell ``i`` (all cells if None)."""
    cells = range(grid.dimension) if i is None else [i]
    ana, _, _ = jacobian_batch(f, batch, grid, "analytic")
    from .grid_calculus import fd_derivative_batch

    agree = np.ones(len(batch), bool)
    stable = np.ones(len(batch), bool)
    fds, errs = [], []
    for c in cells:
        r = fd_derivative_batch(f, batch, grid, c)
        gap = np.max(np.abs(ana[:, :, c] - r.value), axis=1)
        agree &= gap <= np.maximum(abs_tol, 2 * np.max(r.error, axis=1))
        stable &= r.stable
        fds.append(r.value)
        errs.append(r.error)
    return agree, stable, ana[:, :, list(cells)], np.stack(fds, axis=2), np.stack(errs, axis=2)


def check_derivative(
    f: Functional,
    sampler: Callable[[int, int], ConfigBatch],
    grid: DifferentialGrid,
    i: Optional[int],
    N: int,
    seed: int,
    *,
    required: float = 0.95,
    threads: Optional[int] = None,
    name: str = "derivative",
) -> McReport:
    """Fraction of stable paths where analytic and FD derivatives agree.

    Paths flagged unstable by the FD schedule are excluded and counted.
    """

    def work(lo, hi):
        agree, stable, *_ = derivative_agreement(f, sampler(lo, hi), grid, i)
        return agree, stable

    agree, stable = map_paths(work, N, threads)
    n_stable = int(stable.sum())
    frac = float(np.count_nonzero(agree & stable) / n_stable) if n_stable else 1.0
    se = math.sqrt(frac * (1 - frac) / max(n_stable, 1))
    return McReport(
        name, frac, se, required, N, seed, rule="at_least",
        details={"flagged": N - n_stable, "flagged_fraction": (N - n_stable) / N,
                 "agree_all_paths": int(np.count_nonzero(agree))},
    )


# --------------------------------------------------------------------------
# Convergence in variation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TvSuite:
    schedule: list
    reports: list
    baseline: float
    decreasing: bool
    final_ok: bool

    @property
    def passed(self) -> bool:
        return self.decreasing and self.final_ok

    def to_dict(self) -> dict:
        return {"kind": "tv_suite", "schedule": self.schedule, "reports": [r.to_dict() for r in self.reports],
                "baseline": self.baseline, "decreasing": self.decreasing, "final_ok": self.final_ok,
                "passed": self.passed}


def endpoint_samples(model, x, t, batch: ConfigBatch, grid: Optional[DifferentialGrid], rel_tol: float = 1e-8):
    """Endpoints X(x, t) and, if a grid is given, membership in N(f, G) (full-rank Sigma)."""
    from .jump_sde.solver import grid_derivative_batch, solve

    if grid is None:
        return solve(model, x, t, batch).final, np.ones(len(batch), bool)
    sigma, res = grid_derivative_batch(model, x, t, batch, grid)
    if sigma.shape[1] != sigma.shape[2]:
        raise DomainError("restriction to N(f, G) needs as many cells as state dimensions")
    return res.final, np.atleast_1d(nondegenerate(sigma, rel_tol))


def tv_convergence_suite(
    family: Callable[[object], tuple],
    limit: tuple,
    sampler: Callable[[int, int], ConfigBatch],
    grid: Optional[DifferentialGrid],
    schedule: Sequence,
    N: int,
    seed: int,
    *,
    bins: int = 32,
    n_boot: int = N_BOOT,
    restrict: bool = True,
    threads: Optional[int] = None,
) -> TvSuite:
    """TV between restricted laws of f^n = X^n(x^n, t^n) and f = X(x, t) for n in ``schedule``.

    ``family(n)`` and ``limit`` are (model, x, t) triples. All laws are driven
    by the same configurations (common random numbers), so rows are paired.
    """
    g = grid if restrict else None
    triples = [limit] + [family(n) for n in schedule]

    def work(lo, hi):
        batch = sampler(lo, hi)
        out = []
        for model, x, t in triples:
            fx, keep = endpoint_samples(model, x, t, batch, g)
            out += [fx, keep]
        return tuple(out)

    arrays = map_paths(work, N, threads)
    f0, k0 = arrays[0], arrays[1]
    reports = []
    for j, n in enumerate(schedule):
        fn, kn = arrays[2 + 2 * j], arrays[3 + 2 * j]
        reports.append(estimate_tv(f0, fn, k0, kn, bins=bins, n_boot=n_boot, seed=seed, paired=True,
                                   name=f"tv[n={n}]"))
    decreasing = all(
        later.estimate < earlier.estimate and later.ci_high < earlier.ci_low
        for earlier, later in zip(reports, reports[1:])
    )
    baseline = reports[-1].baseline if reports else 0.0
    final_ok = bool(reports) and reports[-1].estimate <= 2 * baseline
    return TvSuite(list(schedule), reports, baseline, decreasing, final_ok)
