from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jumpcalc.errors import ConfigurationError, DomainError, NumericError
from jumpcalc.point_measure import (
    AtomicSpace,
    BandSpace,
    ConfigBatch,
    Configuration,
    EnvelopeSpace,
    MarkSubset,
    compensator,
    count,
    empty_configuration,
    integrate,
    jump_times,
    restrict,
    sample_batch,
    sample_configuration,
)


@pytest.fixture
def two_atoms():
    return AtomicSpace([[0.0], [1.0]], [2.0, 0.5])


def _cfg(times, atoms, window=3.0, marks=None):
    times = np.asarray(times, dtype=float)
    atoms = np.asarray(atoms, dtype=np.int64)
    if marks is None:
        marks = atoms.astype(float).reshape(-1, 1)
    return Configuration(window, times, np.asarray(marks, dtype=float).reshape(len(times), -1), atoms)


# -- spaces and subsets -----------------------------------------------------


def test_atomic_space_validates_weights():
    with pytest.raises(ConfigurationError):
        AtomicSpace([[0.0], [1.0]], [1.0, 0.0])
    with pytest.raises(ConfigurationError):
        AtomicSpace([[0.0], [0.0]], [1.0, 1.0])


def test_subset_masses(two_atoms):
    assert two_atoms.full().mass == pytest.approx(2.5)
    assert two_atoms.subset(atoms=[1]).mass == pytest.approx(0.5)
    assert two_atoms.subset(atoms=[]).mass == 0.0


def test_band_mass_checked_by_quadrature():
    dens = lambda u: np.full(np.shape(u), 2.0)  # noqa: E731
    BandSpace((0.0, 1.5), dens, 3.0)
    with pytest.raises(ConfigurationError):
        BandSpace((0.0, 1.5), dens, 3.1)


def test_band_subset_mass():
    space = BandSpace((0.0, 2.0), lambda u: np.asarray(u, dtype=float), 2.0)
    assert space.subset(interval=(0.0, 1.0)).mass == pytest.approx(0.5, rel=1e-9)


def test_envelope_mass_is_integral_of_beta():
    base = AtomicSpace([[1.0], [2.0]], [1.5, 1.0])
    env = EnvelopeSpace(base, lambda v: np.where(v[:, 0] < 1.5, 1.0, 0.8))
    assert env.total_mass == pytest.approx(1.5 * 1.0 + 1.0 * 0.8)
    assert env.subset(p_interval=(0.0, 0.5)).mass == pytest.approx(1.5 * 0.5 + 1.0 * 0.5)


def test_subset_disjointness_is_decided_structurally(two_atoms):
    a = two_atoms.subset(atoms=[0])
    b = two_atoms.subset(atoms=[1])
    assert a.disjoint_from(b) is True
    assert a.disjoint_from(a) is False
    p = two_atoms.subset(predicate=lambda m: m[:, 0] > 0.5)
    assert a.disjoint_from(p) is None


# -- sampling -----------------------------------------------------------------


def test_zero_rate_gives_empty_configuration(two_atoms):
    cfg = sample_configuration(two_atoms, MarkSubset.empty(), 5.0, seed=1)
    assert len(cfg) == 0


def test_nonpositive_window_rejected(two_atoms):
    with pytest.raises(DomainError):
        sample_configuration(two_atoms, two_atoms.full(), 0.0, seed=1)


def test_sampling_is_deterministic(two_atoms):
    a = sample_configuration(two_atoms, two_atoms.full(), 4.0, seed=9, path=3)
    b = sample_configuration(two_atoms, two_atoms.full(), 4.0, seed=9, path=3)
    c = sample_configuration(two_atoms, two_atoms.full(), 4.0, seed=9, path=4)
    assert a.same_as(b)
    assert not a.same_as(c)


def test_batch_rows_match_single_draws(two_atoms):
    batch = sample_batch(two_atoms, two_atoms.full(), 4.0, 5, range(10, 20))
    for i in range(10):
        assert batch.config(i).same_as(sample_configuration(two_atoms, two_atoms.full(), 4.0, 5, path=10 + i))


def test_vanishing_window_has_no_points(two_atoms):
    space = AtomicSpace([[0.0]], [1.0])
    counts = [len(sample_configuration(space, space.full(), 1e-12, seed=3, path=p)) for p in range(1000)]
    assert sum(counts) == 0


def test_count_mean_and_variance_match_poisson():
    space = AtomicSpace([[0.0]], [2.0])
    batch = sample_batch(space, space.full(), 3.0, 11, range(100_000))
    n = batch.counts.astype(float)
    lam = 6.0
    se_mean = math.sqrt(lam / len(n))
    # variance of the sample variance of a Poisson(lam) law: (mu4 - sigma^4) / N
    se_var = math.sqrt((lam + 3 * lam**2 - lam**2) / len(n))
    assert abs(n.mean() - lam) <= 4 * se_mean
    assert abs(n.var(ddof=1) - lam) <= 4 * se_var


def test_marks_follow_restricted_measure(two_atoms):
    batch = sample_batch(two_atoms, two_atoms.full(), 5.0, 2, range(20_000))
    atoms = batch.atoms[batch.valid]
    p1 = np.mean(atoms == 1)
    se = math.sqrt(0.2 * 0.8 / len(atoms))
    assert abs(p1 - 0.2) <= 4 * se


def test_first_jump_time_is_exponential():
    space = AtomicSpace([[0.0]], [2.0])
    batch = sample_batch(space, space.full(), 30.0, 4, range(100_000))
    tau = batch.times[:, 0]
    assert np.all(np.isfinite(tau))  # P(no point in [0, 30)) = e^-60
    se = tau.std(ddof=1) / math.sqrt(len(tau))
    assert abs(tau.mean() - 0.5) <= 3 * se


def test_band_sampling_mean():
    space = BandSpace((0.0, 2.0), lambda u: np.asarray(u, dtype=float), 2.0)
    batch = sample_batch(space, space.full(), 5.0, 8, range(5000))
    u = batch.marks[batch.valid][:, 0]
    # density u/2 on (0, 2): mean 4/3, variance 2/9
    assert abs(u.mean() - 4 / 3) <= 4 * math.sqrt(2 / 9 / len(u))


# -- configurations -----------------------------------------------------------


def test_configuration_requires_strict_order():
    with pytest.raises(ConfigurationError):
        _cfg([1.0, 1.0], [0, 0])
    with pytest.raises(ConfigurationError):
        _cfg([2.0, 1.0], [0, 0])
    with pytest.raises(ConfigurationError):
        _cfg([3.0], [0])


def test_ties_are_broken_with_warning():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        two = _cfg([0.5, 1.0], [0, 1]).with_times(np.array([1.0, 1.0]))
    assert two.times[0] == 1.0
    assert two.times[1] == np.nextafter(1.0, 2.0)
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)


def test_count_examples():
    assert count(empty_configuration(3.0), 1.0) == 0
    cfg = _cfg([1.0, 2.0], [0, 0])
    space = AtomicSpace([[0.0], [1.0]], [1.0, 1.0])
    assert count(cfg, 1.5, space.subset(atoms=[0])) == 1
    assert count(cfg, cfg.window, space.full()) == 2
    with pytest.raises(DomainError):
        count(cfg, 3.5)


def test_restrict_and_jump_times(two_atoms):
    cfg = _cfg([0.7, 1.2, 2.0], [0, 1, 0])
    full, none = two_atoms.full(), MarkSubset.empty()
    assert restrict(cfg, full).same_as(cfg)
    assert len(restrict(cfg, none)) == 0
    only1 = restrict(cfg, two_atoms.subset(atoms=[1]))
    assert only1.times.tolist() == [1.2]
    assert jump_times(cfg, two_atoms.subset(atoms=[0])).tolist() == [0.7, 2.0]
    assert jump_times(empty_configuration(3.0), full).size == 0
    assert jump_times(_cfg([0.7], [0]), full).tolist() == [0.7]


def test_restrict_composes_as_intersection(two_atoms):
    batch = sample_batch(two_atoms, two_atoms.full(), 4.0, 3, range(30))
    A = two_atoms.subset(atoms=[0, 1])
    B = two_atoms.subset(interval=(0.5, 2.0))
    AB = A.intersect(B, two_atoms)
    for cfg in batch.configs():
        assert restrict(restrict(cfg, A), B).same_as(restrict(cfg, AB))


def test_integrate_examples():
    space = AtomicSpace([[0.0]], [1.0])
    cfg = Configuration(1.0, np.array([0.5]), np.array([[0.0]]), np.array([0]))
    assert integrate(cfg, lambda t, m: t) == 0.5
    assert integrate(cfg, lambda t, m: np.ones_like(t)) == 1.0
    assert integrate(cfg, lambda t, m: np.ones_like(t), compensate=True, space=space) == pytest.approx(0.0)
    with pytest.raises(NumericError):
        integrate(cfg, lambda t, m: np.full_like(t, np.nan))


def test_compensator_quadrature(two_atoms):
    val = compensator(lambda t, m: t * (1 + m[:, 0]), two_atoms, two_atoms.full(), 2.0)
    # int_0^2 t dt * (2 * 1 + 0.5 * 2)
    assert val == pytest.approx(2.0 * 3.0)


def test_compensated_integral_is_centered_with_poisson_variance():
    space = AtomicSpace([[0.0], [1.0]], [1.0, 0.5])
    T = 2.0
    batch = sample_batch(space, space.full(), T, 21, range(100_000))
    f = lambda t, m: np.cos(t) + m[..., 0]  # noqa: E731
    comp = compensator(f, space, space.full(), T)
    t = np.where(batch.valid, batch.times, 0.0)
    vals = np.where(batch.valid, f(t, batch.marks), 0.0).sum(axis=1) - comp
    # T int f^2 dPi computed exactly
    second = 1.0 * (T / 2 + math.sin(2 * T) / 4) + 0.5 * (
        (T / 2 + math.sin(2 * T) / 4) + 2 * math.sin(T) + T
    )
    n = len(vals)
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(n)
    fourth = np.mean((vals - vals.mean()) ** 4)
    se_var = math.sqrt((fourth - vals.var() ** 2) / n)
    assert abs(vals.var(ddof=1) - second) <= 4 * se_var


# -- serialization and batches -----------------------------------------------


def test_json_round_trip(two_atoms):
    cfg = sample_configuration(two_atoms, two_atoms.full(), 4.0, seed=2)
    back = Configuration.from_json(cfg.to_json())
    assert back.same_as(cfg)
    assert json.loads(cfg.to_json())["window"] == 4.0


def test_csv_has_header_and_rows(two_atoms):
    cfg = sample_configuration(two_atoms, two_atoms.full(), 4.0, seed=2)
    lines = cfg.to_csv().strip().splitlines()
    assert lines[0] == "t,mark_0"
    assert len(lines) == len(cfg) + 1
    assert float(lines[1].split(",")[0]) == cfg.times[0]


def test_batch_round_trip(two_atoms):
    configs = [sample_configuration(two_atoms, two_atoms.full(), 4.0, 1, path=p) for p in range(7)]
    batch = ConfigBatch.from_configs(configs)
    for a, b in zip(configs, batch.configs()):
        assert a.same_as(b)
    both = ConfigBatch.concat([batch.take(np.arange(3)), batch.take(np.arange(3, 7))])
    assert all(a.same_as(b) for a, b in zip(configs, both.configs()))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 10.0))
def test_samples_are_valid_configurations(seed, T):
    space = AtomicSpace([[0.0], [1.0]], [1.0, 0.5])
    cfg = sample_configuration(space, space.full(), T, seed)
    assert np.all(np.diff(cfg.times) > 0)
    assert np.all((cfg.times >= 0) & (cfg.times < T))
    assert np.all(space.in_support(cfg.marks)) if len(cfg) else True
