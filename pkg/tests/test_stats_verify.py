from __future__ import annotations

import math

import numpy as np
import pytest

from jumpcalc.errors import DegenerateInputError, DomainError
from jumpcalc.grid_calculus import DifferentialGrid, cell_count, constant
from jumpcalc.jump_sde import AdditiveModel, ThinnedModel, endpoint_functional
from jumpcalc.jump_sde.catalog import arctan_switch
from jumpcalc.point_measure import AtomicSpace, ConfigBatch, Configuration, sample_batch
from jumpcalc.stats_verify import (
    McReport,
    atom_probe,
    cf_probe,
    check_admissibility,
    check_derivative,
    check_normalization,
    estimate_tv,
    mean_se,
    parabola_cf,
    parabola_cf_factorial,
    transform_scan,
)
from jumpcalc.experiments import _phi
from jumpcalc.config import FunctionalSpec
from jumpcalc.time_stretch import GridDirection, flow

# |E exp(2 pi i N! Z_1(1))| for atoms 1/k!, k <= 20, N = 3..8 (exact phases, frozen)
CF_ORACLE = {
    3: 0.34981796267277722,
    4: 0.49002931968276282,
    5: 0.59968773962514377,
    6: 0.68189712248099448,
    7: 0.74323952215207149,
    8: 0.78945551927980715,
}


@pytest.fixture
def space():
    return AtomicSpace([[0.0], [1.0]], [2.0, 1.0])


@pytest.fixture
def h():
    return GridDirection(0.5, 3.0, [0.0, 0.5, 1.5, 3.0], [0.0, 1.5, -1.0])


# -- reports ------------------------------------------------------------------


def test_mean_se():
    mu, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert mu == 2.5
    assert se == pytest.approx(math.sqrt(5 / 3 / 4))
    with pytest.raises(DegenerateInputError):
        mean_se([1.0])


def test_report_verdicts_and_round_trip():
    r = McReport("x", 1.02, 0.01, 1.0, 100, 7)
    assert r.passed and r.ci == pytest.approx((0.99, 1.05))
    assert not McReport("x", 1.04, 0.01, 1.0, 100, 7).passed
    assert McReport("f", 0.96, 0.0, 0.95, 10, 1, rule="at_least").passed
    assert not McReport("f", 0.94, 0.0, 0.95, 10, 1, rule="at_least").passed
    assert McReport("i", 5.0, 0.0, 0.0, 10, 1, rule="info").passed
    back = McReport.from_dict(r.to_dict())
    assert back == r and back.passed == r.passed


# -- admissibility ------------------------------------------------------------


def test_unaffected_functional_is_identical_path_by_path(space, h):
    sub = space.subset(atoms=[0])
    phi = _phi(FunctionalSpec(name="outside_count_le", value=2), sub, None)
    # the density still weighs the right side, so compare lhs with phi itself
    rep = check_admissibility(h, sub, phi, space, 4.0, 2000, seed=3, threads=1)
    assert rep.details["unchanged_paths"] == 2000


def test_first_jump_closed_form(space, h):
    sub = space.subset(atoms=[0])
    phi = _phi(FunctionalSpec(name="first_jump_le", t0=1.0), sub, None)
    N = 40_000
    rep = check_admissibility(h, sub, phi, space, 4.0, N, seed=5, threads=1)
    assert rep.passed
    exact = 1 - math.exp(-sub.mass * flow(h, 1.0, 1.0))
    assert abs(rep.details["lhs"] - exact) <= 3 * rep.details["lhs_se"]


def test_unpaired_admissibility_pools_errors(space, h):
    sub = space.subset(atoms=[0])
    phi = _phi(FunctionalSpec(name="first_jump_le", t0=1.0), sub, None)
    rep = check_admissibility(h, sub, phi, space, 4.0, 20_000, seed=5, paired=False, threads=1)
    assert rep.std_error == pytest.approx(math.hypot(rep.details["lhs_se"], rep.details["rhs_se"]))
    assert rep.passed


def test_constant_functional_reduces_to_normalization(space, h):
    sub = space.subset(atoms=[0])
    adm = check_admissibility(h, sub, constant(1.0), space, 4.0, 5000, seed=9, threads=1)
    norm = check_normalization(h, sub, space, 4.0, 5000, seed=9, threads=1)
    assert adm.estimate == pytest.approx(1.0 - norm.estimate, abs=1e-12)
    assert adm.passed == norm.passed


def test_unbounded_functional_rejected(space, h):
    sub = space.subset(atoms=[0])
    with pytest.raises(DomainError):
        check_admissibility(h, sub, constant(5.0), space, 4.0, 100, seed=1, threads=1)


# -- total variation ----------------------------------------------------------


def test_tv_identical_is_zero():
    x = np.random.default_rng(0).normal(size=5000)
    assert estimate_tv(x, x, n_boot=20).estimate == 0.0


def test_tv_disjoint_supports():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(0, 1, 4000), rng.uniform(2, 3, 4000)
    assert estimate_tv(a, b, n_boot=20).estimate == pytest.approx(1.0)
    # restricted laws with masses 1 and 1/2 on disjoint supports: TV is the average mass
    keep = np.arange(4000) % 2 == 0
    assert estimate_tv(a, b, None, keep, n_boot=20).estimate == pytest.approx(0.75)


def test_tv_is_symmetric_and_permutation_invariant():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(3000, 2)), rng.normal(0.3, 1.0, size=(3000, 2))
    ab = estimate_tv(a, b, n_boot=20).estimate
    ba = estimate_tv(b, a, n_boot=20).estimate
    perm = rng.permutation(3000)
    pp = estimate_tv(a[perm], b[perm], n_boot=20).estimate
    assert ab == pytest.approx(ba, abs=1e-15)
    assert ab == pytest.approx(pp, abs=1e-15)


def test_tv_same_law_baseline_is_small():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=100_000), rng.normal(size=100_000)
    rep = estimate_tv(a, b, n_boot=50, seed=1)
    assert rep.estimate <= 0.05
    assert rep.baseline <= 0.05
    # resampling duplicates rows, which inflates a histogram TV: the CI sits at or above the estimate
    assert rep.ci_low <= rep.ci_high and rep.ci_high >= rep.estimate


def test_tv_rejects_empty_kept_sets():
    x = np.zeros(10)
    with pytest.raises(DegenerateInputError):
        estimate_tv(x, x, np.zeros(10, bool), None)


# -- atoms --------------------------------------------------------------------


def test_atom_probe_continuous_law_passes():
    x = np.random.default_rng(4).normal(size=20_000)
    rep = atom_probe(x)
    assert rep.verdict == "pass" and rep.duplicate_fraction == 0.0


def test_atom_probe_detects_injected_atom():
    rng = np.random.default_rng(5)
    n = 20_000
    x = rng.normal(size=n)
    atom = rng.uniform(size=n) < 0.3
    x[atom] = 0.25
    rep = atom_probe(x)
    assert rep.verdict == "fail"
    assert abs(rep.cdf_jump - 0.3) <= 3 * rep.cdf_jump_se


def test_atom_probe_constant_and_small_samples():
    rep = atom_probe(np.full(5000, 2.0))
    assert rep.cdf_jump == 1.0 and rep.verdict == "fail"
    assert atom_probe(np.arange(10.0)).verdict == "inconclusive"


# -- characteristic functions -------------------------------------------------


def test_cf_at_zero_is_one():
    assert cf_probe(np.random.default_rng(0).normal(size=10), 0.0).value == 1.0
    with pytest.raises(DomainError):
        cf_probe([0.0, 1.0], math.inf)


def test_cf_oracle_values_and_monotonicity():
    mods = [abs(parabola_cf_factorial(N)) for N in range(3, 9)]
    for N, m in zip(range(3, 9), mods):
        assert m == pytest.approx(CF_ORACLE[N], rel=1e-12)
    assert all(b > a for a, b in zip(mods, mods[1:]))
    # with a longer truncation the modulus eventually exceeds 0.99
    assert abs(parabola_cf_factorial(50, K=60)) == pytest.approx(0.99244637516557934, rel=1e-12)


def test_cf_oracle_exact_phases_match_direct_evaluation():
    theta = 2 * math.pi * math.factorial(4)
    assert abs(parabola_cf(theta) - parabola_cf_factorial(4)) < 1e-10


# -- scans --------------------------------------------------------------------


def test_scan_of_count_is_constant(space):
    sub = space.subset(atoms=[0])
    cfg = sample_batch(space, space.full(), 4.0, 1, [0]).config(0)
    res = transform_scan(cell_count(sub, 2.0), cfg, GridDirection.bump(0.0, 1.0), sub, (-3, 3), 61,
                         dominating=lambda d: 0.0)
    assert res.max_increment == 0.0 and res.jumps == [] and res.dominated


def test_scan_detects_switch_jump():
    model = arctan_switch()
    cfg = Configuration(1.0, np.array([0.3, 0.6]), np.array([[1.0, 0.5], [2.0, 0.5]]), np.array([0, 1]))
    f = endpoint_functional(model, [0.0], 1.0)
    assert f(cfg)[0] == pytest.approx(1 + math.pi / 4)
    sub = model.space.subset(atoms=[0], p_interval=(0.0, 1.0))
    res = transform_scan(f, cfg, GridDirection.bump(0.0, 1.0), sub, (-30, 30), 601)
    assert len(res.jumps) == 1
    assert abs(abs(res.jumps[0][1]) - math.pi / 4) <= 1e-6
    assert set(np.round(res.values[:, 0], 12)) == {1.0, round(1 + math.pi / 4, 12)}


def test_scan_increments_respect_gronwall_bound():
    space = AtomicSpace([[1.0]], [2.0])
    model = AdditiveModel("tanh", 1, lambda x: -np.tanh(x), lambda x: (-1 / np.cosh(x) ** 2)[:, :, None],
                          lambda m, a: np.ones((len(a), 1)), space)
    t = 2.0
    h = GridDirection.bump(0.0, 2.0)
    f = endpoint_functional(model, [0.0], t)
    batch = sample_batch(space, space.full(), t, 2, range(8))
    for cfg in batch.configs():
        res = transform_scan(f, cfg, h, space.full(), (-0.5, 0.5), 51)
        assert res.jumps == []
        k = len(cfg)
        # a jump time shifted by d changes X(t) by at most 2 sup|a| e^{Lt} d, d <= |l| sup|Jh|
        assert res.lipschitz <= k * 2.0 * math.exp(t) * h.sup_abs_J + 1e-9


# -- derivative checks --------------------------------------------------------


def test_check_derivative_pure_ode():
    base = AtomicSpace([[1.0]], [1.0])
    model = ThinnedModel(
        "silent", 1, lambda x: -x, lambda x: -np.ones((len(x), 1, 1)),
        rate=lambda x, v, a: np.zeros(len(a)), envelope=lambda v: np.ones(len(v)),
        jump=lambda x, v, a: np.ones((len(a), 1)), jump_jac=lambda x, v, a: np.zeros((len(a), 1, 1)), base=base,
    )
    grid = DifferentialGrid.uniform(model.space.full(), [(0.0, 1.0)])
    f = endpoint_functional(model, [1.0], 1.0)

    def sampler(lo, hi):
        return sample_batch(model.space, model.space.full(), 1.0, 4, range(lo, hi), role="candidates")

    rep = check_derivative(f, sampler, grid, 0, 200, seed=4, threads=1)
    assert rep.estimate == 1.0 and rep.details["flagged"] == 0
