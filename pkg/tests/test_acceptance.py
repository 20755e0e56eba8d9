"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION k: PASS/FAIL ...`` line (visible with
``pytest -s`` or in the captured output of a failure) and then asserts.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from jumpcalc.cli import main
from jumpcalc.config import parse_config
from jumpcalc.experiments import build_grid, build_model, config_sampler, run_experiment
from jumpcalc.grid_calculus import Cell, DifferentialGrid, first_jump_time, grid_transform_batch
from jumpcalc.grid_calculus import jacobian_batch, mixed_second_fd_batch
from jumpcalc.jump_sde import AdditiveModel, endpoint_functional, sample_candidates
from jumpcalc.jump_sde.catalog import linear, thinned_smooth
from jumpcalc.jump_sde.solver import grid_derivative_batch
from jumpcalc.point_measure import AtomicSpace, sample_batch
from jumpcalc.stats_verify import atom_probe, check_derivative, derivative_agreement, endpoint_samples, mean_se
from jumpcalc.time_stretch import GridDirection, StretchFunction, density_batch, flow, log_jacobian, rho_batch

EXPERIMENTS = Path(__file__).resolve().parent.parent / "experiments"


def _verdict(k: int, ok: bool, detail: str) -> None:
    print(f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


def _random_stretch(rng) -> StretchFunction:
    k = int(rng.integers(1, 5))
    widths = rng.uniform(0.1, 1.5, k)
    return StretchFunction(np.concatenate([[0.0], np.cumsum(widths)]), rng.uniform(-2.0, 2.0, k))


def _close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


# -- 1: flow algebra ----------------------------------------------------------


def test_criterion_1_flow_algebra():
    rng = np.random.default_rng(101)
    n, bad, skipped = 1000, 0, 0
    eps = (1e-3, 1e-4, 1e-5)
    for _ in range(n):
        h = _random_stretch(rng)
        x = rng.uniform(0.0, 6.0)
        s, t, a = rng.uniform(-1.5, 1.5, 3)
        bad += not _close(flow(h, s, flow(h, t, x)), flow(h, s + t, x), 1e-8)
        bad += not _close(flow(h, a, x), flow(h.scaled(a), 1.0, x), 1e-8)
        bad += not _close(flow(h, -1.0, flow(h, 1.0, x)), x, 1e-8)
        # the O(eps^2) error model of the central difference needs the stencil
        # inside one linear piece of Jh; at a kink the slope is one-sided
        if np.min(np.abs(h.breakpoints - x)) <= 2 * eps[0] * max(h.sup_abs_J, 1.0):
            skipped += 1
            continue
        d = [(flow(h, e, x) - flow(h, -e, x)) / (2 * e) for e in eps]
        r1 = d[1] + (d[1] - d[0]) / 99.0
        r2 = d[2] + (d[2] - d[1]) / 99.0
        rich = r2 + (r2 - r1) / 9999.0
        bad += not abs(rich - float(h.J(x))) <= 1e-6
    _verdict(1, bad == 0, f"{bad} violations over {n} cases (generator check skipped at {skipped} kink points)")


# -- 2: Jacobian of the flow --------------------------------------------------


def test_criterion_2_jacobian_consistency():
    rng = np.random.default_rng(202)
    n, worst, skipped = 1000, 0.0, 0
    e = 1e-7
    for _ in range(n):
        h = _random_stretch(rng)
        x = rng.uniform(1e-3, 6.0)
        y = flow(h, 1.0, x)
        # x -> T_h x is only piecewise smooth: skip stencils straddling a kink
        if min(np.min(np.abs(h.breakpoints - x)), np.min(np.abs(h.breakpoints - y))) < 1e-5:
            skipped += 1
            continue
        fd = (flow(h, 1.0, x + e) - flow(h, 1.0, x - e)) / (2 * e)
        ex = math.exp(log_jacobian(h, x))
        worst = max(worst, abs(ex - fd) / max(1.0, abs(fd)))
    _verdict(2, worst <= 1e-6 and skipped < 10, f"max rel gap {worst:.2e} over {n - skipped} cases ({skipped} skipped)")


# -- 3: change of measure -----------------------------------------------------


def test_criterion_3_change_of_measure():
    cfg = parse_config(EXPERIMENTS / "admissibility.yaml")
    res = run_experiment(cfg)
    norm, adm, closed = res.reports
    space = AtomicSpace(cfg.space.atoms, cfg.space.weights)
    sub = space.subset(atoms=[0])
    h = GridDirection(cfg.direction.a, cfg.direction.b, cfg.direction.breakpoints, cfg.direction.values)
    eps = 1e-3
    batch = sample_batch(space, space.full(), cfg.window, cfg.seed, range(cfg.paths), role="density-derivative")
    quot = (1.0 - density_batch(batch, h.scaled(eps), sub)) / eps
    rho = rho_batch(batch, h, sub)
    diff, se = mean_se(quot - rho)
    deriv_ok = abs(diff) <= 3 * se
    ok = norm.passed and adm.passed and closed.passed and deriv_ok
    _verdict(3, ok, f"E p = {norm.estimate:.5f} +- {norm.std_error:.1e}; adm diff {adm.estimate:.2e} "
                    f"+- {adm.std_error:.1e}; closed form {closed.estimate:.5f} vs {closed.target:.5f}; "
                    f"density derivative gap {diff:.2e} +- {se:.1e}")


# -- 4: grid transformation group ----------------------------------------------


def test_criterion_4_grid_group():
    space = AtomicSpace([[0.0], [1.0]], [1.0, 0.5])
    sub0, sub1 = space.subset(atoms=[0]), space.subset(atoms=[1])
    grid = DifferentialGrid([
        Cell(GridDirection.bump(0.0, 1.0), sub0),
        Cell(GridDirection(1.0, 3.0, [0.0, 1.0, 1.5, 3.0], [0.0, 2.0, -2.0 / 3.0]), sub0),
        Cell(GridDirection.bump(0.5, 2.5), sub1),
    ])
    N = 10_000
    batch = sample_batch(space, space.full(), 3.0, 44, range(N))
    valid = batch.valid
    rng = np.random.default_rng(404)
    z1, z2 = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3)
    seq = grid_transform_batch(grid_transform_batch(batch, grid, z1), grid, z2)
    once = grid_transform_batch(batch, grid, z1 + z2)
    add_gap = float(np.max(np.abs(seq.times[valid] - once.times[valid])))
    rev = grid_transform_batch(batch, grid, z1, order=[2, 1, 0])
    fwd = grid_transform_batch(batch, grid, z1)
    comm_gap = float(np.max(np.abs(rev.times[valid] - fwd.times[valid])))

    # zero columns: a 2-d linear endpoint, with cells that are often empty
    model = linear()
    t = 2.5
    mgrid = DifferentialGrid.uniform(model.space.full(), [(0.5, 0.9), (1.8, 2.1)])
    mbatch = sample_batch(model.space, model.space.full(), t, 45, range(N))
    sigma, _, _ = jacobian_batch(endpoint_functional(model, [0.5, -0.2], t), mbatch, mgrid, source="fd")
    empty_cells = zero_ok = 0
    for i, cell in enumerate(mgrid.cells):
        inside = mbatch.valid & (mbatch.times > cell.a) & (mbatch.times < cell.b)
        empty = ~inside.any(axis=1)
        empty_cells += int(empty.sum())
        zero_ok += int(np.all(sigma[empty, :, i] == 0.0, axis=1).sum())
    nonzero_seen = bool(np.any(sigma != 0.0))

    # mixed differences along two directions on the first jump time
    hdir = GridDirection.bump(0.0, 2.0)
    gdir = GridDirection(0.0, 2.0, [0.0, 0.5, 2.0], [1.0, -1.0 / 3.0])
    f = first_jump_time(sub0)
    tau = f.batch(batch)[:, 0]
    inside = np.isfinite(tau) & (tau < 2.0)
    comm = np.zeros(N)
    comm[inside] = gdir.h(tau[inside]) * hdir.J(tau[inside]) - hdir.h(tau[inside]) * gdir.J(tau[inside])
    qual = inside & (np.abs(comm) > 1e-3)
    hg, gh, ehg, egh, stable = mixed_second_fd_batch(f, batch.take(np.flatnonzero(qual)), gdir, hdir, sub0)
    separated = np.abs(hg - gh)[:, 0] > 10 * np.maximum(ehg, egh)[:, 0]
    frac = float(separated.mean())

    ok = add_gap <= 1e-8 and comm_gap <= 1e-8 and zero_ok == empty_cells > 0 and nonzero_seen and frac >= 0.99
    _verdict(4, ok, f"additivity {add_gap:.1e}, commutativity {comm_gap:.1e}; zero columns {zero_ok}/{empty_cells}; "
                    f"mixed differences separated on {frac:.4f} of {int(qual.sum())} qualifying paths")


# -- 5: analytic vs finite-difference SDE derivatives -------------------------


def _agreement(model, x, t, batch, grid):
    agree, *_ = derivative_agreement(endpoint_functional(model, x, t), batch, grid)
    return float(agree.mean())


def test_criterion_5_sde_derivatives():
    N = 10_000
    t2 = 2.5
    grid2 = DifferentialGrid.uniform(linear().space.full(), [(0.5, 1.5), (1.5, 2.5)])
    fracs = {}
    for name, model in (("linear", linear()), ("nonlinear", linear(eps=0.7))):
        batch = sample_batch(model.space, model.space.full(), t2, 51, range(N))
        fracs[name] = _agreement(model, [0.5, -0.2], t2, batch, grid2)
    thin = thinned_smooth()
    t3 = 3.0
    grid1 = DifferentialGrid.uniform(thin.space.full(), [(0.5, 2.5)])
    fracs["thinned"] = _agreement(thin, [0.1], t3, sample_candidates(thin, t3, 52, range(N)), grid1)

    flat = thinned_smooth(kappa=0.0, constant_rate=True)
    add = AdditiveModel("reduced", 1, flat.drift, flat.drift_jac, lambda m, a: m[:, :1], flat.space)
    cands = sample_candidates(flat, t3, 53, range(N))
    st, rt = grid_derivative_batch(flat, [0.1], t3, cands, grid1)
    sa, ra = grid_derivative_batch(add, [0.1], t3, cands, grid1)
    red_gap = float(max(np.max(np.abs(rt.final - ra.final)), np.max(np.abs(st - sa))))

    ok = all(v >= 0.95 for v in fracs.values()) and red_gap <= 1e-8
    _verdict(5, ok, ", ".join(f"{k} {v:.4f}" for k, v in fracs.items()) + f"; reduction gap {red_gap:.1e}")


# -- 6 and 7: non-degeneracy law and atoms of the restricted law --------------

_RANK_MODEL = dict(A=[[-1.0]], atoms=[[1.0], [-0.5]], weights=[1.0, 1.0])
_RANK_CELL = (0.5, 1.5)


@pytest.fixture(scope="module")
def rank_samples():
    model = linear(**_RANK_MODEL)
    grid = DifferentialGrid.uniform(model.space.full(), [_RANK_CELL])
    N = 100_000
    batch = sample_batch(model.space, model.space.full(), 2.0, 61, range(N))
    return endpoint_samples(model, [0.5], 2.0, batch, grid)


def test_criterion_6_nondegeneracy_law(rank_samples):
    _, keep = rank_samples
    N = len(keep)
    p = 1 - math.exp(-(_RANK_CELL[1] - _RANK_CELL[0]) * 2.0)
    est = float(keep.mean())
    se = math.sqrt(p * (1 - p) / N)
    _verdict(6, abs(est - p) <= 3 * se, f"P(full rank) {est:.5f} vs {p:.5f} (s.e. {se:.1e})")


def test_criterion_7_atoms(rank_samples):
    fx, keep = rank_samples
    restricted = atom_probe(fx, keep)
    unrestricted = atom_probe(fx)
    # the same samples with 30% of the kept ones collapsed onto one value
    x = fx[keep, 0].copy()
    hit = np.random.default_rng(707).uniform(size=len(x)) < 0.3
    x[hit] = 0.25
    injected = atom_probe(x)
    true_mass = float(hit.mean())
    detected = injected.verdict == "fail" and abs(injected.cdf_jump - true_mass) <= 3 * injected.cdf_jump_se
    two_d = run_experiment(parse_config(EXPERIMENTS / "density_probe.yaml"))
    ok = restricted.verdict == "pass" and detected and two_d.passed
    _verdict(7, ok, f"restricted 1-d {restricted.verdict} (max cdf jump {restricted.cdf_jump:.1e}), 2-d "
                    f"{'pass' if two_d.passed else 'fail'}; unrestricted {unrestricted.verdict}; injected mass "
                    f"{injected.cdf_jump:.4f} vs {true_mass:.4f}")


# -- 8: convergence in variation ----------------------------------------------


def test_criterion_8_tv_convergence():
    res = run_experiment(parse_config(EXPERIMENTS / "tv_converge.yaml"))
    s = res.summary
    tvs = " ".join(f"n={r['n']:g}:{r['tv']:.4f}[{r['ci_low']:.4f},{r['ci_high']:.4f}]" for r in res.rows)
    ok = s["decreasing"] and s["final_within_2x_baseline"] and s["baseline_ok"]
    _verdict(8, ok, f"{tvs}; baseline {s['baseline']:.4f}")


# -- 9: singular characteristic function --------------------------------------


def test_criterion_9_singular_cf():
    res = run_experiment(parse_config(EXPERIMENTS / "singular_cf.yaml"))
    s = res.summary
    mods = " ".join(f"{r['oracle_abs']:.4f}" for r in res.rows)
    ok = s["oracle_increasing"] and s["mc_within_se"] and s["smoothed_decays"]
    _verdict(9, ok, f"oracle |cf| {mods}; MC within 3 s.e. {s['mc_within_se']}; smoothed decays {s['smoothed_decays']}")


# -- 10: discontinuous thinned model ------------------------------------------


def test_criterion_10_switch_discontinuity():
    cfg = parse_config(EXPERIMENTS / "scan_arctan.yaml")
    res = run_experiment(cfg)
    sizes = [r["sizes"] for r in res.rows]
    exact = all(len(sz) == 1 and abs(sz[0] - math.pi / 4) <= 1e-6 for sz in sizes)
    model = build_model(cfg)
    grid = build_grid(cfg.grid, model.space)
    rep = check_derivative(endpoint_functional(model, cfg.x, cfg.t), config_sampler(model, cfg.t, cfg.seed),
                           grid, 0, 2000, cfg.seed)
    flagged = rep.details["flagged_fraction"]
    ok = res.passed and exact and len(sizes) > 0 and flagged > 0
    _verdict(10, ok, f"{len(sizes)} scanned paths each with one jump of size pi/4: {exact}; "
                     f"flagged fraction {flagged:.4f}")


# -- 11: reproducibility ------------------------------------------------------

_REDUCED = {"admissibility": 5000, "density_probe": 3000, "derivative_linear": 1000, "derivative_thinned": 1000,
            "scan_arctan": None, "sde_sim": 1000, "singular_cf": 5000, "tv_converge": 5000}


def test_criterion_11_reproducibility(tmp_path):
    kinds = {"derivative_linear": "derivative-check", "derivative_thinned": "derivative-check",
             "density_probe": "density-probe", "scan_arctan": "scan", "sde_sim": "sde-sim",
             "singular_cf": "singular-cf", "tv_converge": "tv-converge", "admissibility": "admissibility"}
    mismatched = []
    for stem, paths in _REDUCED.items():
        outs = []
        for k, threads in enumerate(["1", "1", "4"]):
            out = tmp_path / f"{stem}{k}"
            argv = [kinds[stem], "--config", str(EXPERIMENTS / f"{stem}.yaml"), "--out", str(out),
                    "--threads", threads]
            if paths:
                argv += ["--paths", str(paths)]
            assert main(argv) in (0, 1)
            outs.append((out / "report.json").read_bytes())
        if not outs[0] == outs[1] == outs[2]:
            mismatched.append(stem)
    _verdict(11, not mismatched, f"{len(_REDUCED)} suites rerun with threads 1, 1, 4; mismatched: {mismatched or 'none'}")
