"""Acceptance suite: one test per criterion, one PASS line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``.  Criteria share one
solved benchmark where that is the stated prerequisite; each test reports
its own wall-clock against the budget it must meet.
"""

import time

import numpy as np
import pytest

from mfglq.cli import main as cli_main
from mfglq.convex import (
    Box,
    FullSpace,
    HalfspaceCone,
    LinearSubspace,
    NonnegativeOrthant,
    WeightedMetric,
    project,
    variational_residual,
)
from mfglq.config import load_config
from mfglq.model import build_stacked
from mfglq.nashlab import (
    Deviation,
    cost_gap_study,
    major_perturbation,
    minor_perturbation,
    simulate_realized,
    state_average_gap,
)
from mfglq.paths import TimeGrid, sample_ensemble
from mfglq.solver import picard_solve
from mfglq.wellposed import check_A4, check_global

from conftest import scalar_spec
from oracles import riccati_at, riccati_rk4
from pathlib import Path

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _report(number, label, elapsed, budget):
    print(f"\ncriterion {number} ({label}): PASS in {elapsed:.1f}s (budget {budget:.0f}s)")


@pytest.fixture(scope="module")
def benchmark_solution():
    cfg = load_config(CONFIGS / "benchmark.toml")
    started = time.monotonic()
    grid = TimeGrid(cfg.spec.T, 50)
    ensemble = sample_ensemble(grid, 16, 2048, cfg.spec.K, 7)
    solution, report = picard_solve(cfg.spec, ensemble, tol=1e-8, max_iter=80)
    assert report.converged
    return {"spec": cfg.spec, "solution": solution, "solve_time": time.monotonic() - started}


@pytest.fixture(scope="module")
def benchmark_runs(benchmark_solution):
    spec = benchmark_solution["spec"]
    solution = benchmark_solution["solution"]
    started = time.monotonic()
    runs = [
        simulate_realized(spec, solution, n, seed=71, replications=64)
        for n in (8, 16, 32, 64, 128)
    ]
    return {"runs": runs, "sim_time": time.monotonic() - started}


def test_criterion_1_projection_certification():
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    count = 0
    builders = [
        lambda m: FullSpace(m),
        lambda m: NonnegativeOrthant(m),
        lambda m: Box([-0.8] * m, [1.2] * m),
        lambda m: LinearSubspace(np.ones((1, m))),
        lambda m: HalfspaceCone(np.vstack([np.ones(m), -np.eye(m)[0]])),
    ]
    while count < 1000:
        for build in builders:
            m = int(rng.integers(1, 4)) + 1
            gamma = build(m)
            a = rng.normal(size=(m, m))
            metric = WeightedMetric.from_weight(a @ a.T + m * np.eye(m))
            x = rng.normal(scale=2.0, size=m)
            y = rng.normal(scale=2.0, size=m)
            px = project(x, gamma, metric)
            py = project(y, gamma, metric)
            res = variational_residual(x, px, gamma, metric, samples=64, seed=count)
            assert res <= 1e-9 * (1.0 + np.linalg.norm(x)), (gamma.variant, res)
            idem = np.linalg.norm(project(px, gamma, metric) - px)
            assert idem <= 1e-10 * (1.0 + np.linalg.norm(px))
            assert metric.norm(px - py) <= metric.norm(x - y) + 1e-9
            count += 1
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    _report(1, "projection certification", elapsed, 10)


def test_criterion_2_riccati_oracle_equivalence():
    started = time.monotonic()
    cfg = load_config(CONFIGS / "riccati.toml")
    grid = TimeGrid(cfg.spec.T, 200)
    ensemble = sample_ensemble(grid, 64, 512, 1, cfg.solver.seed)
    solution, report = picard_solve(cfg.spec, ensemble, tol=1e-5, max_iter=60)
    assert report.converged
    times, pvals = riccati_rk4([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[1.0]], 1.0, step=1e-6)
    p_nodes = riccati_at(times, pvals, grid.nodes)[:, 0, 0]
    u0, u = solution.control_surfaces()
    states = solution.iterate.x[:, 0]
    oracle = -p_nodes[None, None, :, None] * states
    dt = grid.dt
    num = np.sqrt(np.sum(dt * np.mean((u[:, 0] - oracle) ** 2, axis=(0, 1))))
    den = np.sqrt(np.sum(dt * np.mean(oracle**2, axis=(0, 1))))
    rel = num / den
    assert rel <= 0.02, rel
    # the major trajectory is identically zero in this benchmark
    assert np.max(np.abs(u0)) == 0.0
    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    _report(2, f"Riccati equivalence, rel err {rel:.4f}", elapsed, 120)


def test_criterion_3_local_contraction():
    started = time.monotonic()
    cfg = load_config(CONFIGS / "small_horizon.toml")
    assert check_A4(cfg.spec).passed
    medians = []
    for seed in range(5):
        grid = TimeGrid(cfg.spec.T, cfg.solver.steps)
        ensemble = sample_ensemble(grid, cfg.solver.paths, cfg.solver.particles, cfg.spec.K, seed)
        _, report = picard_solve(cfg.spec, ensemble, tol=1e-10, max_iter=60)
        assert report.converged
        assert len(report.ratios) >= 2
        medians.append(float(np.median(report.ratios[1:])))
        deltas = report.deltas
        assert all(deltas[i + 1] < deltas[i] for i in range(1, len(deltas) - 1))
    assert np.median(medians) <= 0.9
    elapsed = time.monotonic() - started
    assert elapsed < 180.0
    _report(3, f"local contraction, median ratio {np.median(medians):.3f}", elapsed, 180)


def test_criterion_4_global_certificate_soundness():
    started = time.monotonic()
    cfg = load_config(CONFIGS / "global_horizon.toml")
    spectral, cert = check_global(build_stacked(cfg.spec))
    assert cert.passed and cert.rho_cert < 1.0
    grid = TimeGrid(cfg.spec.T, cfg.solver.steps)
    ensemble = sample_ensemble(grid, cfg.solver.paths, cfg.solver.particles, 1, cfg.solver.seed)
    _, report = picard_solve(cfg.spec, ensemble, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter)
    assert report.converged
    assert all(r < 1.0 for r in report.ratios)

    bad = load_config(CONFIGS / "divergent.toml")
    a4 = check_A4(bad.spec)
    assert not a4.passed and a4.product > 10.0
    bad_spectral, bad_cert = check_global(build_stacked(bad.spec))
    assert not bad_spectral.norm_variant and not bad_spectral.eigen_variant
    assert not bad_cert.passed
    grid_bad = TimeGrid(bad.spec.T, bad.solver.steps)
    ens_bad = sample_ensemble(grid_bad, bad.solver.paths, bad.solver.particles, 1, bad.solver.seed)
    _, bad_report = picard_solve(bad.spec, ens_bad, tol=1e-9, max_iter=25)
    assert not bad_report.converged
    assert bad_report.diverged or any(r > 1.0 for r in bad_report.ratios)
    elapsed = time.monotonic() - started
    assert elapsed < 300.0
    _report(4, "global certificate soundness + divergence reporting", elapsed, 300)


def test_criterion_5_state_average_rate(benchmark_solution, benchmark_runs):
    started = time.monotonic()
    solution = benchmark_solution["solution"]
    runs = benchmark_runs["runs"]
    assert all(run.x0.shape[0] >= 64 for run in runs)
    report = state_average_gap(solution, runs)
    slope = report.fits["avg_state_gap"].slope
    assert -1.25 <= slope <= -0.75, slope
    elapsed = time.monotonic() - started + benchmark_solution["solve_time"] + benchmark_runs["sim_time"]
    assert elapsed < 300.0
    _report(5, f"state-average rate, slope {slope:.3f}", elapsed, 300)


def test_criterion_6_cost_gap_rate(benchmark_solution, benchmark_runs):
    started = time.monotonic()
    spec = benchmark_solution["spec"]
    solution = benchmark_solution["solution"]
    runs = benchmark_runs["runs"]
    report = cost_gap_study(spec, solution, runs)
    slopes = {name: fit.slope for name, fit in report.fits.items()}
    for name in ("cost_gap_major", "cost_gap_minor_0", "cost_gap_minor_1"):
        assert -0.75 <= slopes[name] <= -0.30, (name, slopes[name])
    elapsed = time.monotonic() - started + benchmark_runs["sim_time"]
    assert elapsed < 300.0
    pretty = ", ".join(f"{k.split('cost_gap_')[1]} {v:.3f}" for k, v in sorted(slopes.items()))
    _report(6, f"cost-gap rate, slopes {pretty}", elapsed, 300)


def test_criterion_7_nash_falsification(benchmark_solution):
    started = time.monotonic()
    spec = benchmark_solution["spec"]
    solution = benchmark_solution["solution"]
    eps_hat = {}
    for n in (16, 64, 256):
        run = simulate_realized(spec, solution, n, seed=97, replications=24)
        best_major, _ = major_perturbation(spec, solution, run, seed=5)
        best_minor, _ = minor_perturbation(spec, solution, run, agent=0, seed=5)
        eps_hat[n] = max(best_major, best_minor)
    assert eps_hat[16] >= eps_hat[64] >= eps_hat[256]
    assert eps_hat[256] <= eps_hat[16] / 2.0
    # paired self-deviation is exactly zero
    run = simulate_realized(spec, solution, 16, seed=101, replications=6)
    self_dev = [Deviation("self", lambda u, raw, gamma, met: u)]
    _, improvements = major_perturbation(
        spec, solution, run, deviations=self_dev, include_best_response=False
    )
    assert improvements["self"] == 0.0
    _, improvements = minor_perturbation(
        spec, solution, run, agent=1, deviations=self_dev, include_best_response=False
    )
    assert improvements["self"] == 0.0
    elapsed = time.monotonic() - started
    assert elapsed < 480.0
    values = ", ".join(f"N={n}: {v:.2e}" for n, v in eps_hat.items())
    _report(7, f"deviation suite, eps_hat {values}", elapsed, 480)


def _vi_residual_and_scale(spec, solution, samples, seed):
    from mfglq.solver import hamiltonian_residual

    worst = hamiltonian_residual(solution, spec, samples=samples, seed=seed)
    it = solution.iterate
    feedback_scale = float(np.max(np.abs(it.p0)) + np.max(np.abs(it.p)) + np.max(np.abs(it.q)))
    norms = np.linalg.norm(spec.B) + np.linalg.norm(spec.D[0]) + np.linalg.norm(spec.R[0])
    return worst, (1.0 + feedback_scale) ** 2 * (1.0 + norms)


def test_criterion_8_hamiltonian_residual(benchmark_solution):
    started = time.monotonic()
    spec = benchmark_solution["spec"]
    solution = benchmark_solution["solution"]
    worst, scale = _vi_residual_and_scale(spec, solution, 10_000, seed=0)
    assert worst <= 1e-6 * scale, (worst, scale)

    orthant = scalar_spec(
        K=1, T=0.5,
        A0=[[-0.8]], B0=[[1.0]], C0=[[0.2]], D0=[[0.2]],
        F0_1=[[0.3]], F0_2=[[0.2]], sigma0=[0.4],
        A=[[-1.0]], D=[[0.2]], R=[[1.0]],
        B=[[1.0]], C=[[0.2]], F1=[[0.3]], F2=[[0.2]], H=[[0.3]], sigma=[0.4],
        Q0=[[1.0]], G0=[[0.5]], rho0=0.5, Q=[[1.0]], G=[[0.5]], rho=0.5,
        gamma0=NonnegativeOrthant(1), gamma=(NonnegativeOrthant(1),),
        x0_init=[-0.5], x_init=[-0.5],
    )
    grid = TimeGrid(orthant.T, 25)
    ensemble = sample_ensemble(grid, 16, 128, 1, 31)
    sol2, rep2 = picard_solve(orthant, ensemble, tol=1e-9, max_iter=60)
    assert rep2.converged
    worst2, scale2 = _vi_residual_and_scale(orthant, sol2, 10_000, seed=1)
    assert worst2 <= 1e-6 * scale2, (worst2, scale2)
    u0, u = sol2.control_surfaces()
    assert np.min(u0) >= -1e-12 and np.min(u) >= -1e-12
    elapsed = time.monotonic() - started
    assert elapsed < 120.0
    _report(8, f"optimality residuals {worst:.2e} / {worst2:.2e}", elapsed, 120)


def test_criterion_9_study_determinism_across_threads(tmp_path):
    started = time.monotonic()
    base = [
        "study", str(CONFIGS / "smoke.toml"), "--study", "state-gap",
        "--Ns", "8,16,32,64", "--reps", "8", "--seed", "33",
    ]
    assert cli_main(base + ["--out", str(tmp_path / "one"), "--threads", "1"]) == 0
    assert cli_main(base + ["--out", str(tmp_path / "four"), "--threads", "4"]) == 0
    a = (tmp_path / "one" / "state-gap.csv").read_bytes()
    b = (tmp_path / "four" / "state-gap.csv").read_bytes()
    assert a == b
    elapsed = time.monotonic() - started
    _report(9, "byte-identical study output across thread counts", elapsed, 300)


def test_criterion_10_condition_checker_truth_table():
    started = time.monotonic()
    # terminal-weight smallness: three hand-built specs
    row1 = check_A4(scalar_spec(G0=[[0.0]], G=[[0.0]], D0=[[2.0]], D=[[2.0]]))
    row2 = check_A4(scalar_spec(G0=[[0.5]], rho0=0.0, G=[[0.5]], rho=0.0, D0=[[1.0]], D=[[1.0]]))
    row3 = check_A4(scalar_spec(G=[[2.0]], rho=0.0, D0=[[1.0]], D=[[1.0]]))
    assert (row1.passed, row2.passed, row3.passed) == (True, True, False)
    assert row2.m0 == pytest.approx(0.5) and row3.m0 >= 8.0

    # arbitrary-horizon: boundary case, strongly stable case, certificate case
    zero = scalar_spec(
        A0=[[0.0]], A=[[0.0]], B0=[[0.0]], B=[[0.0]], Q0=[[0.0]], Q=[[0.0]],
        G0=[[0.0]], G=[[0.0]],
    )
    s_zero, _ = check_global(build_stacked(zero))
    stable = scalar_spec(A0=[[-5.0]], A=[[-5.0]], C0=[[0.0]], C=[[0.0]], H=[[0.0]])
    s_stable, _ = check_global(build_stacked(stable))
    weak = load_config(CONFIGS / "global_horizon.toml").spec
    s_weak, cert_weak = check_global(build_stacked(weak))
    assert (s_zero.norm_variant, s_stable.norm_variant, s_weak.norm_variant) == (False, True, True)
    assert not s_zero.eigen_variant
    assert cert_weak.passed and cert_weak.rho_cert < 1.0
    elapsed = time.monotonic() - started
    _report(10, "condition-checker truth table", elapsed, 60)
