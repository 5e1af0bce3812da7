import numpy as np
import pytest

from mfglq.errors import StructuralError
from mfglq.nashlab import (
    Deviation,
    cost_gap_study,
    default_deviations,
    major_perturbation,
    minor_perturbation,
    rate_fit,
    simulate_realized,
    state_average_gap,
)
from mfglq.paths import TimeGrid, sample_ensemble
from mfglq.solver import picard_solve

from conftest import coupled_benchmark, scalar_spec


def solved(spec, steps=20, paths=8, particles=256, seed=0, tol=1e-9, max_iter=60):
    ens = sample_ensemble(TimeGrid(spec.T, steps), paths, particles, spec.K, seed)
    solution, report = picard_solve(spec, ens, tol=tol, max_iter=max_iter)
    assert report.converged, report
    return solution


# -- rate_fit -------------------------------------------------------------------


def test_rate_fit_exact_inverse_law():
    ns = [8, 16, 32, 64, 128]
    fit = rate_fit(ns, [3.0 / n for n in ns])
    assert abs(fit.slope + 1.0) < 1e-12
    assert abs(fit.r_squared - 1.0) < 1e-12


def test_rate_fit_exact_inverse_sqrt():
    ns = [8, 16, 32, 64]
    fit = rate_fit(ns, [2.0 / np.sqrt(n) for n in ns])
    assert abs(fit.slope + 0.5) < 1e-12


def test_rate_fit_with_multiplicative_noise():
    rng = np.random.default_rng(4)
    ns = [8, 16, 32, 64, 128, 256]
    ys = [3.0 / n * float(np.exp(0.1 * rng.normal())) for n in ns]
    fit = rate_fit(ns, ys)
    assert -1.2 <= fit.slope <= -0.8
    assert fit.ci_low <= fit.slope <= fit.ci_high


def test_rate_fit_refuses_bad_input():
    with pytest.raises(StructuralError, match="fit refused"):
        rate_fit([8, 16, 32], [1.0, 0.5, 0.25])
    with pytest.raises(StructuralError):
        rate_fit([8, 16, 32, 64], [1.0, 0.5, -0.25, 0.1])


# -- realized simulation ----------------------------------------------------------


def test_realized_decoupled_single_agent_matches_limiting():
    spec = scalar_spec(
        K=1, F0_1=[[0.0]], F0_2=[[0.0]], F1=[[0.0]], F2=[[0.0]], H=[[0.0]],
        rho=0.0, rho0=0.0, sigma0=[0.3], sigma=[0.3], D0=[[0.1]], D=[[0.1]],
        G0=[[0.5]], G=[[0.5]],
    )
    solution = solved(spec, particles=128)
    run = simulate_realized(spec, solution, n_agents=1, seed=11, replications=6)
    # minors share the exact control paths: bitwise equality; the major is
    # re-integrated with the final adjoint surfaces, so it agrees only up to
    # the Picard tolerance
    assert np.max(np.abs(run.x[:, 0] - run.x_lim[:, 0])) < 1e-12
    assert np.allclose(run.cost_realized, run.cost_limiting, atol=1e-8)
    assert np.max(np.abs(run.x0 - run.x0_lim)) < 1e-7


def test_realized_zero_cost_game_costs_vanish():
    spec = scalar_spec(
        K=1, Q0=[[0.0]], Q=[[0.0]], G0=[[0.0]], G=[[0.0]], sigma0=[0.2], sigma=[0.2],
    )
    solution = solved(spec, particles=64, max_iter=10)
    run = simulate_realized(spec, solution, n_agents=4, seed=3, replications=4)
    assert np.allclose(run.cost0_realized, 0.0)
    assert np.allclose(run.cost_realized, 0.0)


def test_realized_average_identity_bitwise():
    spec = coupled_benchmark(K=2, T=0.5)
    solution = solved(spec, particles=128)
    run = simulate_realized(spec, solution, n_agents=6, seed=5, replications=3)
    assert np.array_equal(run.x_avg, run.x.mean(axis=1))
    assert run.x.shape[1] == 6


def test_realized_costs_nonnegative_and_bounded_in_n():
    spec = coupled_benchmark(K=1, T=0.5)
    solution = solved(spec, particles=128)
    sups = []
    for n_agents in (4, 8, 16, 32):
        run = simulate_realized(spec, solution, n_agents=n_agents, seed=7, replications=8)
        assert np.all(run.cost0_realized >= 0.0)
        assert np.all(run.cost_realized >= 0.0)
        sups.append(float(np.mean(np.max(np.sum(run.x**2, axis=-1), axis=-1))))
    # second-moment boundedness: no upward trend in N
    slope = np.polyfit(np.log([4, 8, 16, 32]), np.log(sups), 1)[0]
    assert abs(slope) <= 0.1


def test_state_average_gap_decreases_and_threads_do_not_matter():
    spec = coupled_benchmark(K=1, T=0.5)
    solution = solved(spec, particles=512)
    runs, runs_mt = [], []
    for n_agents in (8, 16, 32, 64):
        runs.append(simulate_realized(spec, solution, n_agents, seed=13, replications=24))
        runs_mt.append(simulate_realized(spec, solution, n_agents, seed=13, replications=24, threads=4))
    for a, b in zip(runs, runs_mt):
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.cost_realized, b.cost_realized)
    report = state_average_gap(solution, runs)
    vals = report.metrics["avg_state_gap"]
    assert vals[-1] < vals[0]
    assert report.fits["avg_state_gap"].slope < -0.4


def test_state_average_gap_demands_balanced_split():
    spec = coupled_benchmark(K=2, T=0.5)
    solution = solved(spec, particles=64, max_iter=80)
    runs = [simulate_realized(spec, solution, n, seed=1, replications=2) for n in (5, 8, 16, 32)]
    with pytest.raises(StructuralError):
        state_average_gap(solution, runs)


def test_cost_gap_study_reports_major_and_each_type():
    spec = coupled_benchmark(K=2, T=0.5)
    solution = solved(spec, particles=256)
    runs = [simulate_realized(spec, solution, n, seed=2, replications=16) for n in (8, 16, 32, 64)]
    report = cost_gap_study(spec, solution, runs)
    assert set(report.metrics) == {"cost_gap_major", "cost_gap_minor_0", "cost_gap_minor_1"}
    for vals in report.metrics.values():
        assert all(v >= 0.0 for v in vals)
    assert set(report.fits) == set(report.metrics)


def test_decoupled_costs_agree_within_monte_carlo_error():
    spec = scalar_spec(
        K=1, F0_1=[[0.0]], F0_2=[[0.0]], F1=[[0.0]], F2=[[0.0]], H=[[0.0]],
        rho=0.0, rho0=0.0, sigma0=[0.3], sigma=[0.3], G0=[[0.5]], G=[[0.5]],
    )
    solution = solved(spec, particles=128)
    for n_agents in (4, 16):
        run = simulate_realized(spec, solution, n_agents, seed=21, replications=8)
        diff = run.cost_realized - run.cost_limiting
        assert np.allclose(diff, 0.0, atol=1e-8)
        diff0 = run.cost0_realized - run.cost0_limiting
        assert np.allclose(diff0, 0.0, atol=1e-8)


# -- perturbations ----------------------------------------------------------------


def test_self_deviation_improvement_is_exactly_zero():
    spec = coupled_benchmark(K=1, T=0.5)
    solution = solved(spec, particles=128)
    run = simulate_realized(spec, solution, n_agents=8, seed=17, replications=4)
    self_dev = [Deviation("self", lambda u, raw, gamma, met: u)]
    best, improvements = major_perturbation(
        spec, solution, run, deviations=self_dev, include_best_response=False,
    )
    assert improvements["self"] == 0.0
    assert best == 0.0
    best, improvements = minor_perturbation(
        spec, solution, run, agent=3, deviations=self_dev, include_best_response=False,
    )
    assert improvements["self"] == 0.0
    assert best == 0.0


def test_minor_perturbation_validates_agent_index():
    spec = coupled_benchmark(K=1, T=0.5)
    solution = solved(spec, particles=64)
    run = simulate_realized(spec, solution, n_agents=4, seed=19, replications=2)
    with pytest.raises(StructuralError, match="out of range"):
        minor_perturbation(spec, solution, run, agent=9)


def test_infeasible_candidate_rejected_with_node():
    from mfglq.convex import NonnegativeOrthant

    spec = coupled_benchmark(K=1, gamma0=NonnegativeOrthant(1), gamma=(NonnegativeOrthant(1),))
    solution = solved(spec, particles=64)
    run = simulate_realized(spec, solution, n_agents=4, seed=23, replications=2)
    bad = [Deviation("negative", lambda u, raw, gamma, met: np.full_like(u, -1.0))]
    with pytest.raises(StructuralError, match="node"):
        major_perturbation(spec, solution, run, deviations=bad, include_best_response=False)


def test_documented_deviations_do_not_beat_strategy_at_moderate_n():
    spec = coupled_benchmark(K=1, T=0.5)
    solution = solved(spec, particles=256)
    run = simulate_realized(spec, solution, n_agents=64, seed=29, replications=12)
    best, improvements = major_perturbation(
        spec, solution, run, deviations=default_deviations(), include_best_response=False,
    )
    # strictly suboptimal transforms lose strictly in the large-N limit
    assert improvements["zero"] < 0.0
    assert best <= max(0.0, max(improvements.values()))
