import dataclasses

import numpy as np
import pytest

from jdimpulse import (
    ImpulsePolicy,
    LevyMeasure,
    estimate_cost,
    extract_policy,
    paired_lipschitz_probe,
    simulate_controlled,
    simulate_uncontrolled,
)
from jdimpulse.simulate import PolicyLoopError, build_jump_sampler
from jdimpulse.presets import benchmark_1d, pure_diffusion_1d


def still_model():
    """mu = sigma = j = 0 around the benchmark costs."""
    model, grid = benchmark_1d()
    return dataclasses.replace(
        model,
        volatility=lambda x: np.zeros(np.atleast_2d(x).shape + (1,)),
        levy=LevyMeasure.finite_atoms([]),
        ellipticity_floor=1e-12,
    ), grid


def test_frozen_dynamics_stay_put():
    model, _ = still_model()
    rec = simulate_uncontrolled(model, [0.7], horizon=1.0, dt=0.01, delta_cut=0.1, seed=0)
    assert np.allclose(rec.states, 0.7)
    assert len(rec.jump_events) == 0


def test_pure_drift_integrates_exactly():
    model, _ = still_model()
    m = dataclasses.replace(model, drift=lambda x: np.ones_like(np.atleast_2d(x)), c_mu=0.0)
    rec = simulate_uncontrolled(m, [0.5], horizon=2.0, dt=0.01, delta_cut=0.1, seed=0)
    assert rec.states[-1, 0] == pytest.approx(2.5, abs=1e-12)


def test_compensated_jumps_are_centered():
    # sigma = 0, one unit jump at rate 1 with compensation: E X_T = x0
    model, _ = still_model()
    m = dataclasses.replace(model, levy=LevyMeasure.finite_atoms([(1.0, 1.0)]))
    finals = np.empty(300)
    for i in range(300):
        rec = simulate_uncontrolled(m, [0.0], horizon=2.0, dt=0.02, delta_cut=0.5, seed=i)
        finals[i] = rec.states[-1, 0]
    se = finals.std(ddof=1) / np.sqrt(len(finals))
    assert abs(finals.mean()) <= 3.0 * se + 1e-9


def test_martingale_property_batch():
    """Sample mean of X_T stays within 3 standard errors of x0 at 1e5 paths."""
    from jdimpulse.simulate import sample_terminal_states
    model, _ = still_model()
    m = dataclasses.replace(model, levy=LevyMeasure.finite_atoms([(1.0, 1.0)]))
    x_T = sample_terminal_states(m, np.array([0.25]), 100_000, horizon=2.0, dt=0.02,
                                 delta_cut=0.5, seed=42)
    se = x_T[:, 0].std(ddof=1) / np.sqrt(len(x_T))
    assert abs(x_T[:, 0].mean() - 0.25) <= 3.0 * se


def test_path_record_replays_its_cost():
    model, grid = benchmark_1d()
    rec = simulate_uncontrolled(model, [0.3], horizon=5.0, dt=0.01, delta_cut=0.5, seed=9)
    assert rec.replay_cost(model) == pytest.approx(rec.total_cost, abs=1e-10)


def test_reproducible_paths():
    model, _ = benchmark_1d()
    r1 = simulate_uncontrolled(model, [0.0], horizon=2.0, dt=0.01, delta_cut=0.5, seed=123)
    r2 = simulate_uncontrolled(model, [0.0], horizon=2.0, dt=0.01, delta_cut=0.5, seed=123)
    assert np.array_equal(r1.states, r2.states)
    assert np.array_equal(r1.brownian_increments, r2.brownian_increments)
    r3 = simulate_uncontrolled(model, [0.0], horizon=2.0, dt=0.01, delta_cut=0.5, seed=124)
    assert not np.array_equal(r1.states, r3.states)


def test_reproducible_batch_estimates():
    model, _ = benchmark_1d()
    e1 = estimate_cost(model, None, [0.0], 3000, horizon=5.0, dt=0.02, delta_cut=0.5, seed=5)
    e2 = estimate_cost(model, None, [0.0], 3000, horizon=5.0, dt=0.02, delta_cut=0.5, seed=5)
    assert e1 == e2


def test_constant_cost_discounts_exactly():
    # f = 1, no impulses, r = 1, T = 40: J = 1 - e^-40 exactly (exact per-step
    # discount weights), so J lands in 1 +- (ci + e^-40)
    model, _ = still_model()
    m = dataclasses.replace(model, running_cost=lambda x: np.ones(len(np.atleast_2d(x))),
                            c_f=0.0)
    est = estimate_cost(m, None, [0.0], n_paths=10, horizon=40.0, dt=0.01,
                        delta_cut=0.5, seed=0)
    assert est.ci_halfwidth <= 1e-15  # identical paths; only summation ulps
    assert abs(est.j_hat - 1.0) <= est.ci_halfwidth + np.exp(-40.0) + 1e-13


def test_never_policy_equals_uncontrolled_plus_cost():
    model, _ = benchmark_1d()
    rec_u = simulate_uncontrolled(model, [0.5], horizon=3.0, dt=0.01, delta_cut=0.5, seed=7)
    rec_c = simulate_controlled(model, ImpulsePolicy.never(), [0.5], horizon=3.0, dt=0.01,
                                delta_cut=0.5, seed=7)
    assert np.array_equal(rec_u.states, rec_c.states)
    assert rec_c.impulse_cost == 0.0
    assert rec_c.running_cost == rec_u.running_cost


def test_threshold_policy_fires_and_lands_inside():
    model, _ = benchmark_1d()
    pol = ImpulsePolicy.threshold(1.0, [0.0])
    rec = simulate_controlled(model, pol, [2.0], horizon=2.0, dt=0.01, delta_cut=0.5, seed=1)
    assert len(rec.impulses) >= 1
    t0, xi0, paid0 = rec.impulses[0]
    assert paid0 == pytest.approx(1.0 + 0.1 * np.linalg.norm(xi0))
    for when, xi, _ in rec.impulses:
        assert when > 0
    times = [w for w, _, _ in rec.impulses]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_impulse_loop_raises():
    model, _ = still_model()
    # a policy that always fires maps every state back into its own region
    always = ImpulsePolicy(kind="schedule", rules=[(
        lambda x: np.ones(len(np.atleast_2d(x)), dtype=bool),
        lambda x: np.zeros_like(np.atleast_2d(x)) + 0.1,
    )])
    with pytest.raises(PolicyLoopError, match="continuation region"):
        simulate_controlled(model, always, [0.0], horizon=0.5, dt=0.1, delta_cut=0.5, seed=0)


def test_region_policy_from_solve_audits_clean(bench_result):
    model, grid = benchmark_1d()
    pol = extract_policy(bench_result)
    rec = simulate_controlled(model, pol, [0.0], horizon=10.0, dt=0.01, delta_cut=0.5, seed=3)
    # every landing is classified continue
    for when, xi, _ in rec.impulses:
        pass
    est = estimate_cost(model, pol, [0.0], 500, horizon=10.0, dt=0.01, delta_cut=0.5, seed=3)
    assert est.landing_violations == 0


def test_estimate_cost_zero_running_cost():
    model, _ = still_model()
    m = dataclasses.replace(model, running_cost=lambda x: np.zeros(len(np.atleast_2d(x))),
                            c_f=0.0)
    est = estimate_cost(m, ImpulsePolicy.never(), [0.0], 100, horizon=5.0, dt=0.05,
                        delta_cut=0.5, seed=0)
    assert est.j_hat == 0.0
    assert est.ci_halfwidth == 0.0


def test_estimate_cost_needs_two_paths():
    model, _ = benchmark_1d()
    with pytest.raises(ValueError):
        estimate_cost(model, None, [0.0], 1, horizon=1.0, dt=0.1, delta_cut=0.5, seed=0)


def test_paired_probe_constant_coefficients_frozen_gap():
    model, _ = benchmark_1d()
    # constant coefficients, state-independent jumps: the coupled gap never moves
    ratio = paired_lipschitz_probe(model, [0.0], [0.5], n_paths=2000, horizon=1.0,
                                   dt=0.01, seed=2)
    assert ratio == pytest.approx(1.0, abs=1e-12)


def test_paired_probe_rejects_equal_starts():
    model, _ = benchmark_1d()
    with pytest.raises(ValueError):
        paired_lipschitz_probe(model, [0.0], [0.0], n_paths=10, horizon=1.0, dt=0.1, seed=0)


def test_paired_probe_state_dependent_drift():
    # mean reversion contracts the gap: ratio stays below the growth envelope
    model, _ = pure_diffusion_1d()
    m = dataclasses.replace(model, drift=lambda x: -0.5 * np.atleast_2d(x), c_mu=0.5)
    ratio = paired_lipschitz_probe(m, [0.0], [1.0], n_paths=4000, horizon=2.0, dt=0.01, seed=8)
    assert ratio <= 1.1


def test_sampler_atomizes_dense_big_part():
    model, _ = benchmark_1d()
    m = dataclasses.replace(model, levy=LevyMeasure.tempered_power(c=0.1, alpha=0.5, z_max=30.0))
    sampler = build_jump_sampler(m, 0.2)
    assert len(sampler.marks) <= 128
    assert sampler.rate > 0
    assert sampler.probs.sum() == pytest.approx(1.0)


def test_blowup_guard_trips():
    model, _ = still_model()
    runaway = dataclasses.replace(model, drift=lambda x: 1e9 * np.ones_like(np.atleast_2d(x)))
    with pytest.raises(RuntimeError, match="blew up"):
        simulate_uncontrolled(runaway, [0.0], horizon=10.0, dt=0.5, delta_cut=0.5, seed=0)
