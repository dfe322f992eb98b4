import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2o_mpc.controller import (
    ControlDistribution,
    MppiConfig,
    MppiController,
    RolloutBatch,
    compute_weights,
    control_step,
    diagnostics_record,
    effective_sample_size,
    exponential_utility,
    likelihood_ratio_grad_mean,
    mppi_update,
    run_episode,
    sample_controls,
    shift,
)
from l2o_mpc.environments import CartpoleSpec, PointmassSpec
from l2o_mpc.sampling import HaltonConfig, SampleBank, build_sample_bank


def dist_of(mean, var=1.0):
    mean = np.asarray(mean, dtype=float)
    return ControlDistribution(mean, np.full_like(mean, var))


def zero_bank(n, h, d):
    return SampleBank(np.zeros((n, h, d)), HaltonConfig(h * d, n), h, d)


def random_instance(rng):
    n, h, d = rng.integers(1, 9), rng.integers(1, 6), rng.integers(1, 3)
    mean = rng.normal(size=(h, d))
    var = rng.uniform(0.1, 3.0, size=(h, d))
    u = rng.normal(size=(n, h, d)) * 2
    costs = rng.uniform(0, 50, size=n)
    lam = rng.uniform(0.05, 10)
    return ControlDistribution(mean, var), u, costs, lam


def test_distribution_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        ControlDistribution(np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        ControlDistribution(np.zeros((3, 1)), np.ones((2, 1)))


def test_config_validation():
    for bad in (dict(temperature=0), dict(step_size_mean=0), dict(step_size_mean=1.5),
                dict(step_size_cov=-0.1), dict(num_samples=0), dict(horizon=3), dict(shift_fill="x")):
        with pytest.raises(ValueError):
            MppiConfig(**bad)


def test_sample_controls_zero_bank_gives_mean():
    d = dist_of([[1.0], [-2.0], [0.5]])
    u = sample_controls(d, zero_bank(4, 3, 1), -10, 10)
    np.testing.assert_array_equal(u, np.broadcast_to(d.mean, (4, 3, 1)))


def test_sample_controls_sqrt_scaling_and_clamp():
    bank = build_sample_bank(5, 6, 1)
    mean = np.zeros((6, 1))
    u1 = sample_controls(ControlDistribution(mean, np.ones((6, 1))), bank, -1e9, 1e9)
    u4 = sample_controls(ControlDistribution(mean, 4 * np.ones((6, 1))), bank, -1e9, 1e9)
    np.testing.assert_allclose(u4, 2 * u1, rtol=1e-15)
    clamped = sample_controls(ControlDistribution(mean, 100 * np.ones((6, 1))), bank, -0.5, 0.5)
    assert clamped.min() >= -0.5 and clamped.max() <= 0.5


def test_sample_controls_shape_mismatch():
    with pytest.raises(ValueError):
        sample_controls(dist_of(np.zeros((4, 1))), zero_bank(2, 5, 1), -1, 1)


def test_weights_examples():
    np.testing.assert_allclose(compute_weights([3.0, 3.0, 3.0], 0.7), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(compute_weights([0.0, math.log(3.0)], 1.0), [0.75, 0.25], atol=1e-15)
    a = compute_weights([1.0, 4.0], 2.0)
    b = compute_weights([1.0 + 1e6, 4.0 + 1e6], 2.0)
    np.testing.assert_allclose(a, b, atol=1e-12)
    with pytest.raises(ValueError):
        compute_weights([1.0, np.nan], 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=20), st.floats(1e-3, 1e3), st.floats(-1e5, 1e5))
def test_weights_normalised_and_shift_invariant(costs, lam, offset):
    w = compute_weights(costs, lam)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1) <= 1e-12
    np.testing.assert_allclose(compute_weights(np.array(costs) + offset, lam), w, atol=1e-12)


def test_mppi_update_examples():
    cfg = MppiConfig(horizon=4, step_size_mean=1.0)
    d = dist_of([[0.0], [1.0]])
    u = np.array([[[2.0], [4.0]], [[0.0], [-2.0]]])
    new = mppi_update(d, RolloutBatch(u, np.zeros(2), np.array([0.5, 0.5])), cfg)
    np.testing.assert_allclose(new.mean, u.mean(axis=0))
    half = mppi_update(d, RolloutBatch(u, np.zeros(2), np.array([1.0, 0.0])), cfg.replace(step_size_mean=0.5))
    np.testing.assert_allclose(half.mean, (d.mean + u[0]) / 2)
    np.testing.assert_array_equal(new.var_diag, d.var_diag)


def test_mppi_update_small_step_keeps_mean():
    # a tiny step is the closest a valid config gets to gamma = 0
    cfg = MppiConfig(horizon=4, step_size_mean=1e-300)
    d = dist_of([[0.3], [1.0]])
    u = np.ones((2, 2, 1)) * 5
    new = mppi_update(d, RolloutBatch(u, np.zeros(2), np.array([0.5, 0.5])), cfg)
    np.testing.assert_array_equal(new.mean, d.mean)


def test_mppi_update_requires_weights():
    with pytest.raises(ValueError):
        mppi_update(dist_of(np.zeros((4, 1))), RolloutBatch(np.zeros((2, 4, 1)), np.zeros(2)), MppiConfig(horizon=4))


def test_covariance_update_uses_pre_update_mean_and_floor():
    cfg = MppiConfig(horizon=4, adapt_covariance=True, step_size_cov=0.5)
    d = ControlDistribution(np.zeros((1, 1)), np.ones((1, 1)))
    u = np.array([[[2.0]], [[-2.0]]])
    new = mppi_update(d, RolloutBatch(u, np.zeros(2), np.array([0.5, 0.5])), cfg)
    assert new.var_diag[0, 0] == pytest.approx(0.5 * 1 + 0.5 * 4)
    collapse = mppi_update(d, RolloutBatch(np.zeros((2, 1, 1)), np.zeros(2), np.array([0.5, 0.5])),
                           cfg.replace(step_size_cov=1.0))
    assert collapse.var_diag[0, 0] == 1e-6


def test_variance_floor_property():
    rng = np.random.default_rng(3)
    cfg = MppiConfig(horizon=4, adapt_covariance=True, step_size_cov=1.0)
    for _ in range(50):
        d, u, costs, lam = random_instance(rng)
        u = d.mean + 1e-5 * (u - d.mean)
        new = mppi_update(d, RolloutBatch(u, costs, compute_weights(costs, lam)), cfg)
        assert np.all(new.var_diag >= 1e-6)


def test_shift_examples():
    d = dist_of([[1.0], [2.0], [3.0]], var=2.0)
    rep = shift(d, MppiConfig(horizon=4, init_variance=(5.0,)))
    np.testing.assert_array_equal(rep.mean[:, 0], [2, 3, 3])
    np.testing.assert_array_equal(rep.var_diag[:, 0], [2, 2, 5])
    zero = shift(d, MppiConfig(horizon=4, shift_fill="zero"))
    np.testing.assert_array_equal(zero.mean[:, 0], [2, 3, 0])
    cfg = MppiConfig(horizon=4, shift_fill="zero")
    for _ in range(3):
        d = shift(d, cfg)
    np.testing.assert_array_equal(d.mean, 0)


def test_exponential_utility():
    assert exponential_utility([4.2], 0.3) == pytest.approx(4.2, abs=1e-12)
    assert exponential_utility([7.0] * 5, 2.0) == pytest.approx(7.0, abs=1e-12)
    costs = np.array([1.0, 2.0, 5.0, 9.0])
    # oracle: -lam log mean exp(-C/lam) = mean(C) - var(C) / (2 lam) + O(1/lam^2)
    val = exponential_utility(costs, 1e6)
    assert abs(val - costs.mean()) <= 1e-3 * np.ptp(costs)
    assert val == pytest.approx(costs.mean() - costs.var() / 2e6, abs=1e-9)
    assert exponential_utility(costs, 0.01) == pytest.approx(1.0 + 0.01 * math.log(4), abs=1e-9)


def test_likelihood_ratio_gradient_examples():
    d = ControlDistribution(np.array([[1.0]]), np.array([[2.0]]))
    same = RolloutBatch(np.array([[[1.0]], [[1.0]]]), np.zeros(2), np.array([0.3, 0.7]))
    np.testing.assert_array_equal(likelihood_ratio_grad_mean(d, same), 0)
    one = RolloutBatch(np.array([[[1.5]]]), np.zeros(1), np.array([1.0]))
    np.testing.assert_allclose(likelihood_ratio_grad_mean(d, one), [[-0.5 / 2.0]])


def test_gradient_update_identity_random():
    rng = np.random.default_rng(0)
    cfg = MppiConfig(horizon=4, step_size_mean=1.0)
    for _ in range(200):
        d, u, costs, lam = random_instance(rng)
        batch = RolloutBatch(u, costs, compute_weights(costs, lam))
        new = mppi_update(d, batch, cfg)
        grad = likelihood_ratio_grad_mean(d, batch)
        np.testing.assert_allclose(new.mean - d.mean, -d.var_diag * grad, atol=1e-10)
        np.testing.assert_allclose(new.mean, np.tensordot(batch.weights, u, axes=1), atol=1e-12)


def test_update_convexity():
    rng = np.random.default_rng(1)
    for _ in range(200):
        d, u, costs, lam = random_instance(rng)
        g = rng.uniform(0.01, 1.0)
        new = mppi_update(d, RolloutBatch(u, costs, compute_weights(costs, lam)), MppiConfig(horizon=4, step_size_mean=g))
        lo = np.minimum(d.mean, u.min(axis=0)) - 1e-12
        hi = np.maximum(d.mean, u.max(axis=0)) + 1e-12
        assert np.all((new.mean >= lo) & (new.mean <= hi))


@dataclasses.dataclass(frozen=True)
class FlatCost(PointmassSpec):
    def state_cost(self, state):
        return np.zeros(np.shape(state)[:-1])


def test_control_step_zero_cost_uniform_weights():
    env = FlatCost(control_weight=0.0)
    cfg = MppiConfig(horizon=6, num_samples=5, init_variance=(0.2,))
    ctrl = MppiController(cfg, env)
    u, new, batch = control_step(ctrl, np.zeros(4))
    np.testing.assert_allclose(batch.weights, 0.2, atol=1e-15)
    np.testing.assert_allclose(new.mean, batch.controls.mean(axis=0), atol=1e-12)
    np.testing.assert_array_equal(u, np.clip(new.mean[0], -env.control_bound, env.control_bound))


def test_control_step_single_sample():
    env = CartpoleSpec()
    cfg = MppiConfig(horizon=5, num_samples=1, step_size_mean=0.25, init_variance=(4.0,))
    ctrl = MppiController(cfg, env)
    old = ctrl.dist
    _, new, batch = control_step(ctrl, np.array([0, 0, 3.0, 0]))
    np.testing.assert_array_equal(batch.weights, [1.0])
    np.testing.assert_allclose(new.mean, old.mean + 0.25 * (batch.controls[0] - old.mean), atol=1e-12)


def test_control_step_deterministic():
    env = CartpoleSpec()
    cfg = MppiConfig(horizon=8, num_samples=7, temperature=0.5)
    outs = []
    for _ in range(2):
        ctrl = MppiController(cfg, env)
        outs.append(control_step(ctrl, np.array([0.1, 0, 3.0, 0.2])))
    assert outs[0][0].tobytes() == outs[1][0].tobytes()
    assert outs[0][1].mean.tobytes() == outs[1][1].mean.tobytes()
    assert outs[0][2].costs.tobytes() == outs[1][2].costs.tobytes()


def test_episode_bit_reproducible():
    env = CartpoleSpec(episode_length=20)
    cfg = MppiConfig(horizon=10, num_samples=8, temperature=0.3)
    a = run_episode(env, cfg, 4)
    b = run_episode(env, cfg, 4)
    assert a.states.tobytes() == b.states.tobytes()
    assert a.states.shape == (21, 4) and a.controls.shape == (20, 1)


def test_model_mismatch_option_changes_plan_not_plant():
    env = CartpoleSpec(episode_length=10)
    cfg = MppiConfig(horizon=8, num_samples=8, temperature=0.3)
    a = run_episode(env, cfg, 1)
    b = run_episode(env, cfg, 1, model_overrides={"pole_mass": 0.2})
    assert not np.array_equal(a.controls, b.controls)
    np.testing.assert_array_equal(a.states[0], b.states[0])


def test_diagnostics_record():
    w = np.array([0.5, 0.5])
    rec = diagnostics_record(3, RolloutBatch(np.zeros((2, 4, 1)), np.array([1.0, 3.0]), w), 1.0)
    assert rec["ess"] == pytest.approx(2.0) == effective_sample_size(w)
    assert rec["min_cost"] == 1.0 and rec["mean_cost"] == 2.0
    json.dumps(rec)
