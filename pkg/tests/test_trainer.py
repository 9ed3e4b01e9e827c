import itertools
import math
from dataclasses import replace

import numpy as np
import pytest

from cfmlab.data import DatasetSpec, funnel_log_density, sample_dataset
from cfmlab.eval import w2_squared
from cfmlab.integrate import IntegratorSettings, integrate, model_field
from cfmlab.net.field import init_model
from cfmlab.paths import PathSpec
from cfmlab.shared.batch import WeightedBatch, standard_normal_logpdf
from cfmlab.shared.errors import (
    ConfigError,
    DegenerateWeightsError,
    DomainError,
    InitializationError,
    TrainingError,
)
from cfmlab.trainer import (
    EbmConfig,
    TrainConfig,
    energy_pair_weights,
    leave_one_out_plan,
    linear_schedule,
    mala_run,
    regression_batch,
    resampler,
    rwis_batch,
    train,
    train_energy,
    train_interpolation,
)


def gaussian_sampler(d, shift=0.0):
    return lambda n, rng: rng.standard_normal((n, d)) + shift


def small_config(**overrides):
    base = dict(
        path=PathSpec("icfm", 0.1),
        batch_size=64,
        max_epochs=3,
        val_interval=1,
        steps_per_epoch=5,
        hidden=(8, 8),
        val_size=128,
        lr=1e-2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(path=PathSpec("sbcfm", 1.0), coupling="exact_ot")
    with pytest.raises(ConfigError):
        small_config(coupling="greedy")
    with pytest.raises(ConfigError):
        small_config(aggregation_m=65)
    assert small_config(path=PathSpec("sbcfm", 0.5), coupling="sinkhorn").resolved_epsilon == pytest.approx(0.5)
    assert TrainConfig(PathSpec("icfm", 0.1), batch_size=512).epoch_steps == 20


def test_ot_coupling_of_a_batch_with_itself_has_zero_targets(rng):
    pts = rng.standard_normal((32, 2))
    config = small_config(coupling="exact_ot")
    batch = regression_batch(config, pts, pts.copy(), rng)
    np.testing.assert_array_equal(batch.u, 0.0)


def test_time_window_rescales_targets(rng):
    config = small_config(path=PathSpec("icfm", 0.0))
    batch = regression_batch(config, np.zeros((16, 1)), np.ones((16, 1)), rng, window=(0.5, 1.0))
    assert np.all((batch.t >= 0.5) & (batch.t <= 1.0))
    np.testing.assert_allclose(batch.u, 2.0)


def test_weighted_targets_carry_row_weights(rng):
    config = small_config()
    target = WeightedBatch(rng.standard_normal((4, 2)), [0.1, 0.2, 0.3, 0.4])
    batch = regression_batch(config, rng.standard_normal((4, 2)), target, rng)
    np.testing.assert_allclose(batch.weights, [0.1, 0.2, 0.3, 0.4])


def test_energy_pair_weights():
    np.testing.assert_allclose(energy_pair_weights(None, None, 4), 0.25)
    np.testing.assert_allclose(energy_pair_weights(np.array([0.5, 0.5]), np.array([0.25, 0.75]), 2), [0.25, 0.75])
    with pytest.raises(TrainingError):
        energy_pair_weights(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 2)


def test_zero_epochs_returns_the_initial_model(rng):
    config = small_config(max_epochs=0)
    val = rng.standard_normal((16, 2))
    model, history = train(config, gaussian_sampler(2), gaussian_sampler(2), val, val)
    initial = init_model(2, config.hidden, config.seed)
    assert all(np.array_equal(a, b) for a, b in zip(model.weights, initial.weights))
    assert len(history) == 0


def test_validation_must_strictly_improve(rng):
    # updates this small leave every parameter bit-identical
    config = small_config(lr=1e-300, weight_decay=0.0, patience=1, max_epochs=10)
    val = rng.standard_normal((64, 2))
    _, history = train(config, gaussian_sampler(2), gaussian_sampler(2, 3.0), val, val + 3.0)
    assert [row.epoch for row in history] == [1, 2]
    assert history.rows[0].val_loss == history.rows[1].val_loss
    assert history.stopped == "early_stopping"


def test_patience_counts_validation_checks(rng):
    config = small_config(lr=1e-300, weight_decay=0.0, patience=2, val_interval=2, max_epochs=10)
    val = rng.standard_normal((64, 2))
    _, history = train(config, gaussian_sampler(2), gaussian_sampler(2, 3.0), val, val + 3.0)
    assert [row.epoch for row in history] == [2, 4, 6]


def test_wall_clock_limit_runs_a_final_check(rng):
    ticks = itertools.count(0.0, 10_000.0)
    config = small_config(max_epochs=5, val_interval=10)
    val = rng.standard_normal((64, 2))
    _, history = train(config, gaussian_sampler(2), gaussian_sampler(2, 1.0), val, val, clock=lambda: next(ticks))
    assert history.stopped == "wall_clock"
    assert [row.epoch for row in history] == [1]


def test_training_is_deterministic(rng):
    config = small_config(coupling="exact_ot", path=PathSpec("icfm", 0.1))
    val = rng.standard_normal((64, 2))
    a, _ = train(config, gaussian_sampler(2), gaussian_sampler(2, 2.0), val, val + 2.0)
    b, _ = train(config, gaussian_sampler(2), gaussian_sampler(2, 2.0), val, val + 2.0)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights + a.biases, b.weights + b.biases))


def test_unusable_sinkhorn_fails_training(rng):
    config = small_config(coupling="sinkhorn", epsilon=1e-3, sinkhorn_max_iters=1, sinkhorn_tol=1e-14)
    val = rng.standard_normal((64, 2))
    with pytest.raises(TrainingError):
        train(config, gaussian_sampler(2), gaussian_sampler(2, 3.0), val, val + 3.0)


def test_one_dimensional_shift_is_learned(rng):
    config = small_config(batch_size=128, steps_per_epoch=50, max_epochs=10, val_interval=5, hidden=(16, 16))
    val = rng.standard_normal((512, 1))
    model, history = train(config, gaussian_sampler(1), gaussian_sampler(1, 3.0), val, val + 3.0)
    assert history.steps_failed == 0
    x0 = rng.standard_normal((2000, 1))
    pushed = integrate(model_field(model), x0, 0.0, 1.0, IntegratorSettings("rk4", 20)).final
    assert abs(pushed.mean() - 3.0) < 0.3


@pytest.mark.slow
def test_otcfm_reaches_eight_gaussians(rng):
    config = TrainConfig(
        PathSpec("otcfm", 0.1), coupling="exact_ot", batch_size=256, max_epochs=100, val_interval=10, val_size=1000
    )
    target = DatasetSpec("eight_gaussians")
    val_target = sample_dataset(target, 1000, rng)
    model, _ = train(
        config,
        gaussian_sampler(2),
        lambda n, gen: sample_dataset(target, n, gen),
        rng.standard_normal((1000, 2)),
        val_target,
    )
    pushed = integrate(model_field(model), rng.standard_normal((1000, 2)), 0.0, 1.0, IntegratorSettings("dopri5")).final
    assert w2_squared(pushed, sample_dataset(target, 1000, rng)) < 0.5


def test_rwis_weights_are_uniform_when_density_matches_proposal(rng):
    batch = rwis_batch(standard_normal_logpdf, 3, 50, rng)
    np.testing.assert_allclose(batch.weights, 1 / 50, rtol=1e-12)
    flat = rwis_batch(lambda x: np.zeros(len(x)), 2, 20, rng, proposal="uniform", bound=2.0)
    np.testing.assert_allclose(flat.weights, 1 / 20, rtol=1e-12)


def test_rwis_weighted_mean_follows_the_target(rng):
    batch = rwis_batch(lambda x: standard_normal_logpdf(x - 1.0), 1, 100_000, rng)
    mean = float(np.sum(batch.weights * batch.points[:, 0]))
    assert mean == pytest.approx(1.0, abs=0.05)


def test_rwis_rejects_dead_weights(rng):
    with pytest.raises(DegenerateWeightsError):
        rwis_batch(lambda x: np.full(len(x), -np.inf), 2, 10, rng)


def test_linear_schedule():
    np.testing.assert_allclose(linear_schedule(0.1, 0.0, 3), [0.1, 0.05, 0.0])
    assert len(linear_schedule(0.1, 0.0, 0)) == 0


def test_mala_with_zero_steps_keeps_chains(rng):
    init = rng.standard_normal((10, 2))
    result = mala_run(standard_normal_logpdf, 10, 5, [0.0] * 5, rng, init=init)
    np.testing.assert_array_equal(result.samples, init)
    assert result.acceptance_rate == 0.0


def test_mala_rejects_bad_initialization(rng):
    with pytest.raises(InitializationError):
        mala_run(lambda x: np.full(len(x), -np.inf), 5, 1, [0.1], rng, d=2)
    with pytest.raises(ConfigError):
        mala_run(standard_normal_logpdf, 5, 1, [0.1], rng)


def test_mala_recovers_gaussian_covariance(rng):
    scale = np.array([1.0, 2.0])

    def log_density(x):
        return standard_normal_logpdf(x / scale)

    def grad(x):
        return -x / scale**2

    result = mala_run(log_density, 4000, 300, lambda k: 0.3, rng, d=2, grad_log_density=grad)
    np.testing.assert_allclose(np.cov(result.samples.T), np.diag(scale**2), atol=0.3)
    assert result.acceptance_rate > 0.5


def test_mala_runs_on_the_funnel(rng):
    result = mala_run(funnel_log_density, 200, 50, linear_schedule(0.05, 0.01, 50), rng, d=10)
    assert np.all(np.isfinite(result.samples))
    assert 0.0 < result.acceptance_rate <= 1.0


@pytest.mark.parametrize("method", ["rwis", "mcmc"])
def test_energy_training_logs_history(method):
    config = TrainConfig(PathSpec("icfm", 0.01), batch_size=32, hidden=(8,), lr=1e-3)
    ebm = EbmConfig(method=method, n_batches=4, log_every=2, mcmc_samples=64, mala_steps=5)
    model, history = train_energy(config, ebm, funnel_log_density)
    assert model.dim == 10
    assert [row.epoch for row in history] == [2, 4]
    assert all(math.isfinite(row.val_loss) for row in history)


def test_energy_training_honours_the_wall_clock():
    ticks = itertools.count(0.0, 10_000.0)
    config = TrainConfig(PathSpec("icfm", 0.01), batch_size=32, hidden=(8,), lr=1e-3)
    ebm = EbmConfig(n_batches=10, log_every=5)
    _, history = train_energy(config, ebm, funnel_log_density, clock=lambda: next(ticks))
    assert history.stopped == "wall_clock"
    assert [row.epoch for row in history] == [1]
    unlimited = replace(config, wall_clock_limit_seconds=None)
    _, history = train_energy(unlimited, ebm, funnel_log_density, clock=lambda: next(ticks))
    assert history.stopped == "max_epochs"
    assert [row.epoch for row in history] == [5, 10]


def test_energy_config_validation():
    with pytest.raises(ConfigError):
        EbmConfig(method="hmc")
    with pytest.raises(ConfigError):
        EbmConfig(proposal="laplace")


def _timepoints(rng, labels):
    return [(lab, rng.standard_normal((20, 2)) + lab) for lab in labels]


def test_leave_one_out_plan_layout(rng):
    points = _timepoints(rng, [0.0, 1.0, 2.0, 3.0])
    plan = leave_one_out_plan(points, 2)
    assert [(leg.t_start, leg.t_end) for leg in plan.legs] == [(0.0, pytest.approx(1 / 3)), (pytest.approx(1 / 3), 1.0)]
    assert plan.legs[1].target is points[3][1]
    assert plan.eval_source is points[1][1]
    assert plan.eval_target is points[2][1]
    assert plan.eval_t_end == pytest.approx(2 / 3)


@pytest.mark.parametrize("labels, holdout", [([0.0, 1.0], 1), ([0.0, 1.0, 2.0], 0), ([0.0, 1.0, 2.0], 2), ([0.0, 2.0, 1.0], 1)])
def test_leave_one_out_plan_rejects(rng, labels, holdout):
    with pytest.raises(DomainError):
        leave_one_out_plan(_timepoints(rng, labels), holdout)


def test_interpolation_training_covers_every_leg(rng):
    plan = leave_one_out_plan(_timepoints(rng, [0.0, 1.0, 2.0, 3.0]), 1)
    config = small_config(max_epochs=2, val_size=20)
    model, history = train_interpolation(config, plan)
    assert model.dim == 2
    assert len(history) == 2


def test_resampler_draws_rows(rng):
    pts = np.arange(6.0).reshape(3, 2)
    out = resampler(pts)(50, rng)
    assert out.shape == (50, 2)
    assert set(map(tuple, out)) <= set(map(tuple, pts))
