import math

import numpy as np
import pytest

from cfmlab.eval import (
    MetricReport,
    evaluate_model,
    leave_one_out_eval,
    log_partition_details,
    log_partition_estimate,
    mmd,
    model_reference,
    objective_variance,
    oracle_reference,
    path_energy_and_npe,
    sb_error_curve,
    sb_ground_truth_sample,
    w2_squared,
)
from cfmlab.eval.metrics import normalized_path_energy
from cfmlab.integrate import IntegratorSettings
from cfmlab.net.field import zero_model
from cfmlab.paths import PathSpec
from cfmlab.shared.batch import standard_normal_logpdf
from cfmlab.shared.errors import DomainError
from cfmlab.trainer import TrainConfig, leave_one_out_plan


def constant_field(v):
    v = np.asarray(v, dtype=np.float64)
    return lambda t, x: np.broadcast_to(v, x.shape).copy()


def test_w2_of_identical_sets_is_zero(rng):
    a = rng.standard_normal((30, 2))
    assert w2_squared(a, a[::-1].copy()) == 0.0


def test_w2_of_translation(rng):
    a = rng.standard_normal((40, 3))
    shift = np.array([1.0, -2.0, 0.5])
    assert w2_squared(a, a + shift) == pytest.approx(float(shift @ shift), rel=1e-10)


def test_w2_matches_brute_force_and_is_a_metric(rng, brute_force_w2):
    a, b, c = (rng.standard_normal((6, 2)) for _ in range(3))
    assert w2_squared(a, b) == pytest.approx(brute_force_w2(a, b), abs=1e-10)
    assert w2_squared(a, b) == pytest.approx(w2_squared(b, a), abs=1e-12)
    ab, bc, ac = (math.sqrt(w2_squared(x, y)) for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9


def test_weighted_w2_between_point_masses():
    a = np.array([[0.0], [1.0]])
    b = np.array([[3.0]])
    assert w2_squared(a, b, np.array([0.25, 0.75])) == pytest.approx(0.25 * 9 + 0.75 * 4)


def test_zero_field_has_unit_npe(rng):
    pe, npe = path_energy_and_npe(zero_model(2, (4,)), rng.standard_normal((10, 2)), 2.0, IntegratorSettings("rk4", 5))
    assert pe == 0.0
    assert npe == 1.0


def test_straight_line_flow_has_zero_npe(rng):
    shift = [3.0, 4.0]
    pe, npe = path_energy_and_npe(constant_field(shift), rng.standard_normal((10, 2)), 25.0, IntegratorSettings("euler", 3))
    assert pe == pytest.approx(25.0)
    assert npe == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DomainError):
        normalized_path_energy(1.0, 0.0)


def test_mmd_properties(rng):
    a = rng.standard_normal((20, 2))
    assert mmd(a, a) == pytest.approx(0.0, abs=1e-12)
    b = rng.standard_normal((15, 2)) + 1.0
    assert mmd(a, b) == pytest.approx(mmd(a[rng.permutation(20)], b[::-1]), abs=1e-12)
    x = np.array([[0.0, 0.0]])
    y = np.array([[1.0, 1.0]])
    assert mmd(x, y, bandwidth_sq=2.0) == pytest.approx(2.0 - 2.0 * math.exp(-0.5))
    with pytest.raises(DomainError):
        mmd(a, b, bandwidth_sq=0.0)


def test_evaluate_model_reports_each_integrator(rng):
    source = rng.standard_normal((50, 2))
    target = source + np.array([1.0, 0.0])
    settings = [IntegratorSettings("euler", 4), IntegratorSettings("rk4", 4), IntegratorSettings("dopri5")]
    reports = evaluate_model(constant_field([1.0, 0.0]), source, target, 1.0, settings, mmd_bandwidth_sq=2.0)
    assert [r.integrator for r in reports] == ["euler", "rk4", "dopri5"]
    assert [r.n_steps for r in reports] == [4, 4, None]
    assert reports[0].nfe_mean == 4.0
    assert reports[1].nfe_mean == 16.0
    for r in reports:
        assert r.w2_sq == pytest.approx(0.0, abs=1e-12)
        assert r.npe == pytest.approx(0.0, abs=1e-12)
        assert r.mmd == pytest.approx(0.0, abs=1e-12)


def test_report_dict_keys():
    report = MetricReport(0.1, 2.0, 0.5, 8.0, integrator="euler", n_steps=8)
    assert report.to_dict() == {
        "w2_sq": 0.1,
        "pe": 2.0,
        "npe": 0.5,
        "nfe_mean": 8.0,
        "mmd": None,
        "integrator": "euler",
        "n_steps": 8,
    }


def test_objective_variance_vanishes_for_point_masses(rng):
    config = TrainConfig(PathSpec("icfm", 0.0), batch_size=16)
    x0 = np.array([[0.0, 1.0]])
    x1 = np.array([[2.0, -1.0]])
    ref = oracle_reference(config.path, x0, x1, [1.0])
    value = objective_variance(
        config, lambda n, g: np.repeat(x0, n, axis=0), lambda n, g: np.repeat(x1, n, axis=0), ref, 64, rng
    )
    assert value == pytest.approx(0.0, abs=1e-20)


def test_ot_coupling_lowers_objective_variance(rng):
    points = rng.standard_normal((16, 2)) * 3.0

    def fixed(n, gen):
        return points.copy()

    ref = model_reference(zero_model(2, (4,)))
    ot = objective_variance(TrainConfig(PathSpec("otcfm", 0.0), coupling="exact_ot", batch_size=16), fixed, fixed, ref, 160, rng)
    independent = objective_variance(TrainConfig(PathSpec("icfm", 0.0), batch_size=16), fixed, fixed, ref, 160, rng)
    assert ot == 0.0
    assert independent > 1.0


def test_objective_variance_rejects_empty_request(rng):
    config = TrainConfig(PathSpec("icfm", 0.1))
    with pytest.raises(DomainError):
        objective_variance(config, None, None, None, 0, rng)


def test_bridge_samples_at_endpoints(rng):
    q0 = rng.standard_normal((5, 2))
    q1 = rng.standard_normal((5, 2)) + 4.0
    start = sb_ground_truth_sample(q0, q1, 1.0, 0.0, 50, rng)
    end = sb_ground_truth_sample(q0, q1, 1.0, 1.0, 50, rng)
    assert set(map(tuple, start)) <= set(map(tuple, q0))
    assert set(map(tuple, end)) <= set(map(tuple, q1))


def test_bridge_between_singletons_is_brownian(rng):
    q0 = np.array([[0.0, 0.0]])
    q1 = np.array([[2.0, 4.0]])
    draws = sb_ground_truth_sample(q0, q1, 1.0, 0.5, 100_000, rng)
    np.testing.assert_allclose(draws.mean(axis=0), [1.0, 2.0], atol=0.01)
    np.testing.assert_allclose(draws.std(axis=0), 0.5, rtol=0.02)
    with pytest.raises(DomainError):
        sb_ground_truth_sample(q0, q1, 0.0, 0.5, 10, rng)


def test_error_curve_covers_interior_times(rng):
    q0 = rng.standard_normal((30, 2))
    q1 = rng.standard_normal((30, 2)) + 1.0
    curve = sb_error_curve(zero_model(2, (4,)), q0, q1, 1.0, n_samples=40, settings=IntegratorSettings("euler", 10), rng=rng)
    assert len(curve.points) == 18
    assert all(0.0 < t < 1.0 for t, _ in curve.points)
    assert all(err >= 0.0 for _, err in curve.points)
    assert curve.mean == pytest.approx(np.mean([err for _, err in curve.points]))
    with pytest.raises(DomainError):
        sb_error_curve(zero_model(2, (4,)), q0, q1, 1.0, n_timepoints=2)


def test_leave_one_out_eval_of_a_static_series(rng):
    cloud = rng.standard_normal((25, 2))
    plan = leave_one_out_plan([(0.0, cloud), (1.0, cloud.copy()), (2.0, cloud.copy())], 1)
    value = leave_one_out_eval(zero_model(2, (4,)), plan, IntegratorSettings("euler", 2), rng)
    assert value == pytest.approx(0.0, abs=1e-12)


def test_log_partition_of_identity_flow(rng):
    model = zero_model(3, (4,))
    settings = IntegratorSettings("euler", 2)
    assert log_partition_estimate(model, standard_normal_logpdf, 100, settings, 3, rng) == pytest.approx(0.0, abs=1e-12)
    doubled = log_partition_details(model, lambda x: math.log(2.0) + standard_normal_logpdf(x), 100, settings, 3, rng)
    assert doubled.log_z == pytest.approx(math.log(2.0), abs=1e-12)
    assert doubled.ess == pytest.approx(100.0)
    with pytest.raises(DomainError):
        log_partition_estimate(model, standard_normal_logpdf, 0, settings, 3, rng)


def test_log_partition_of_a_scaling_flow(rng):
    rate = 0.5
    d = 2

    def field(t, x):
        return rate * x

    def log_r(x):
        return -0.5 * np.sum(x * x, axis=1) * math.exp(-2 * rate)

    expected = 0.5 * d * math.log(2 * math.pi) + rate * d
    estimate = log_partition_estimate(field, log_r, 200, IntegratorSettings("rk4", 50), d, rng)
    assert estimate == pytest.approx(expected, abs=1e-5)
