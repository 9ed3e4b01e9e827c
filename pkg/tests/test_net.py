import json
import math

import numpy as np
import pytest

from cfmlab.net.codec import (
    git_blob_sha1,
    load_model,
    model_from_dict,
    model_to_dict,
    read_csv,
    save_model,
    write_csv,
)
from cfmlab.net.field import (
    Grads,
    forward,
    forward_batch,
    init_model,
    loss_and_grad,
    regression_loss,
    selu,
    zero_model,
)
from cfmlab.net.optim import clip_grads, global_norm, init_optimizer, optimizer_step
from cfmlab.shared.errors import CheckpointError, ConfigError, NumericError, ShapeError
from cfmlab.shared.rng import make_rng

ARCHITECTURES = [(1, (3,)), (2, (5, 4)), (3, (4, 4, 4)), (2, (6,)), (4, (3, 5))]


def test_init_model_layout():
    model = init_model(2, (64, 64, 64), seed=3)
    assert model.layer_dims == [3, 64, 64, 64, 2]
    assert all(np.all(b == 0) for b in model.biases)
    for w in model.weights:
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / w.shape[0])


def test_init_model_is_seeded():
    a = init_model(2, (16,), seed=7)
    b = init_model(2, (16,), seed=7)
    c = init_model(2, (16,), seed=8)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert not np.array_equal(a.weights[0], c.weights[0])


@pytest.mark.parametrize("d, hidden", [(0, (8,)), (2, ()), (2, (8, 0))])
def test_init_model_rejects_bad_layout(d, hidden):
    with pytest.raises(ConfigError):
        init_model(d, hidden, seed=0)


def test_zero_model_is_the_zero_field(rng):
    model = zero_model(3, (4, 4))
    x = rng.standard_normal((5, 3))
    assert np.array_equal(forward_batch(model, 0.3, x), np.zeros((5, 3)))


def test_forward_single_matches_batch(tiny_model, rng):
    x = rng.standard_normal((4, 2))
    t = rng.random(4)
    batch = forward_batch(tiny_model, t, x)
    for i in range(4):
        np.testing.assert_allclose(forward(tiny_model, t[i], x[i]), batch[i], rtol=1e-12)


def reference_forward(model, t, x):
    h = list(x) + [t]
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
        if k == last:
            h = z
        else:
            h = [1.0507009873554805 * (v if v > 0 else 1.6732632423543772 * (math.exp(v) - 1.0)) for v in z]
    return np.array(h)


@pytest.mark.parametrize("d, hidden", ARCHITECTURES)
def test_forward_matches_reference(d, hidden):
    model = init_model(d, hidden, seed=5)
    rng = make_rng(5, "forward")
    model.biases[0][:] = rng.standard_normal(model.biases[0].shape)
    for _ in range(5):
        x = rng.standard_normal(d)
        t = float(rng.random())
        np.testing.assert_allclose(forward(model, t, x), reference_forward(model, t, x), rtol=1e-10, atol=1e-12)


def test_selu_is_continuous_at_zero():
    assert selu(np.array([0.0]))[0] == 0.0
    assert selu(np.array([-1e-12]))[0] == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    d, hidden = ARCHITECTURES[seed % len(ARCHITECTURES)]
    model = init_model(d, hidden, seed=seed)
    rng = make_rng(seed, "gradcheck")
    x = rng.standard_normal((6, d))
    t = rng.random(6)
    u = rng.standard_normal((6, d))
    w = rng.random(6)
    w = w / w.sum()
    _, grads = loss_and_grad(model, t, x, u, w)
    h = 1e-6
    for k in range(len(model.weights)):
        for params, analytic in ((model.weights[k], grads.weights[k]), (model.biases[k], grads.biases[k])):
            numeric = np.zeros_like(params)
            for idx in np.ndindex(params.shape):
                old = params[idx]
                params[idx] = old + h
                up = regression_loss(model, t, x, u, w)
                params[idx] = old - h
                down = regression_loss(model, t, x, u, w)
                params[idx] = old
                numeric[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_uniform_weights_equal_unweighted_loss(tiny_model, rng):
    x = rng.standard_normal((8, 2))
    u = rng.standard_normal((8, 2))
    plain, _ = loss_and_grad(tiny_model, 0.5, x, u)
    weighted, _ = loss_and_grad(tiny_model, 0.5, x, u, np.full(8, 1 / 8))
    assert plain == pytest.approx(weighted, rel=1e-12)


def test_loss_rejects_bad_inputs(tiny_model):
    x = np.zeros((3, 2))
    with pytest.raises(ShapeError):
        loss_and_grad(tiny_model, 0.5, x, np.zeros((3, 3)))
    x[0, 0] = np.nan
    with pytest.raises(NumericError):
        loss_and_grad(tiny_model, 0.5, x, np.zeros((3, 2)))


def test_first_adamw_step_is_sign_step_with_decay(tiny_model, rng):
    state = init_optimizer(tiny_model, lr=0.01, weight_decay=0.1)
    grads = Grads(
        [rng.standard_normal(w.shape) for w in tiny_model.weights],
        [rng.standard_normal(b.shape) for b in tiny_model.biases],
    )
    new_model, new_state = optimizer_step(tiny_model, state, grads)
    assert new_state.step_count == 1
    for w, g, w_new in zip(tiny_model.weights, grads.weights, new_model.weights):
        expected = w * (1 - 0.01 * 0.1) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(w_new, expected, rtol=1e-12, atol=1e-15)
    # inputs untouched
    assert state.step_count == 0


def test_clip_grads_scales_to_max_norm(tiny_model):
    grads = Grads([np.ones_like(w) for w in tiny_model.weights], [np.ones_like(b) for b in tiny_model.biases])
    clipped = clip_grads(grads, 1.0)
    assert global_norm(clipped) == pytest.approx(1.0)
    assert clip_grads(clipped, 10.0) is clipped


def test_optimizer_rejects_non_finite_gradients(tiny_model):
    state = init_optimizer(tiny_model)
    grads = Grads([np.zeros_like(w) for w in tiny_model.weights], [np.zeros_like(b) for b in tiny_model.biases])
    grads.weights[0][0, 0] = np.inf
    with pytest.raises(NumericError):
        optimizer_step(tiny_model, state, grads)


def test_checkpoint_reads_back_bit_exact(tiny_model, tmp_path):
    path = tmp_path / "checkpoint.json"
    data = save_model(path, tiny_model)
    loaded = load_model(path)
    assert loaded.layer_dims == tiny_model.layer_dims
    assert all(np.array_equal(a, b) for a, b in zip(loaded.weights, tiny_model.weights))
    assert path.read_bytes() == data
    assert data.endswith(b"\n")
    assert json.loads(data)["activation"] == "selu"


def test_checkpoint_bytes_are_deterministic(tmp_path):
    a = save_model(tmp_path / "a.json", init_model(2, (8,), seed=1))
    b = save_model(tmp_path / "b.json", init_model(2, (8,), seed=1))
    assert a == b


def test_checkpoint_errors(tmp_path):
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(CheckpointError):
        load_model(bad)
    with pytest.raises(CheckpointError):
        model_from_dict({"layer_dims": [3, 2]})


def test_model_dict_is_row_major(tiny_model):
    payload = model_to_dict(tiny_model)
    assert payload["weights"][0][:8] == [float(v) for v in tiny_model.weights[0][0]]


def test_git_blob_sha1_matches_git():
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert git_blob_sha1(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_csv_floats_are_repr_exact(tmp_path):
    path = tmp_path / "rows.csv"
    write_csv(path, ("a", "b"), [{"a": 0.1 + 0.2, "b": 3}])
    rows = read_csv(path)
    assert float(rows[0]["a"]) == 0.1 + 0.2
    assert path.read_text(encoding="utf-8").splitlines()[0] == "a,b"


def test_clipping_happens_before_the_moments(tiny_model, rng):
    state = init_optimizer(tiny_model, lr=0.01, weight_decay=0.0, grad_clip_norm=1.0)
    grads = Grads(
        [100.0 * rng.standard_normal(w.shape) for w in tiny_model.weights],
        [100.0 * rng.standard_normal(b.shape) for b in tiny_model.biases],
    )
    clipped = clip_grads(grads, 1.0)
    _, new_state = optimizer_step(tiny_model, state, grads)
    for g, m, v in zip(clipped.weights + clipped.biases, new_state.first_moment.weights + new_state.first_moment.biases, new_state.second_moment.weights + new_state.second_moment.biases):
        np.testing.assert_allclose(m, 0.1 * g, rtol=1e-12)
        np.testing.assert_allclose(v, 0.001 * g * g, rtol=1e-12)
    total = sum(np.sum(m * m) for m in new_state.first_moment.weights + new_state.first_moment.biases)
    assert math.sqrt(total) == pytest.approx(0.1)
