import numpy as np
import pytest

from network.Adam import Adam, AdamState, adam_step
from network.gradient_check import check_gradients, family_gradient_checks, gradient_check, relative_error
from network.Mlp import (GradientRecord, MlpSpec, ParameterSet, backward, init_params, mlp_forward, orthogonal,
                         parameter_count, softmax)
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.errors import ConsistencyError, DependencyError, DimensionError, NumericError, SchemaError
from utils.Rng import derive_seed, make_stream


def test_streams_are_reproducible_and_named():
    a = make_stream(3, "low.policy").random(5)
    b = make_stream(3, "low.policy").random(5)
    c = make_stream(3, "high.policy").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(make_stream(1, "x")) == derive_seed(make_stream(1, "x"))


def test_forward_shapes_single_and_batch(rng):
    spec = MlpSpec((6, 8, 3))
    params = init_params(spec, rng)
    assert mlp_forward(spec, params, np.ones(6)).shape == (3,)
    assert mlp_forward(spec, params, np.ones((5, 6))).shape == (5, 3)
    assert parameter_count(spec) == 6 * 8 + 8 + 8 * 3 + 3 == params.count()


def test_softmax_head_is_a_distribution(rng):
    spec = MlpSpec((4, 5, 6), output_head="softmax")
    p = mlp_forward(spec, init_params(spec, rng), rng.standard_normal((10, 4)))
    assert np.allclose(p.sum(axis=1), 1.0)
    assert p.min() > 0.0


def test_forward_rejects_wrong_width(rng):
    spec = MlpSpec((4, 3))
    with pytest.raises(DimensionError):
        mlp_forward(spec, init_params(spec, rng), np.ones(5))


def test_non_finite_input_names_the_layer(rng):
    spec = MlpSpec((3, 4, 2))
    with pytest.raises(NumericError) as info:
        mlp_forward(spec, init_params(spec, rng), np.array([np.nan, 0.0, 0.0]))
    assert info.value.layer == 0


def test_softmax_of_empty_vector():
    with pytest.raises(DimensionError):
        softmax(np.array([]))


def test_orthogonal_init_has_orthonormal_columns(rng):
    w = orthogonal((8, 4), rng)
    assert np.allclose(w.T @ w, np.eye(4), atol=1e-10)


def test_parameter_set_rejects_foreign_shapes(rng):
    spec = MlpSpec((4, 3))
    params = init_params(spec, rng)
    params["W0"] = np.zeros((3, 4))
    with pytest.raises(DimensionError):
        params.check_spec(spec)


def test_backward_of_linear_layer_matches_closed_form(rng):
    spec = MlpSpec((3, 2))
    params = init_params(spec, rng)
    x = rng.standard_normal(3)
    upstream = np.array([1.0, -2.0])
    grads = backward(spec, params, x, upstream)
    assert np.allclose(grads["W0"], np.outer(x, upstream))
    assert np.allclose(grads["b0"], upstream)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("activation,head,init", [
    ("relu", "linear", "orthogonal"),
    ("tanh", "linear", "uniform_scaled"),
    ("relu", "softmax", "orthogonal"),
    ("tanh", "softmax", "orthogonal"),
])
def test_gradient_check_on_mlps(seed, activation, head, init):
    rng = make_stream(seed, "mlp.gradcheck")
    spec = MlpSpec((5, 7, 6, 4), activation, head, init)
    assert gradient_check(spec, init_params(spec, rng), trials=2, rng=rng) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_every_network_family_passes_the_gradient_check(seed):
    results = family_gradient_checks(seed=seed, trials=1)
    assert set(results) == {"low", "high", "actor", "tanh", "autoencoder", "mixer"}
    assert max(results.values()) < 1e-4


def test_relative_error_is_relative_down_to_small_gradients():
    assert relative_error(1e-3, 1.01e-3) == pytest.approx(0.01 / 1.01)
    assert relative_error(1e-9, 2e-9) == pytest.approx(1e-5)
    assert relative_error(100.0, 101.0) == pytest.approx(1.0 / 101.0)


def test_one_percent_error_on_a_small_gradient_is_caught():
    params = ParameterSet({"w": np.array([0.3, -0.2, 0.5])})
    slope = np.array([1e-3, -2e-3, 5e-4])

    def loss_fn(p):
        return float(np.dot(slope, p["w"]) + 2.0)

    assert check_gradients(loss_fn, params, GradientRecord({"w": slope})) < 1e-6
    assert check_gradients(loss_fn, params, GradientRecord({"w": slope * 1.01})) > 1e-3


def test_adam_first_step_moves_by_lr_against_the_gradient():
    params = ParameterSet({"w": np.array([1.0, -1.0])})
    grads = GradientRecord({"w": np.array([0.5, -3.0])})
    new, state = adam_step(params, grads, lr=0.1, t=1)
    # bias correction makes the first step lr * sign(g), up to eps
    assert np.allclose(new["w"], [0.9, -0.9], atol=1e-6)
    assert state.t == 1
    assert np.allclose(state.m["w"], [0.05, -0.3])


def test_adam_under_a_constant_gradient_steps_by_lr_times_sign():
    optimizer = Adam(0.01)
    params = ParameterSet({"w": np.array([1.0, -1.0, 0.5])})
    g = np.array([0.5, -3.0, 1e-3])
    for _ in range(200):
        before = params["w"].copy()
        params = optimizer.step(params, GradientRecord({"w": g}))
        assert np.allclose(before - params["w"], 0.01 * np.sign(g), rtol=1e-4, atol=0.0)
    assert optimizer.state.t == 200


def test_adam_is_bit_deterministic():
    def run():
        optimizer = Adam(1e-3)
        params = ParameterSet({"w": np.ones((3, 4)), "b": np.zeros(4)})
        rng = make_stream(8, "adam")
        for _ in range(50):
            params = optimizer.step(params, GradientRecord({"w": rng.standard_normal((3, 4)),
                                                            "b": rng.standard_normal(4)}))
        return params
    a, b = run(), run()
    assert all(np.array_equal(a[name], b[name]) for name in a.names())


def test_adam_requires_a_gradient_for_every_parameter():
    params = ParameterSet({"a": np.zeros(2), "b": np.zeros(2)})
    with pytest.raises(ConsistencyError):
        adam_step(params, GradientRecord({"a": np.ones(2)}), lr=0.1)


def test_adam_state_survives_serialization():
    optimizer = Adam(0.01)
    params = ParameterSet({"w": np.ones(3)})
    for _ in range(3):
        params = optimizer.step(params, GradientRecord({"w": np.arange(3.0)}))
    restored = AdamState.from_dict(optimizer.state.to_dict())
    assert restored.t == 3
    assert np.array_equal(restored.m["w"], optimizer.state.m["w"])
    assert np.array_equal(restored.v["w"], optimizer.state.v["w"])


def test_checkpoint_round_trip(tmp_path, rng):
    spec = MlpSpec((4, 6, 2))
    params = init_params(spec, rng)
    path = save_checkpoint(str(tmp_path / "net.ckpt.json"), "low", spec.to_dict(), params, {"T": 64})
    document = load_checkpoint(path, "low")
    assert document["params"].allclose(params)
    assert MlpSpec.from_dict(document["spec"]) == spec
    assert document["meta"]["T"] == 64


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(DependencyError):
        load_checkpoint(str(tmp_path / "missing.ckpt.json"))
    spec = MlpSpec((2, 2))
    path = save_checkpoint(str(tmp_path / "a.ckpt.json"), "high", spec.to_dict(), init_params(spec, rng))
    with pytest.raises(SchemaError):
        load_checkpoint(path, "mixer")
    with open(path) as f:
        text = f.read()
    with open(path, "w") as f:
        f.write(text.replace("gmah-ckpt-1", "gmah-ckpt-0"))
    with pytest.raises(SchemaError):
        load_checkpoint(path)
