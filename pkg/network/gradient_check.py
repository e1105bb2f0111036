import numpy as np

from network.AutoEncoder import AeBatch, AutoEncoder
from network.GoalMixer import GoalMixer, MixerSpec
from network.Mlp import GradientRecord, MlpSpec, backward, forward_cache, init_params, mlp_forward
from utils.Rng import make_stream


def numeric_gradient(loss_fn, params, h=1e-5, names=None):
    """Central finite differences of a scalar loss over every parameter entry."""
    grads = GradientRecord()
    for name in names or params.names():
        value = params[name]
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            original = value[idx]
            value[idx] = original + h
            plus = loss_fn(params)
            value[idx] = original - h
            minus = loss_fn(params)
            value[idx] = original
            grad[idx] = (plus - minus) / (2.0 * h)
        grads[name] = grad
    return grads


GRADIENT_FLOOR = 1e-4


def relative_error(analytic, numeric, floor=GRADIENT_FLOOR):
    # relative above the floor, absolute (scaled by 1/floor) below it; the floor sits far above
    # central-difference roundoff for O(1) losses at h=1e-5
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in numeric.names():
        if numeric[name].size:
            worst = max(worst, float(relative_error(analytic[name], numeric[name]).max()))
    return worst


def check_gradients(loss_fn, params, analytic, h=1e-5, names=None):
    work = params.copy()
    numeric = numeric_gradient(loss_fn, work, h=h, names=names)
    return max_relative_error(analytic, numeric)


def _away_from_kinks(spec, params, x, margin):
    if spec.hidden_activation != "relu" or spec.n_layers < 2:
        return True
    _, (_, pre_activations, _) = forward_cache(spec, params, x)
    return all(np.abs(z).min() > margin for z in pre_activations[:-1])


def gradient_check(spec, params, trials, rng=None, h=1e-5, kink_margin=1e-3):
    """Worst relative error between backward and central differences on random inputs."""
    rng = rng if rng is not None else make_stream(0, "gradient_check")
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(spec.input_size)
        for _ in range(100):
            if _away_from_kinks(spec, params, x, kink_margin):
                break
            x = rng.standard_normal(spec.input_size)
        upstream = rng.standard_normal(spec.output_size)

        def loss_fn(p):
            return float(np.dot(upstream, mlp_forward(spec, p, x)))

        analytic = backward(spec, params, x, upstream)
        worst = max(worst, check_gradients(loss_fn, params, analytic, h=h))
    return worst


def autoencoder_gradient_check(ae, batch, h=1e-5):
    """Worst error of AutoEncoder.gradients against the joint reconstruction + reward loss."""
    analytic, _, _ = ae.gradients(batch)
    trained = ae.params

    def loss_fn(p):
        ae.params = p
        recon, sr = ae.losses(batch)
        return recon + sr

    try:
        return check_gradients(loss_fn, trained, analytic, h=h)
    finally:
        ae.params = trained


def mixer_gradient_check(mixer, q, states, upstream, h=1e-5):
    """Worst error of the mixer backward pass through hypernetwork and mixing layers, inputs included."""
    analytic, d_q = mixer.backward(q, states, upstream)

    def loss_fn(p):
        return float(np.dot(upstream, mixer.mix(q, states, p)))

    worst = check_gradients(loss_fn, mixer.params, analytic, h=h)
    numeric_q = np.zeros_like(q)
    for idx in np.ndindex(q.shape):
        plus, minus = q.copy(), q.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric_q[idx] = np.dot(upstream, mixer.mix(plus, states) - mixer.mix(minus, states)) / (2.0 * h)
    return max(worst, float(relative_error(d_q, numeric_q).max()))


def family_gradient_checks(seed=0, trials=3, obs_dim=12, n_goals=3, n_actions=5, hidden=(16, 16)):
    """Worst relative error per network family on small randomly initialised instances."""
    rng = make_stream(seed, "gradient_check.families")
    specs = {
        "low": MlpSpec((obs_dim + n_goals,) + tuple(hidden) + (n_actions,)),
        "high": MlpSpec((obs_dim,) + tuple(hidden) + (n_goals,)),
        "actor": MlpSpec((obs_dim,) + tuple(hidden) + (n_actions,), output_head="softmax"),
        "tanh": MlpSpec((obs_dim,) + tuple(hidden) + (1,), hidden_activation="tanh", init="uniform_scaled"),
    }
    results = {name: gradient_check(spec, init_params(spec, rng), trials, rng) for name, spec in specs.items()}

    ae = AutoEncoder(obs_dim, d_f=4, hidden=hidden[0], rng=rng)
    ae.params["sr.omega"] = rng.standard_normal(4)
    batch = AeBatch(rng.random((8, obs_dim)), rng.random((8, obs_dim)), rng.standard_normal(8))
    results["autoencoder"] = autoencoder_gradient_check(ae, batch)

    mixer = GoalMixer(MixerSpec(3, obs_dim, hidden_dim=8, hyper_hidden=hidden[0]), rng)
    worst = 0.0
    for _ in range(trials):
        states = rng.random((4, obs_dim))
        worst = max(worst, mixer_gradient_check(mixer, rng.standard_normal((4, 3)), states, rng.standard_normal(4)))
    results["mixer"] = worst
    return results
