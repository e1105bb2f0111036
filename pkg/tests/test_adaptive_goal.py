import numpy as np
import pandas as pd
import pytest

from agent.AdaptiveGoal import GoalUpdateTrigger, cosine_similarity, kl_divergence, should_update_goal
from network.AutoEncoder import AeBatch, AutoEncoder
from network.gradient_check import autoencoder_gradient_check
from utils.Config import TriggerConfig
from utils.errors import DimensionError, DomainError
from utils.Rng import make_stream


class FixedEncoder:
    """Features looked up by the first observation entry."""

    def __init__(self, features):
        self.features = features

    def encode(self, obs):
        return np.asarray(self.features[int(obs[0])], dtype=np.float64)


class FixedHigh:
    def __init__(self, distributions):
        self.distributions = distributions
        self.calls = 0

    def distribution(self, obs, temperature=1.0):
        self.calls += 1
        return np.asarray(self.distributions[int(obs[0])], dtype=np.float64)


def test_cosine_similarity():
    assert cosine_similarity([1.0, 2.0], [2.0, 4.0]) == pytest.approx(1.0)
    assert cosine_similarity([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)
    assert cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == pytest.approx(-1.0)
    assert cosine_similarity([0.0, 0.0], [1.0, 1.0]) == 1.0
    with pytest.raises(DomainError):
        cosine_similarity([1.0], [1.0, 2.0])


def test_kl_divergence():
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
    expected = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
    assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected)
    # zero mass in p contributes nothing, zero mass in q is floored
    assert np.isfinite(kl_divergence([1.0, 0.0], [0.0, 1.0]))
    with pytest.raises(DomainError):
        kl_divergence([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(DomainError):
        kl_divergence([1.0, 0.0], [0.5, 0.25, 0.25])


CFG = TriggerConfig(eps1=0.9, eps2=0.2)
# obs index -> encoder feature; 0 and 1 are close, 0 and 2 are orthogonal
FEATURES = {0: [1.0, 0.0], 1: [1.0, 0.1], 2: [0.0, 1.0], 3: [0.05, 1.0]}
# obs index -> goal distribution; 2 differs sharply from 0, 3 barely
DISTRIBUTIONS = {0: [0.8, 0.1, 0.1], 1: [0.1, 0.8, 0.1], 2: [0.1, 0.1, 0.8], 3: [0.75, 0.15, 0.1]}


@pytest.mark.parametrize("before,after,fired,stage2", [
    (0, 0, False, False),
    (0, 1, False, False),
    (0, 2, True, True),
    (0, 3, False, True),
])
def test_trigger_fires_only_when_both_gates_open(before, after, fired, stage2):
    high = FixedHigh(DISTRIBUTIONS)
    obs_t = np.array([before, 0.0])
    obs_t1 = np.array([after, 0.0]) if after != before else obs_t.copy()
    decision = should_update_goal(FixedEncoder(FEATURES), high, obs_t, obs_t1, CFG)
    assert decision.fired == fired
    assert (decision.kl is not None) == stage2
    assert high.calls == (2 if stage2 else 0)
    if stage2:
        assert decision.similarity < CFG.eps1
        assert decision.fired == (decision.kl > CFG.eps2)


def test_trigger_counts_and_log(tmp_path):
    path = str(tmp_path / "trigger_log.csv")
    trigger = GoalUpdateTrigger(FixedEncoder(FEATURES), CFG, log_path=path)
    high = FixedHigh(DISTRIBUTIONS)
    rng = make_stream(0, "pairs")
    for _ in range(200):
        a, b = rng.integers(4, size=2)
        trigger.check(high, np.array([a, 0.0]), np.array([b, 1.0]), episode=0, agent=1, t=3)
    assert trigger.calls == 200
    assert trigger.stage2_calls == trigger.stage1_failures
    assert 0 < trigger.fired <= trigger.stage2_calls
    trigger.flush()
    log = pd.read_csv(path)
    assert list(log.columns) == ["episode", "agent", "t", "similarity", "kl", "fired"]
    assert len(log) == 200
    assert log["kl"].isna().sum() == 200 - trigger.stage2_calls
    assert log["fired"].sum() == trigger.fired


def test_trigger_on_a_real_autoencoder_never_fires_on_identical_observations(rng):
    ae = AutoEncoder(10, d_f=4, hidden=8, rng=rng)
    trigger = GoalUpdateTrigger(ae, CFG)
    high = FixedHigh({0: [1.0]})
    obs = rng.random(10)
    obs[0] = 0.0
    assert not trigger.check(high, obs, obs.copy())
    assert trigger.stage2_calls == 0


def dataset(rng, n=256, dim=10):
    obs = rng.random((n, dim))
    next_obs = np.clip(obs + 0.05 * rng.standard_normal((n, dim)), 0.0, 1.0)
    return AeBatch(obs, next_obs, obs[:, 0] - obs[:, 1])


def test_autoencoder_gradients(rng):
    ae = AutoEncoder(10, d_f=4, hidden=12, rng=rng)
    ae.params["sr.omega"] = rng.standard_normal(4)
    assert autoencoder_gradient_check(ae, dataset(rng, n=6)) < 1e-4


def test_autoencoder_pretraining_reduces_both_losses(rng):
    ae = AutoEncoder(10, d_f=6, hidden=32, rng=rng, lr=3e-3)
    data = dataset(rng)
    recon0, sr0 = ae.losses(data)
    history = ae.pretrain(data, make_stream(0, "batches"), max_steps=600, stop_loss=1e-6, batch_size=32,
                          progress=False)
    recon1, sr1 = ae.losses(data)
    assert len(history) == 600
    assert recon1 < 0.5 * recon0
    assert sr1 < sr0


def test_pretraining_stops_at_the_loss_threshold(rng):
    ae = AutoEncoder(10, d_f=6, hidden=32, rng=rng)
    history = ae.pretrain(dataset(rng), make_stream(0, "batches"), max_steps=500, stop_loss=10.0, check_every=5,
                          progress=False)
    assert len(history) == 5


def test_autoencoder_batch_validation():
    with pytest.raises(DomainError):
        AeBatch(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    with pytest.raises(DimensionError):
        AeBatch(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(2))


def test_autoencoder_checkpoint_round_trip(tmp_path, rng):
    ae = AutoEncoder(10, d_f=4, hidden=8, rng=rng)
    data = dataset(rng, n=16)
    ae.ae_update(data)
    path = ae.save(str(tmp_path / "autoencoder.ckpt.json"), {"T": 64})
    restored = AutoEncoder.load(path)
    assert restored.meta["T"] == 64
    assert restored.optimizer.state.t == 1
    assert np.array_equal(restored.encode(data.obs), ae.encode(data.obs))
    assert restored.losses(data) == ae.losses(data)
