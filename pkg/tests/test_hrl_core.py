import numpy as np
import pandas as pd
import pytest

from agent.A2C import ActorCritic, A2CRollout, n_step_returns
from agent.AdaptiveGoal import GoalUpdateTrigger
from agent.Policies import (HighLevelPolicy, LowLevelPolicy, choose_subgoal, epsilon_greedy, goal_distribution,
                            goal_input, intrinsic_reward)
from agent.ReplayBuffer import ReplayBuffer
from agent.SegmentCollector import HierarchicalRollout, SegmentTracker, collect_segment, her_relabel
from agent.td_learning import high_td_loss, low_td_loss, train_high_batch, train_low_batch
from agent.transitions import HighTransition, LowTransition
from envs.AbstractEnv import StepResult
from network.gradient_check import check_gradients
from utils.Config import HrlConfig, TriggerConfig
from utils.errors import DomainError
from utils.Rng import make_stream


def hrl(c=8, **kwargs):
    cfg = HrlConfig(c=c, hidden_sizes=[16, 16], **kwargs)
    cfg.resolve("doorkey")
    return cfg


class RandomLow:
    def __init__(self, n_actions):
        self.n_actions = n_actions

    def low_action(self, obs, goal, epsilon, rng):
        return int(rng.integers(self.n_actions))


def expected_reward(achieved, t, T_M, beta):
    return 1.0 - (beta * t) / T_M if achieved else 0.0


def test_intrinsic_reward_oracle():
    rng = make_stream(0, "oracle")
    for _ in range(10000):
        T_M = int(rng.integers(1, 200))
        t = int(rng.integers(0, T_M + 1))
        beta = float(rng.random())
        achieved = bool(rng.random() < 0.5)
        assert intrinsic_reward(achieved, t, T_M, beta) == expected_reward(achieved, t, T_M, beta)


def test_intrinsic_reward_examples():
    assert intrinsic_reward(True, 0, 16, 0.5) == 1.0
    assert intrinsic_reward(True, 16, 16, 0.5) == 0.5
    assert intrinsic_reward(True, 8, 16, 0.5) == 0.75
    assert intrinsic_reward(False, 3, 16, 0.5) == 0.0
    with pytest.raises(DomainError):
        intrinsic_reward(True, 17, 16, 0.5)
    with pytest.raises(DomainError):
        intrinsic_reward(True, -1, 16, 0.5)


def test_goal_selection(rng):
    q = np.array([0.1, 2.0, -1.0])
    assert choose_subgoal(q, rng, mode="greedy") == 1
    assert np.isclose(goal_distribution(q).sum(), 1.0)
    cold = goal_distribution(q, temperature=0.01)
    assert cold[1] > 0.999
    draws = [choose_subgoal(q, rng, temperature=1.0) for _ in range(500)]
    assert set(draws) <= {0, 1, 2} and draws.count(1) > draws.count(2)
    with pytest.raises(DomainError):
        choose_subgoal(q, rng, mode="argmin")
    with pytest.raises(DomainError):
        goal_distribution(q, temperature=0.0)


def test_epsilon_greedy_extremes(rng):
    q = np.array([0.0, 5.0, 1.0])
    assert all(epsilon_greedy(q, 0.0, rng) == 1 for _ in range(20))
    assert len({epsilon_greedy(q, 1.0, rng) for _ in range(200)}) == 3


def test_goal_input_appends_one_hot():
    x = goal_input(np.array([0.5, 0.25]), 1, 3)
    assert np.array_equal(x, [0.5, 0.25, 0.0, 1.0, 0.0])
    with pytest.raises(DomainError):
        goal_input(np.zeros(2), 3, 3)


def low(obs=2, goal=0, action=0, done=False):
    return LowTransition(np.full(2, obs, dtype=np.float64), action, 0.0, goal, np.full(2, obs + 1.0), done)


def test_her_relabels_each_other_achieved_goal_up_to_its_first_firing():
    lows = [low(k) for k in range(4)]
    achieved_log = [frozenset(), frozenset({1}), frozenset({1, 2}), frozenset()]
    copies = her_relabel(lows, achieved_log, T_M=8, beta=0.5)
    by_goal = {g: [c for c in copies if c.goal == g] for g in (1, 2)}
    assert len(by_goal[1]) == 2 and len(by_goal[2]) == 3
    assert [c.intrinsic_reward for c in by_goal[1]] == [0.0, 1.0 - 0.5 * 2 / 8]
    assert [c.intrinsic_reward for c in by_goal[2]] == [0.0, 0.0, 1.0 - 0.5 * 3 / 8]
    assert [c.done for c in by_goal[2]] == [False, False, True]
    assert not any(c.goal == 0 for c in copies)
    # originals are untouched
    assert all(l.goal == 0 and l.intrinsic_reward == 0.0 for l in lows)


def test_her_ignores_the_issued_goal_and_empty_segments():
    lows = [low(0), low(1)]
    assert her_relabel(lows, [frozenset({0}), frozenset()], 8, 0.5) == []
    assert her_relabel([], [], 8, 0.5) == []
    with pytest.raises(DomainError):
        her_relabel(lows, [frozenset()], 8, 0.5)


def replay_segment_rewards(segment, T_M, beta):
    """Recompute every relabeled reward of a segment from its achievement log alone."""
    expected = []
    issued = segment.goal
    reached = sorted({g for a in segment.achieved_log for g in a} - {issued})
    for g in reached:
        first = next(k for k, a in enumerate(segment.achieved_log) if g in a)
        for k in range(first + 1):
            expected.append((g, expected_reward(k == first, k + 1, T_M, beta)))
    return expected


def test_her_matches_an_independent_replay_on_collected_segments(trashgrid):
    cfg = hrl(c=32)
    goal_rng = make_stream(1, "goals")
    segments = []
    rollout = HierarchicalRollout(trashgrid, [RandomLow(6)] * 3, lambda i, o, p: int(goal_rng.integers(4)), cfg,
                                  make_stream(1, "policy"), on_segment=segments.append)
    episode = 0
    while len(segments) < 1000:
        rollout.run_episode(seed=episode, episode=episode)
        episode += 1
    relabeled_total = 0
    for segment in segments:
        copies = her_relabel(segment.lows, segment.achieved_log, cfg.T_M, cfg.beta_low)
        assert [(c.goal, c.intrinsic_reward) for c in copies] == replay_segment_rewards(segment, cfg.T_M,
                                                                                        cfg.beta_low)
        relabeled_total += len(copies)
    assert relabeled_total > 0


def step_result(achieved=(), done=False, reward=0.0):
    return StepResult(np.zeros(2), reward, done, frozenset(achieved))


def test_segment_tracker_events():
    tracker = SegmentTracker(0, goal=1, obs=np.zeros(2), c=3, T_M=3, beta=0.5)
    tracker.record(np.zeros(2), 0, step_result())
    tracker.record(np.zeros(2), 0, step_result(achieved={1}, reward=2.0))
    assert tracker.event == "achieved"
    segment = tracker.close(np.ones(2))
    assert segment.achieved
    assert segment.intrinsic_rewards == [0.0, 1.0 - 0.5 * 2 / 3]
    assert segment.high.summed_reward == 2.0 and segment.high.segment_len == 2 and not segment.high.done

    tracker = SegmentTracker(0, goal=1, obs=np.zeros(2), c=2, T_M=2, beta=0.5)
    tracker.record(np.zeros(2), 0, step_result())
    tracker.record(np.zeros(2), 0, step_result())
    assert tracker.event == "expired"

    tracker = SegmentTracker(0, goal=1, obs=np.zeros(2), c=4, T_M=4, beta=0.5)
    tracker.record(np.zeros(2), 0, step_result(done=True))
    assert tracker.event == "done" and tracker.close(np.zeros(2)).high.done

    with pytest.raises(DomainError):
        SegmentTracker(0, 0, np.zeros(2), c=8, T_M=4, beta=0.5)


def test_collect_segment_single_agent(doorkey, rng):
    cfg = hrl(c=5)
    doorkey.reset(3)
    segment = collect_segment(doorkey, 0, 0, RandomLow(7), cfg, rng)
    assert 1 <= len(segment.lows) <= 5
    assert segment.event in ("achieved", "expired", "done")
    assert all(l.goal == 0 for l in segment.lows)


def test_collect_segment_needs_teammates_in_multi_agent_envs(trashgrid, rng):
    trashgrid.reset(0)
    with pytest.raises(DomainError):
        collect_segment(trashgrid, 1, 0, RandomLow(6), hrl(c=4), rng)
    segment = collect_segment(trashgrid, 1, 0, RandomLow(6), hrl(c=4), rng, teammate_action=lambda i, o: 1)
    assert segment.agent_id == 1 and 1 <= len(segment.lows) <= 4


def test_rollout_issues_goals_per_cycle_and_emits_joint_records(trashgrid):
    cycles = []
    goal_rng = make_stream(2, "goals")
    rollout = HierarchicalRollout(trashgrid, [RandomLow(6)] * 3, lambda i, o, p: int(goal_rng.integers(4)),
                                  hrl(c=32), make_stream(2, "policy"), on_cycle=cycles.append)
    result = rollout.run_episode(seed=7)
    assert result.length == rollout.total_steps == 128 * 3
    assert len(cycles) == 128
    assert all(len(c.goals) == 3 and c.obs.shape == (3, 58) and c.state.shape == (100,) for c in cycles)
    assert cycles[-1].done and not any(c.done for c in cycles[:-1])
    assert [row[2] for row in result.trace[:3]] == [0, 1, 2]
    assert all(row[4] == "issued" for row in result.trace[:3])
    assert result.visits.sum() == result.length
    issued, achieved = result.success_counts(4)
    assert issued.sum() == len(result.segments) and (achieved <= issued).all()


def test_rollout_is_deterministic(doorkey):
    def run():
        goal_rng = make_stream(5, "goals")
        rollout = HierarchicalRollout(doorkey, [RandomLow(7)], lambda i, o, p: int(goal_rng.integers(3)), hrl(),
                                      make_stream(5, "policy"))
        return [rollout.run_episode(seed=s, episode=s) for s in range(3)]
    a, b = run(), run()
    assert [r.trace for r in a] == [r.trace for r in b]
    assert all(np.array_equal(x.rewards, y.rewards) for x, y in zip(a, b))


class Alternating:
    """Encoder and high level whose outputs flip on every call, so both trigger gates always open."""

    def __init__(self, first, second):
        self.values = (np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64))
        self.calls = 0

    def _next(self):
        self.calls += 1
        return self.values[self.calls % 2]

    def encode(self, obs):
        return self._next()

    def distribution(self, obs, temperature=1.0):
        return self._next()


def test_adaptive_rollout_refreshes_goals_proactively(doorkey, tmp_path):
    path = str(tmp_path / "trigger_log.csv")
    trigger = GoalUpdateTrigger(Alternating([1.0, 0.0], [0.0, 1.0]), TriggerConfig(eps1=0.9, eps2=0.2),
                                log_path=path)
    goal_rng = make_stream(4, "goals")
    cfg = hrl()
    rollout = HierarchicalRollout(doorkey, [RandomLow(7)], lambda i, o, p: int(goal_rng.integers(3)), cfg,
                                  make_stream(4, "policy"), trigger=trigger,
                                  highs=[Alternating([0.8, 0.1, 0.1], [0.1, 0.1, 0.8])])
    result = rollout.run_episode(seed=3)
    proactive = [s for s in result.segments if s.event == "proactive"]
    assert proactive
    assert all(len(s.lows) < cfg.c for s in proactive)
    trigger.flush()
    log = pd.read_csv(path)
    assert log["fired"].sum() == trigger.fired == len(proactive)


def test_without_adaptation_goals_end_only_on_achievement_expiry_or_episode_end(doorkey):
    goal_rng = make_stream(6, "goals")
    cfg = hrl()
    rollout = HierarchicalRollout(doorkey, [RandomLow(7)], lambda i, o, p: int(goal_rng.integers(3)), cfg,
                                  make_stream(6, "policy"))
    segments = [s for seed in range(5) for s in rollout.run_episode(seed=seed, episode=seed).segments]
    assert {s.event for s in segments} <= {"achieved", "expired", "done"}
    for s in segments:
        assert 1 <= len(s.lows) <= cfg.c
        if s.event == "expired":
            assert len(s.lows) == cfg.c and not s.achieved
        if s.event == "achieved":
            assert s.goal in s.achieved_log[-1]
            assert not any(s.goal in a for a in s.achieved_log[:-1])


def test_replay_buffer_evicts_oldest_first(rng):
    buffer = ReplayBuffer(3, rng)
    for k in range(5):
        buffer.add(low(k))
    assert len(buffer) == 3
    assert [t.obs[0] for t in buffer.ordered()] == [2.0, 3.0, 4.0]
    assert len(buffer.sample(10)) == 10
    with pytest.raises(DomainError):
        ReplayBuffer(3, rng).sample(1)


def test_replay_buffer_snapshot(tmp_path):
    buffer = ReplayBuffer(4, make_stream(0, "buffer"))
    for k in range(6):
        buffer.add(HighTransition(np.full(3, k, dtype=np.float64), k % 2, float(k), np.zeros(3), 4, k == 5))
    buffer.snapshot(str(tmp_path / "snap"))
    restored = ReplayBuffer.load_snapshot(str(tmp_path / "snap"), make_stream(0, "buffer"))
    assert [t.summed_reward for t in restored.ordered()] == [2.0, 3.0, 4.0, 5.0]
    assert restored.ordered()[-1].done
    assert [t.goal for t in restored.sample(8)] == [t.goal for t in buffer.sample(8)]


def small_low(rng):
    return LowLevelPolicy.build(6, 3, 4, hrl(), rng)


def test_low_td_gradients_match_finite_differences(rng):
    policy = small_low(rng)
    batch = [LowTransition(rng.random(6), int(rng.integers(4)), float(rng.random()), int(rng.integers(3)),
                           rng.random(6), bool(rng.random() < 0.3)) for _ in range(8)]
    _, grads, targets = low_td_loss(policy, batch, 0.9)
    assert targets.shape == (8,)
    error = check_gradients(lambda p: low_td_loss(policy, batch, 0.9, params=p)[0], policy.params, grads)
    assert error < 1e-4


def test_high_td_bootstraps_from_the_target_network(rng):
    high = HighLevelPolicy.build(5, 3, hrl(), rng)
    batch = [HighTransition(rng.random(5), 1, 2.0, rng.random(5), 4, True)]
    _, _, targets = high_td_loss(high, batch, 0.99)
    assert targets[0] == 2.0
    batch[0].done = False
    _, _, targets = high_td_loss(high, batch, 0.5)
    assert targets[0] == pytest.approx(2.0 + 0.5 * high.target_q_values(batch[0].next_obs).max())


def test_low_training_reduces_td_loss_on_a_fixed_batch(rng):
    policy = small_low(rng)
    batch = [LowTransition(rng.random(6), int(rng.integers(4)), 1.0, int(rng.integers(3)), rng.random(6), True)
             for _ in range(16)]
    first = low_td_loss(policy, batch, 0.9)[0]
    for _ in range(500):
        train_low_batch(policy, batch, 0.9, target_update=10 ** 6)
    assert low_td_loss(policy, batch, 0.9)[0] < 0.2 * first


def test_high_training_overfits_a_terminal_batch(rng):
    high = HighLevelPolicy.build(5, 3, hrl(), rng, lr=5e-3)
    batch = [HighTransition(rng.random(5), int(rng.integers(3)), float(rng.random()), rng.random(5), 8, True)
             for _ in range(8)]
    losses = [train_high_batch(high, batch, 0.99, target_update=10 ** 6) for _ in range(500)]
    assert losses[0] > 1e-2
    assert min(losses) < 1e-3


def test_policy_checkpoint_round_trip(tmp_path, rng):
    policy = small_low(rng)
    policy.apply(low_td_loss(policy, [LowTransition(np.ones(6), 1, 1.0, 2, np.ones(6), True)], 0.9)[1], 100)
    path = policy.save(str(tmp_path / "low.ckpt.json"), {"T": 64})
    restored = LowLevelPolicy.load(path)
    assert restored.n_goals == 3 and restored.updates == 1 and restored.meta["T"] == 64
    assert restored.params.allclose(policy.params)
    assert restored.optimizer.state.t == 1
    x = np.ones(6)
    assert np.array_equal(restored.goal_q_values(x, 0), policy.goal_q_values(x, 0))


def test_n_step_returns_cut_at_episode_ends():
    returns = n_step_returns(np.array([1.0, 1.0, 1.0]), np.array([0.0, 1.0, 0.0]), bootstrap=10.0, gamma=0.5)
    assert np.allclose(returns, [1.5, 1.0, 6.0])


def test_actor_critic_losses_and_update(trashgrid, rng):
    model = ActorCritic.build(58, 6, hrl(), rng, lr=1e-3)
    rollout = A2CRollout(trashgrid, model, 0.99, 5, make_stream(0, "a2c"), make_stream(0, "a2c.seeds"))
    obs, actions, returns = rollout.collect()
    assert obs.shape == (15, 58) and actions.shape == returns.shape == (15,)
    advantages = returns - model.value(obs)
    _, entropy, grads = model.policy_loss(obs, actions, advantages)
    assert 0.0 < entropy <= np.log(6) + 1e-9
    error = check_gradients(lambda p: model.policy_loss(obs, actions, advantages, params=p)[0], model.actor_params,
                            grads)
    assert error < 1e-4
    _, value_grads = model.value_loss(obs, returns)
    assert check_gradients(lambda p: model.value_loss(obs, returns, params=p)[0], model.critic_params,
                           value_grads) < 1e-4
    losses = model.update(obs, actions, returns)
    assert set(losses) == {"loss_policy", "loss_value", "entropy"}


def test_actor_critic_entropy_falls_when_one_action_pays(rng):
    model = ActorCritic.build(8, 4, hrl(), rng, lr=1e-2)
    obs = np.tile(rng.random(8), (16, 1))
    actions = np.array([0] * 8 + [1] * 8)
    returns = np.array([1.0] * 8 + [-1.0] * 8)
    entropies = [model.update(obs, actions, returns)["entropy"] for _ in range(300)]
    assert np.mean(entropies[-10:]) < np.mean(entropies[:10])
    assert entropies[-1] < 0.5 * entropies[0]
    assert model.act(obs[0], rng, greedy=True) == 0


def test_a2c_rollout_reports_finished_episodes(doorkey):
    model = ActorCritic.build(147, 7, hrl(), make_stream(0, "init"))
    rollout = A2CRollout(doorkey, model, 0.99, 16, make_stream(0, "a2c"), make_stream(0, "a2c.seeds"))
    for _ in range(5):
        rollout.collect()
    episodes = rollout.pop_episodes()
    assert episodes and all(length <= 64 for _, length, _ in episodes)
    assert rollout.pop_episodes() == []
