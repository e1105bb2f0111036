import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from agent.Policies import intrinsic_reward
from agent.transitions import HighTransition, JointRecord, LowTransition
from utils.errors import DomainError

EVENTS = ("issued", "achieved", "proactive", "expired", "done")


@dataclass
class Segment:
    agent_id: int
    goal: int
    high: HighTransition
    lows: List[LowTransition]
    achieved_log: List[frozenset]
    event: str

    @property
    def achieved(self):
        return any(self.goal in a for a in self.achieved_log)

    @property
    def intrinsic_rewards(self):
        return [low.intrinsic_reward for low in self.lows]


class SegmentTracker:
    """Low-level steps of one agent under one subgoal, from issuance to the end of the segment."""

    def __init__(self, agent_id, goal, obs, c, T_M, beta):
        if T_M < c:
            raise DomainError("T_M={} is shorter than the goal interval c={}".format(T_M, c))
        self.agent_id = agent_id
        self.goal = goal
        self.start_obs = np.asarray(obs, dtype=np.float64)
        self.c = c
        self.T_M = T_M
        self.beta = beta
        self.lows = []
        self.achieved_log = []
        self.summed_reward = 0.0
        self.event = None

    @property
    def steps(self):
        return len(self.lows)

    @property
    def finished(self):
        return self.event is not None

    def record(self, obs, action, result):
        t = self.steps + 1
        achieved = self.goal in result.achieved_subgoals
        reward = intrinsic_reward(achieved, t, self.T_M, self.beta)
        low = LowTransition(np.asarray(obs, dtype=np.float64), int(action), reward, int(self.goal),
                            result.obs, bool(achieved or result.done))
        self.lows.append(low)
        self.achieved_log.append(frozenset(result.achieved_subgoals))
        self.summed_reward += result.reward
        if result.done:
            self.event = "done"
        elif achieved:
            self.event = "achieved"
        elif t >= self.c:
            self.event = "expired"
        return low

    def interrupt(self):
        self.event = "proactive"

    def end_episode(self):
        self.event = "done"

    def close(self, next_obs):
        high = HighTransition(self.start_obs, int(self.goal), float(self.summed_reward),
                              np.asarray(next_obs, dtype=np.float64), self.steps, self.event == "done")
        return Segment(self.agent_id, self.goal, high, self.lows, self.achieved_log, self.event)


def her_relabel(lows, achieved_log, T_M, beta):
    """Copies of a segment for every other subgoal it reached, truncated at that subgoal's first firing.

    The copy carries the time-decayed intrinsic reward at the firing step and
    0 before it; the firing step ends the relabeled low-level episode.
    """
    if len(lows) != len(achieved_log):
        raise DomainError("{} transitions but {} achievement entries".format(len(lows), len(achieved_log)))
    if not lows:
        return []
    issued = lows[0].goal
    first = {}
    for k, achieved in enumerate(achieved_log):
        for g in sorted(achieved):
            if g != issued and g not in first:
                first[g] = k
    relabeled = []
    for g, k in sorted(first.items()):
        for j in range(k + 1):
            fired = j == k
            relabeled.append(lows[j].relabeled(g, intrinsic_reward(fired, j + 1, T_M, beta), fired or lows[j].done))
    return relabeled


def collect_segment(env, agent_id, goal, low, hrl, rng, epsilon=0.0, trigger=None, high=None,
                    teammate_action=None):
    """Run agent_id under goal until it is achieved, c steps pass, the trigger fires or the episode ends.

    Other agents, if any, act through teammate_action(agent_id, obs) on their turns.
    """
    if env.info.n_agents > 1 and teammate_action is None:
        raise DomainError("a {}-agent env needs teammate_action to fill the other turns".format(env.info.n_agents))
    while env.current_agent != agent_id:
        env.step(env.current_agent, teammate_action(env.current_agent, env.observe(env.current_agent)))
        if env.done:
            raise DomainError("episode ended before agent {} could start a segment".format(agent_id))

    tracker = SegmentTracker(agent_id, goal, env.observe(agent_id), hrl.c, hrl.T_M, hrl.beta_low)
    next_obs = tracker.start_obs
    while not tracker.finished:
        if env.current_agent != agent_id:
            other = env.current_agent
            if env.step(other, teammate_action(other, env.observe(other))).done:
                tracker.end_episode()
            continue
        obs = env.observe(agent_id)
        action = low.low_action(obs, goal, epsilon, rng)
        result = env.step(agent_id, action)
        tracker.record(obs, action, result)
        next_obs = result.obs
        if not tracker.finished and trigger is not None and trigger.check(high, obs, result.obs, agent=agent_id,
                                                                          t=tracker.steps):
            tracker.interrupt()
    return tracker.close(next_obs)


@dataclass
class EpisodeResult:
    episode: int
    seed: int
    rewards: np.ndarray
    length: int
    segments: List[Segment] = field(default_factory=list)
    visits: np.ndarray = None
    trace: list = field(default_factory=list)

    @property
    def total_reward(self):
        return float(self.rewards.sum())

    @property
    def intrinsic_mean(self):
        values = [r for s in self.segments for r in s.intrinsic_rewards]
        return float(np.mean(values)) if values else 0.0

    def success_counts(self, n_goals):
        issued = np.zeros(n_goals, dtype=np.int64)
        achieved = np.zeros(n_goals, dtype=np.int64)
        for s in self.segments:
            issued[s.goal] += 1
            achieved[s.goal] += int(s.achieved)
        return issued, achieved


class HierarchicalRollout:
    """Plays whole episodes with every agent running its own segments in turn order.

    Goals are issued at the start of an agent cycle to every agent without one,
    so all agents hold a goal while a cycle is played. ``choose_goal(agent_id,
    obs, previous)`` receives the agent's last closed segment (or None).
    """

    def __init__(self, env, lows, choose_goal, hrl, rng, epsilon=0.0, trigger=None, highs=None,
                 on_segment=None, on_step=None, on_cycle=None):
        self.log = logging.getLogger(self.__class__.__name__)
        self.env = env
        self.lows = lows
        self.choose_goal = choose_goal
        self.hrl = hrl
        self.rng = rng
        self.epsilon = epsilon
        self.trigger = trigger
        self.highs = highs
        self.on_segment = on_segment
        self.on_step = on_step
        self.on_cycle = on_cycle
        self.total_steps = 0

    def _epsilon(self):
        return self.epsilon(self.total_steps) if callable(self.epsilon) else self.epsilon

    def _close(self, result, tracker, next_obs, turn):
        segment = tracker.close(next_obs)
        if segment.lows:
            result.segments.append(segment)
            result.trace.append((result.episode, turn, segment.agent_id, segment.goal, segment.event))
            if self.on_segment is not None:
                self.on_segment(segment)
        return segment

    def run_episode(self, seed, episode=0):
        env = self.env
        n = env.info.n_agents
        obs, state = env.reset(seed)
        result = EpisodeResult(episode=episode, seed=int(seed), rewards=np.zeros(n), length=0,
                               visits=np.zeros((n,) + tuple(env.grid_shape), dtype=np.int64))
        trackers = [None] * n
        previous = [None] * n
        turn = 0
        while not env.done:
            for i in range(n):
                if trackers[i] is None:
                    o = env.observe(i)
                    goal = self.choose_goal(i, o, previous[i])
                    trackers[i] = SegmentTracker(i, goal, o, self.hrl.c, self.hrl.T_M, self.hrl.beta_low)
                    result.trace.append((episode, turn, i, goal, "issued"))
            cycle_obs = np.stack([env.observe(i) for i in range(n)])
            cycle_state = env.normalized_state()
            goals = tuple(t.goal for t in trackers)
            cycle_reward = 0.0

            for i in range(n):
                if env.done:
                    break
                tracker = trackers[i]
                o = env.observe(i)
                action = self.lows[i].low_action(o, tracker.goal, self._epsilon(), self.rng)
                step = env.step(i, action)
                turn += 1
                self.total_steps += 1
                result.length += 1
                result.rewards[i] += step.reward
                cycle_reward += step.reward
                x, y = env.agent_position(i)
                result.visits[i, y, x] += 1
                tracker.record(o, action, step)
                if not tracker.finished and self.trigger is not None and self.trigger.check(
                        self.highs[i], o, step.obs, episode=episode, agent=i, t=tracker.steps):
                    tracker.interrupt()
                if tracker.finished:
                    previous[i] = self._close(result, tracker, step.obs, turn)
                    trackers[i] = None
                if self.on_step is not None:
                    self.on_step(self.total_steps)

            if env.done:
                for j in range(n):
                    if trackers[j] is not None:
                        trackers[j].end_episode()
                        previous[j] = self._close(result, trackers[j], env.observe(j), turn)
                        trackers[j] = None
            if self.on_cycle is not None:
                self.on_cycle(JointRecord(cycle_obs, goals, float(cycle_reward), cycle_state,
                                          env.normalized_state(), np.stack([env.observe(i) for i in range(n)]),
                                          bool(env.done)))
        return result
