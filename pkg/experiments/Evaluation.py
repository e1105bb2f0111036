import json
import logging
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from agent.AdaptiveGoal import GoalUpdateTrigger
from agent.SegmentCollector import HierarchicalRollout
from envs import make_env
from utils.Rng import make_stream

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["episode", "t", "agent", "goal", "event"]
# Left turns in place in both grid worlds
STAY_ACTION = 1


class StayPutPolicy:
    """Reference low-level policy that only turns on the spot."""

    def low_action(self, obs, goal, epsilon, rng):
        return STAY_ACTION


class FlatPolicy:
    """Runs a goal-free actor-critic through the hierarchical rollout; goals are ignored."""

    def __init__(self, model):
        self.model = model

    def low_action(self, obs, goal, epsilon, rng):
        return self.model.act(obs, rng, greedy=True)


@dataclass
class EvalReport:
    mean_reward: float
    min_reward: float
    success_rate: List[float]
    mean_length: float
    heatmap: np.ndarray
    episode_rewards: List[float] = field(default_factory=list)
    issued: List[int] = field(default_factory=list)

    def coverage(self):
        """Distinct cells visited by any agent."""
        return int((self.heatmap.sum(axis=0) > 0).sum())

    def to_dict(self):
        return {
            "mean_reward": self.mean_reward,
            "min_reward": self.min_reward,
            "success_rate": list(self.success_rate),
            "mean_length": self.mean_length,
            "heatmap": self.heatmap.tolist(),
            "episode_rewards": list(self.episode_rewards),
            "issued": list(self.issued),
            "coverage": self.coverage(),
        }

    @staticmethod
    def from_dict(data):
        return EvalReport(data["mean_reward"], data["min_reward"], data["success_rate"], data["mean_length"],
                          np.asarray(data["heatmap"], dtype=np.int64), data.get("episode_rewards", []),
                          data.get("issued", []))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @staticmethod
    def load(path):
        with open(path) as f:
            return EvalReport.from_dict(json.load(f))


def episode_seeds(seed, episodes):
    return [int(s) for s in make_stream(seed, "eval.seeds").integers(0, 2 ** 31 - 1, size=episodes)]


def _eval_episode(env_config, hrl, lows, highs, ae, trigger_cfg, episode_seed, episode):
    env = make_env(env_config)
    rng = make_stream(episode_seed, "eval.policy")
    n_goals = env.info.subgoal_count
    if highs is not None:
        def choose_goal(i, obs, previous):
            return highs[i].select_subgoal(obs, rng, mode="greedy")
    else:
        def choose_goal(i, obs, previous):
            return int(rng.integers(n_goals))
    trigger = GoalUpdateTrigger(ae, trigger_cfg) if ae is not None and highs is not None else None
    rollout = HierarchicalRollout(env, lows, choose_goal, hrl, rng, epsilon=hrl.low_eval_epsilon, trigger=trigger,
                                  highs=highs)
    return rollout.run_episode(episode_seed, episode=episode)


def evaluate(env_config, hrl, lows, episodes, seed, highs=None, ae=None, trigger_cfg=None, n_jobs=1,
             trace_path=None, flat=False):
    """Greedy evaluation over independently seeded episodes.

    lows holds one low-level policy per agent (a StayPutPolicy or FlatPolicy
    works too). Without highs, goals are drawn uniformly, which measures the
    low level alone. Passing ae turns on proactive goal updates.
    """
    seeds = episode_seeds(seed, episodes)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_eval_episode)(env_config, hrl, lows, highs, ae, trigger_cfg, s, k) for k, s in enumerate(seeds))

    rewards = np.array([r.total_reward for r in results])
    n_goals = make_env(env_config).info.subgoal_count
    issued = np.zeros(n_goals, dtype=np.int64)
    achieved = np.zeros(n_goals, dtype=np.int64)
    for r in results:
        if flat:
            reached = set().union(*[a for s in r.segments for a in s.achieved_log])
            issued += 1
            achieved += np.array([g in reached for g in range(n_goals)], dtype=np.int64)
        else:
            i, a = r.success_counts(n_goals)
            issued += i
            achieved += a
    success = [achieved[g] / float(issued[g]) if issued[g] else 0.0 for g in range(n_goals)]
    report = EvalReport(mean_reward=float(rewards.mean()), min_reward=float(rewards.min()), success_rate=success,
                        mean_length=float(np.mean([r.length for r in results])),
                        heatmap=np.sum([r.visits for r in results], axis=0), episode_rewards=rewards.tolist(),
                        issued=issued.tolist())
    if trace_path is not None:
        write_trace(trace_path, [row for r in results for row in r.trace])
    log.debug("evaluated {} episodes: mean {:.3f}, min {:.3f}".format(episodes, report.mean_reward, report.min_reward))
    return report


def write_trace(path, rows):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    pd.DataFrame(rows, columns=TRACE_COLUMNS).to_csv(path, index=False)
    return path
