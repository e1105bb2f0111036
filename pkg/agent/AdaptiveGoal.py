import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from agent.Policies import goal_distribution
from utils.errors import DomainError

Q_FLOOR = 1e-12
PROBABILITY_TOLERANCE = 1e-6
TRIGGER_LOG_COLUMNS = ["episode", "agent", "t", "similarity", "kl", "fired"]


def cosine_similarity(f1, f2):
    """Cosine of the angle between two feature vectors; a zero vector counts as unchanged (1.0)."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise DomainError("feature shapes differ: {} vs {}".format(f1.shape, f2.shape))
    n1, n2 = np.linalg.norm(f1), np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        return 1.0
    return float(np.clip(np.dot(f1, f2) / (n1 * n2), -1.0, 1.0))


def _check_probability(name, p):
    if p.ndim != 1 or p.size == 0:
        raise DomainError("{} must be a nonempty vector".format(name))
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or abs(p.sum() - 1.0) > PROBABILITY_TOLERANCE:
        raise DomainError("{} is not a probability vector (sum {:.6f})".format(name, p.sum()))


def kl_divergence(p, q):
    """KL(p || q) in nats with q floored at 1e-12."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_probability("p", p)
    _check_probability("q", q)
    if p.shape != q.shape:
        raise DomainError("distributions differ in length: {} vs {}".format(p.size, q.size))
    return max(0.0, float(np.sum(rel_entr(p, np.maximum(q, Q_FLOOR)))))


@dataclass
class TriggerDecision:
    fired: bool
    similarity: float
    kl: float = None


def should_update_goal(ae, high, obs_t, obs_t1, trigger_cfg):
    """Two-stage gate: feature similarity must drop below eps1 before the policy KL is consulted."""
    if np.array_equal(obs_t, obs_t1):
        return TriggerDecision(False, 1.0)
    similarity = cosine_similarity(ae.encode(obs_t), ae.encode(obs_t1))
    if similarity >= trigger_cfg.eps1:
        return TriggerDecision(False, similarity)
    kl = kl_divergence(high.distribution(obs_t, trigger_cfg.temperature),
                       high.distribution(obs_t1, trigger_cfg.temperature))
    return TriggerDecision(kl > trigger_cfg.eps2, similarity, kl)


class GoalUpdateTrigger:
    """Proactive subgoal refresh with decision counting and an optional CSV log."""

    def __init__(self, ae, trigger_cfg, log_path=None):
        self.log = logging.getLogger(self.__class__.__name__)
        self.ae = ae
        self.cfg = trigger_cfg
        self.log_path = log_path
        self.rows = []
        self.calls = 0
        self.stage1_failures = 0
        self.stage2_calls = 0
        self.fired = 0

    def check(self, high, obs_t, obs_t1, episode=0, agent=0, t=0):
        decision = should_update_goal(self.ae, high, obs_t, obs_t1, self.cfg)
        self.calls += 1
        if decision.similarity < self.cfg.eps1:
            self.stage1_failures += 1
        if decision.kl is not None:
            self.stage2_calls += 1
        self.fired += int(decision.fired)
        if self.log_path is not None:
            self.rows.append((episode, agent, t, decision.similarity, decision.kl, decision.fired))
        return decision.fired

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=TRIGGER_LOG_COLUMNS)

    def flush(self):
        """Append buffered decisions to the CSV log."""
        if self.log_path is None or not self.rows:
            return
        header = not os.path.exists(self.log_path)
        self.to_frame().to_csv(self.log_path, mode="a", header=header, index=False)
        self.rows = []
