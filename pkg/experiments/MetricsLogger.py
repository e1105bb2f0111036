import logging
import os

import numpy as np
import pandas as pd

HEAD_COLUMNS = ["step", "episode", "reward_mean", "reward_min", "intrinsic_reward_mean"]
TAIL_COLUMNS = ["loss_low", "loss_high", "loss_mix", "epsilon", "temperature"]
A2C_COLUMNS = ["loss_value", "loss_policy", "entropy"]


def metric_columns(n_goals, extra_columns=()):
    return HEAD_COLUMNS + ["success_g{}".format(g) for g in range(n_goals)] + TAIL_COLUMNS + list(extra_columns)


class MetricsLogger:
    """Aggregates episodes and losses over a window and appends one CSV row per flush."""

    def __init__(self, path, n_goals, extra_columns=(), writer=None, tag="train"):
        self.log = logging.getLogger(self.__class__.__name__)
        self.path = path
        self.n_goals = n_goals
        self.columns = metric_columns(n_goals, extra_columns)
        self.writer = writer
        self.tag = tag
        self.rows = []
        if path is not None:
            directory = os.path.dirname(path)
            if directory:
                os.makedirs(directory, exist_ok=True)
            if os.path.exists(path):
                os.remove(path)
        self._reset_window()

    def _reset_window(self):
        self.rewards = []
        self.intrinsic = []
        self.issued = np.zeros(self.n_goals, dtype=np.int64)
        self.achieved = np.zeros(self.n_goals, dtype=np.int64)
        self.losses = {}

    @property
    def pending(self):
        return len(self.rewards)

    def add_episode(self, reward, intrinsic=None, issued=None, achieved=None):
        self.rewards.append(float(reward))
        if intrinsic is not None:
            self.intrinsic.append(float(intrinsic))
        if issued is not None:
            self.issued += np.asarray(issued, dtype=np.int64)
            self.achieved += np.asarray(achieved, dtype=np.int64)

    def add_loss(self, name, value):
        self.losses.setdefault(name, []).append(float(value))

    def flush(self, step, episode, **scalars):
        if not self.rewards:
            return None
        row = dict.fromkeys(self.columns, np.nan)
        row.update(step=int(step), episode=int(episode), reward_mean=float(np.mean(self.rewards)),
                   reward_min=float(np.min(self.rewards)))
        if self.intrinsic:
            row["intrinsic_reward_mean"] = float(np.mean(self.intrinsic))
        for g in range(self.n_goals):
            if self.issued[g]:
                row["success_g{}".format(g)] = self.achieved[g] / float(self.issued[g])
        for name, values in self.losses.items():
            row[name] = float(np.mean(values))
        for name, value in scalars.items():
            if name in row:
                row[name] = value
        self.rows.append(row)
        if self.path is not None:
            pd.DataFrame([row], columns=self.columns).to_csv(self.path, mode="a", index=False,
                                                             header=len(self.rows) == 1)
        if self.writer is not None:
            for name, value in row.items():
                if name not in ("step", "episode") and value is not None and np.isfinite(value):
                    self.writer.add_scalar("{}/{}".format(self.tag, name), value, step)
        self._reset_window()
        return row

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=self.columns)
