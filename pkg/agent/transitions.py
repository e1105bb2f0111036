from dataclasses import dataclass, fields, replace
from typing import Tuple

import numpy as np


class Record:
    """Transition records serialize to plain dicts for buffer snapshots."""

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data):
        values = {}
        for f in fields(cls):
            value = data[f.name]
            if f.name in cls.array_fields:
                value = np.asarray(value, dtype=np.float64)
            elif f.name in cls.tuple_fields:
                value = tuple(value)
            values[f.name] = value
        return cls(**values)


@dataclass
class LowTransition(Record):
    obs: np.ndarray
    action: int
    intrinsic_reward: float
    goal: int
    next_obs: np.ndarray
    done: bool

    array_fields = ("obs", "next_obs")
    tuple_fields = ()

    def relabeled(self, goal, reward, done):
        return replace(self, goal=goal, intrinsic_reward=reward, done=done)


@dataclass
class HighTransition(Record):
    obs: np.ndarray
    goal: int
    summed_reward: float
    next_obs: np.ndarray
    segment_len: int
    done: bool

    array_fields = ("obs", "next_obs")
    tuple_fields = ()


@dataclass
class JointRecord(Record):
    """One macro step of all agents: per-agent observations and goals plus global states."""
    obs: np.ndarray
    goals: Tuple[int, ...]
    reward: float
    state: np.ndarray
    next_state: np.ndarray
    next_obs: np.ndarray
    done: bool

    array_fields = ("obs", "state", "next_state", "next_obs")
    tuple_fields = ("goals",)


def stack(batch, name, dtype=np.float64):
    return np.asarray([getattr(t, name) for t in batch], dtype=dtype)
