import numpy as np

from agent.AbstractPolicy import AbstractPolicy
from network.Mlp import MlpSpec, softmax
from utils.errors import DomainError

GOAL_MODES = ("sample", "greedy")


def build_spec(in_dim, out_dim, hrl, output_head="linear"):
    return MlpSpec((in_dim, *hrl.hidden_sizes, out_dim), hrl.hidden_activation, output_head, hrl.init)


def intrinsic_reward(achieved, t, T_M, beta):
    """Time-decayed reward for reaching a subgoal t steps after it was issued."""
    if t < 0 or t > T_M:
        raise DomainError("intrinsic reward clock t={} outside [0, {}]".format(t, T_M))
    if not achieved:
        return 0.0
    return 1.0 - beta * t / float(T_M)


def goal_distribution(q, temperature=1.0):
    if temperature <= 0:
        raise DomainError("temperature must be > 0, got {}".format(temperature))
    return softmax(np.asarray(q, dtype=np.float64) / temperature)


def choose_subgoal(q, rng, mode="sample", temperature=1.0):
    if mode == "greedy":
        return int(np.argmax(q))
    if mode == "sample":
        p = goal_distribution(q, temperature)
        return int(rng.choice(len(p), p=p))
    raise DomainError("goal selection mode must be one of {}, got {!r}".format(GOAL_MODES, mode))


def epsilon_greedy(q, epsilon, rng):
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(len(q)))
    return int(np.argmax(q))


def one_hot(index, size):
    if not 0 <= index < size:
        raise DomainError("subgoal {} outside [0, {})".format(index, size))
    v = np.zeros(size)
    v[index] = 1.0
    return v


def goal_input(obs, goal, n_goals):
    """Observation with the goal appended as a one-hot block."""
    return np.concatenate([np.asarray(obs, dtype=np.float64), one_hot(goal, n_goals)])


class HighLevelPolicy(AbstractPolicy):
    kind = "high"

    @classmethod
    def build(cls, obs_dim, n_goals, hrl, rng, lr=5e-4):
        return cls(build_spec(obs_dim, n_goals, hrl), rng=rng, lr=lr)

    @property
    def n_goals(self):
        return self.spec.output_size

    def distribution(self, obs, temperature=1.0):
        return goal_distribution(self.q_values(obs), temperature)

    def select_subgoal(self, obs, rng, mode="sample", temperature=1.0):
        return choose_subgoal(self.q_values(obs), rng, mode, temperature)


class LowLevelPolicy(AbstractPolicy):
    kind = "low"

    def __init__(self, spec, n_goals, rng=None, params=None, lr=1e-3):
        super().__init__(spec, rng=rng, params=params, lr=lr)
        if not 1 <= n_goals < spec.input_size:
            raise DomainError("{} goals do not fit a {}-wide input".format(n_goals, spec.input_size))
        self.n_goals = n_goals
        self.meta["n_goals"] = n_goals

    @classmethod
    def build(cls, obs_dim, n_goals, n_actions, hrl, rng, lr=1e-3):
        return cls(build_spec(obs_dim + n_goals, n_actions, hrl), n_goals, rng=rng, lr=lr)

    @classmethod
    def init_kwargs(cls, meta):
        return {"n_goals": meta["n_goals"]}

    @property
    def obs_dim(self):
        return self.spec.input_size - self.n_goals

    def low_input(self, obs, goal):
        return goal_input(obs, goal, self.n_goals)

    def goal_q_values(self, obs, goal):
        return self.q_values(self.low_input(obs, goal))

    def low_action(self, obs, goal, epsilon, rng):
        return epsilon_greedy(self.goal_q_values(obs, goal), epsilon, rng)
