import logging
from dataclasses import dataclass, field

import numpy as np

from utils.errors import DomainError, LifecycleError, OrderingError
from utils.Rng import make_stream


@dataclass(frozen=True)
class EnvInfo:
    n_agents: int
    action_count: int
    obs_dim: int
    state_shape: tuple
    subgoal_count: int
    max_steps: int

    def __post_init__(self):
        for name in ("n_agents", "action_count", "obs_dim", "subgoal_count", "max_steps"):
            if getattr(self, name) < 1:
                raise DomainError("EnvInfo.{} must be positive".format(name))
        if any(s < 1 for s in self.state_shape):
            raise DomainError("EnvInfo.state_shape must be positive")

    @property
    def state_dim(self):
        return int(np.prod(self.state_shape))


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    achieved_subgoals: frozenset = field(default_factory=frozenset)


class AgentCursor:
    """Fixed cyclic turn order over agent ids."""

    def __init__(self, order):
        self.order = list(order)
        self.index = 0

    @property
    def current(self):
        return self.order[self.index]

    @property
    def at_cycle_end(self):
        return self.index == len(self.order) - 1

    def advance(self):
        self.index = (self.index + 1) % len(self.order)

    def reset(self):
        self.index = 0


class AbstractEnv:
    name = "abstract"
    subgoal_names = ()
    action_names = ()

    def __init__(self, config):
        self.config = config
        self.log = logging.getLogger(self.__class__.__name__)
        self.info = self.make_info()
        self.cursor = AgentCursor(range(self.info.n_agents))
        self.state = None
        self.done = False
        self.seed = None

    def make_info(self):
        raise NotImplementedError

    def reset(self, seed):
        self.seed = int(seed)
        self.state = self._reset(make_stream(self.seed, self.name))
        self.cursor.reset()
        self.done = False
        return [self.observe(i) for i in range(self.info.n_agents)], self.global_state()

    def step(self, agent_id, action):
        if self.state is None:
            raise LifecycleError("step called before reset")
        if self.done:
            raise LifecycleError("episode is done; call reset before stepping again")
        if agent_id != self.cursor.current:
            raise OrderingError("agent {} acted out of turn, expected agent {}".format(agent_id, self.cursor.current))
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)) \
                or not 0 <= action < self.info.action_count:
            raise DomainError("action {!r} outside [0, {})".format(action, self.info.action_count))

        prev = self.snapshot()
        reward, done = self._step(agent_id, int(action))
        nxt = self.snapshot()
        achieved = frozenset(g for g in range(self.info.subgoal_count)
                             if self.subgoal_achieved(agent_id, g, prev, nxt))
        self.done = bool(done)
        self.cursor.advance()
        return StepResult(self.observe(agent_id), float(reward), self.done, achieved)

    def load_state(self, state):
        """Install a crafted or dumped state and start a fresh turn cycle."""
        self.state = state.copy()
        self.cursor.reset()
        self.done = False

    @property
    def current_agent(self):
        return self.cursor.current

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, agent_id, action):
        raise NotImplementedError

    def observe(self, agent_id):
        raise NotImplementedError

    def global_state(self):
        raise NotImplementedError

    def normalized_state(self):
        raise NotImplementedError

    def snapshot(self):
        return self.state.copy()

    def subgoal_achieved(self, agent_id, g, prev, nxt):
        raise NotImplementedError

    def agent_position(self, agent_id):
        raise NotImplementedError

    @property
    def grid_shape(self):
        raise NotImplementedError

    def render_ascii(self, state=None):
        raise NotImplementedError
