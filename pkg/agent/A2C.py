import logging

import numpy as np

from agent.Policies import build_spec
from network.Adam import Adam, AdamState
from network.Mlp import MlpSpec, backward, init_params, mlp_forward
from utils.checkpoint import load_checkpoint, save_checkpoint

CHECKPOINT_KIND = "a2c"
PROB_FLOOR = 1e-12


def n_step_returns(rewards, dones, bootstrap, gamma):
    """Discounted returns of a transition sequence, cut at episode ends."""
    returns = np.zeros(len(rewards))
    running = bootstrap
    for t in reversed(range(len(rewards))):
        running = rewards[t] + gamma * running * (1.0 - dones[t])
        returns[t] = running
    return returns


class ActorCritic:
    """Flat advantage actor-critic over primitive actions: a softmax actor and a scalar critic."""

    def __init__(self, actor_spec, critic_spec, rng=None, params=None, lr=7e-4, entropy_coef=0.01, value_coef=0.5):
        self.log = logging.getLogger(self.__class__.__name__)
        self.actor_spec = actor_spec
        self.critic_spec = critic_spec
        if params is None:
            params = init_params(actor_spec, rng).prefixed("actor").merge(init_params(critic_spec, rng).prefixed("critic"))
        self.actor_params = params.select("actor")
        self.critic_params = params.select("critic")
        self.actor_params.check_spec(actor_spec)
        self.critic_params.check_spec(critic_spec)
        self.actor_optimizer = Adam(lr)
        self.critic_optimizer = Adam(lr)
        self.entropy_coef = entropy_coef
        self.value_coef = value_coef

    @classmethod
    def build(cls, obs_dim, n_actions, hrl, rng, lr=7e-4, entropy_coef=0.01, value_coef=0.5):
        return cls(build_spec(obs_dim, n_actions, hrl, "softmax"), build_spec(obs_dim, 1, hrl), rng=rng, lr=lr,
                   entropy_coef=entropy_coef, value_coef=value_coef)

    @property
    def params(self):
        return self.actor_params.prefixed("actor").merge(self.critic_params.prefixed("critic"))

    def policy(self, obs, params=None):
        return mlp_forward(self.actor_spec, params if params is not None else self.actor_params, obs)

    def value(self, obs, params=None):
        out = mlp_forward(self.critic_spec, params if params is not None else self.critic_params, obs)
        return out[..., 0]

    def act(self, obs, rng, greedy=False):
        p = self.policy(obs)
        if greedy:
            return int(np.argmax(p))
        return int(rng.choice(len(p), p=p / p.sum()))

    def value_loss(self, obs, returns, params=None):
        params = params if params is not None else self.critic_params
        err = self.value(obs, params) - returns
        loss = self.value_coef * float(np.mean(err ** 2))
        grads = backward(self.critic_spec, params, obs, (self.value_coef * 2.0 * err / len(err))[:, None])
        return loss, grads

    def policy_loss(self, obs, actions, advantages, params=None):
        """Policy-gradient loss with an entropy bonus; returns (loss, mean entropy, gradients)."""
        params = params if params is not None else self.actor_params
        p = self.policy(obs, params)
        n = len(actions)
        rows = np.arange(n)
        logp = np.log(np.maximum(p, PROB_FLOOR))
        entropy = -np.sum(p * logp, axis=1)
        loss = float(-np.mean(advantages * logp[rows, actions]) - self.entropy_coef * np.mean(entropy))

        upstream = self.entropy_coef * (logp + 1.0) / n
        upstream[rows, actions] -= advantages / (np.maximum(p[rows, actions], PROB_FLOOR) * n)
        grads = backward(self.actor_spec, params, obs, upstream)
        return loss, float(np.mean(entropy)), grads

    def update(self, obs, actions, returns):
        advantages = returns - self.value(obs)
        loss_policy, entropy, actor_grads = self.policy_loss(obs, actions, advantages)
        loss_value, critic_grads = self.value_loss(obs, returns)
        self.actor_params = self.actor_optimizer.step(self.actor_params, actor_grads.check_finite())
        self.critic_params = self.critic_optimizer.step(self.critic_params, critic_grads.check_finite())
        return {"loss_policy": loss_policy, "loss_value": loss_value, "entropy": entropy}

    def parameter_count(self):
        return self.params.count()

    def save(self, path, meta=None):
        spec = {"actor": self.actor_spec.to_dict(), "critic": self.critic_spec.to_dict()}
        meta = dict(meta or {}, actor_adam=self.actor_optimizer.state.to_dict(),
                    critic_adam=self.critic_optimizer.state.to_dict())
        return save_checkpoint(path, CHECKPOINT_KIND, spec, self.params, meta)

    @classmethod
    def load(cls, path, lr=7e-4, entropy_coef=0.01, value_coef=0.5):
        document = load_checkpoint(path, CHECKPOINT_KIND)
        model = cls(MlpSpec.from_dict(document["spec"]["actor"]), MlpSpec.from_dict(document["spec"]["critic"]),
                    params=document["params"], lr=lr, entropy_coef=entropy_coef, value_coef=value_coef)
        meta = document["meta"]
        if "actor_adam" in meta:
            model.actor_optimizer.state = AdamState.from_dict(meta["actor_adam"])
            model.critic_optimizer.state = AdamState.from_dict(meta["critic_adam"])
        return model


class A2CRollout:
    """Steps every agent with one shared actor-critic and yields n-step training batches."""

    def __init__(self, env, model, gamma, n_steps, rng, seed_rng):
        self.env = env
        self.model = model
        self.gamma = gamma
        self.n_steps = n_steps
        self.rng = rng
        self.seed_rng = seed_rng
        self.total_steps = 0
        self.episodes = []
        self._start_episode()

    def _start_episode(self):
        self.env.reset(int(self.seed_rng.integers(2 ** 31 - 1)))
        n = self.env.info.n_agents
        self.episode_rewards = np.zeros(n)
        self.episode_length = 0
        self.episode_achieved = set()

    def collect(self):
        """Play n_steps turns per agent; returns (obs, actions, returns) stacked over agents."""
        env = self.env
        n = env.info.n_agents
        traces = [{"obs": [], "actions": [], "rewards": [], "dones": []} for _ in range(n)]
        for _ in range(self.n_steps * n):
            i = env.current_agent
            obs = env.observe(i)
            action = self.model.act(obs, self.rng)
            result = env.step(i, action)
            self.total_steps += 1
            self.episode_rewards[i] += result.reward
            self.episode_length += 1
            self.episode_achieved |= result.achieved_subgoals
            trace = traces[i]
            trace["obs"].append(obs)
            trace["actions"].append(action)
            trace["rewards"].append(result.reward)
            trace["dones"].append(float(result.done))
            if result.done:
                # a finished episode also closes the open sequences of the other agents
                for j in range(n):
                    if j != i and traces[j]["dones"]:
                        traces[j]["dones"][-1] = 1.0
                self.episodes.append((self.episode_rewards.sum(), self.episode_length, frozenset(self.episode_achieved)))
                self._start_episode()

        obs, actions, returns = [], [], []
        for i, trace in enumerate(traces):
            if not trace["obs"]:
                continue
            last_done = trace["dones"][-1] > 0.0
            bootstrap = 0.0 if last_done else float(self.model.value(env.observe(i)))
            returns.append(n_step_returns(np.array(trace["rewards"]), np.array(trace["dones"]), bootstrap, self.gamma))
            obs.extend(trace["obs"])
            actions.extend(trace["actions"])
        return np.stack(obs), np.asarray(actions, dtype=np.int64), np.concatenate(returns)

    def pop_episodes(self):
        finished, self.episodes = self.episodes, []
        return finished
