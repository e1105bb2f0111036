import numpy as np

from agent.Policies import goal_input
from agent.transitions import stack
from network.Mlp import GradientRecord, backward, mlp_forward
from utils.errors import ConsistencyError, DomainError


def _check_batch(batch):
    if not batch:
        raise DomainError("TD update on an empty batch")


def _selected_upstream(shape, columns, values):
    upstream = np.zeros(shape)
    upstream[np.arange(shape[0]), columns] = values
    return upstream


def q_td_loss(policy, x, actions, rewards, next_x, dones, gamma, params=None):
    """Mean squared one-step TD error against the policy's target network, and its gradients."""
    params = params if params is not None else policy.params
    q = mlp_forward(policy.spec, params, x)
    rows = np.arange(len(actions))
    bootstrap = policy.target_q_values(next_x).max(axis=1)
    targets = rewards + gamma * bootstrap * (1.0 - dones)
    err = q[rows, actions] - targets
    loss = float(np.mean(err ** 2))
    grads = backward(policy.spec, params, x, _selected_upstream(q.shape, actions, 2.0 * err / len(err)))
    return loss, grads, targets


def low_td_loss(low, batch, gamma, params=None):
    _check_batch(batch)
    x = np.stack([goal_input(t.obs, t.goal, low.n_goals) for t in batch])
    next_x = np.stack([goal_input(t.next_obs, t.goal, low.n_goals) for t in batch])
    return q_td_loss(low, x, stack(batch, "action", np.int64), stack(batch, "intrinsic_reward"), next_x,
                     stack(batch, "done"), gamma, params)


def train_low_batch(low, batch, gamma, target_update):
    loss, grads, _ = low_td_loss(low, batch, gamma)
    low.apply(grads, target_update)
    return loss


def high_td_loss(high, batch, gamma, params=None):
    # one discount per segment, whatever its length
    _check_batch(batch)
    return q_td_loss(high, stack(batch, "obs"), stack(batch, "goal", np.int64), stack(batch, "summed_reward"),
                     stack(batch, "next_obs"), stack(batch, "done"), gamma, params)


def train_high_batch(high, batch, gamma, target_update):
    loss, grads, _ = high_td_loss(high, batch, gamma)
    high.apply(grads, target_update)
    return loss


def mix_td_loss(mixer, highs, batch, gamma, high_params=None, mixer_params=None):
    """Joint goal TD loss through the mixer.

    Returns the loss, the mixer gradients and one gradient record per agent's
    high-level network. The bootstrap takes each agent's argmax goal under its
    target network, mixed by the target mixer.
    """
    _check_batch(batch)
    if len(highs) != mixer.spec.n_agents:
        raise DomainError("{} high-level networks for a {}-agent mixer".format(len(highs), mixer.spec.n_agents))
    high_params = high_params if high_params is not None else [h.params for h in highs]
    obs, next_obs = stack(batch, "obs"), stack(batch, "next_obs")
    goals = stack(batch, "goals", np.int64)
    rewards, dones = stack(batch, "reward"), stack(batch, "done")
    states, next_states = stack(batch, "state"), stack(batch, "next_state")
    rows = np.arange(len(batch))

    tables = [mlp_forward(h.spec, p, obs[:, i]) for i, (h, p) in enumerate(zip(highs, high_params))]
    chosen = np.stack([tables[i][rows, goals[:, i]] for i in range(len(highs))], axis=1)
    q_tot = mixer.mix(chosen, states, mixer_params)

    next_best = np.stack([h.target_q_values(next_obs[:, i]).max(axis=1) for i, h in enumerate(highs)], axis=1)
    targets = rewards + gamma * (1.0 - dones) * mixer.mix(next_best, next_states, mixer.target_params)

    err = q_tot - targets
    loss = float(np.mean(err ** 2))
    mixer_grads, d_q = mixer.backward(chosen, states, 2.0 * err / len(err), mixer_params)
    high_grads = [backward(h.spec, p, obs[:, i], _selected_upstream(tables[i].shape, goals[:, i], d_q[:, i]))
                  for i, (h, p) in enumerate(zip(highs, high_params))]
    return loss, mixer_grads, high_grads


def mix_td_update(mixer, highs, batch, gamma, target_update):
    """One optimizer step for the mixer and every agent's high-level network."""
    loss, mixer_grads, high_grads = mix_td_loss(mixer, highs, batch, gamma)
    mixer.apply(mixer_grads, target_update)
    merged = {}
    for high, grads in zip(highs, high_grads):
        # agents sharing one network accumulate into a single step
        merged.setdefault(id(high), (high, GradientRecord()))[1].add(grads)
    for high, grads in merged.values():
        high.apply(grads, target_update)
    if not mixer.check_non_negative(stack(batch, "state")):
        raise ConsistencyError("mixer produced a negative mixing weight")
    return loss
