import logging
from dataclasses import dataclass

import numpy as np

from network.Adam import Adam, AdamState
from network.Mlp import GradientRecord, MlpSpec, backward, init_params, mlp_forward
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.errors import DimensionError
from utils.Rng import make_stream

CHECKPOINT_KIND = "mixer"
HEADS = ("w1", "b1", "w2", "b2")
PROBE_DELTA = 1e-4


@dataclass(frozen=True)
class MixerSpec:
    n_agents: int
    state_dim: int
    hidden_dim: int = 32
    hyper_hidden: int = 64

    def __post_init__(self):
        for name in ("n_agents", "state_dim", "hidden_dim", "hyper_hidden"):
            if getattr(self, name) < 1:
                raise DimensionError("MixerSpec.{} must be positive".format(name))

    def trunk_spec(self):
        return MlpSpec((self.state_dim, self.hyper_hidden))

    def head_spec(self, head):
        sizes = {"w1": self.n_agents * self.hidden_dim, "b1": self.hidden_dim, "w2": self.hidden_dim, "b2": 1}
        return MlpSpec((self.hyper_hidden, sizes[head]))

    def to_dict(self):
        return {"n_agents": self.n_agents, "state_dim": self.state_dim, "hidden_dim": self.hidden_dim,
                "hyper_hidden": self.hyper_hidden, "heads": list(HEADS)}

    @staticmethod
    def from_dict(data):
        return MixerSpec(data["n_agents"], data["state_dim"], data["hidden_dim"], data["hyper_hidden"])


def elu(x):
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


class GoalMixer:
    """Monotone mixer of per-agent goal values, weighted by one hypernetwork over the global state.

    The hypernetwork is a ReLU trunk feeding four linear heads. W1 and W2 are
    the absolute values of their heads, b2 is a ReLU of its head and b1 is
    unconstrained, so Q_tot is non-decreasing in every agent value.
    """

    def __init__(self, spec, rng=None, params=None, lr=5e-4):
        self.log = logging.getLogger(self.__class__.__name__)
        self.spec = spec
        if params is None:
            rng = rng if rng is not None else make_stream(0, "mixer")
            params = init_params(spec.trunk_spec(), rng).prefixed("trunk")
            for head in HEADS:
                params = params.merge(init_params(spec.head_spec(head), rng).prefixed(head))
        self.params = params
        self.check_params(self.params)
        self.target_params = self.params.copy()
        self.optimizer = Adam(lr)
        self.updates = 0

    def check_params(self, params):
        params.select("trunk").check_spec(self.spec.trunk_spec())
        for head in HEADS:
            params.select(head).check_spec(self.spec.head_spec(head))

    # realized weights; a mixer with a different transform is only useful as a negative control
    def realize(self, raw):
        return np.abs(raw)

    def realize_grad(self, raw):
        return np.sign(raw)

    def _states(self, state):
        state = np.asarray(state, dtype=np.float64)
        single = state.ndim == 1
        state = np.atleast_2d(state)
        if state.shape[1] != self.spec.state_dim:
            raise DimensionError("state of size {} does not match mixer state_dim {}".format(
                state.shape[1], self.spec.state_dim))
        return state, single

    def _hyper(self, params, states):
        trunk_z = mlp_forward(self.spec.trunk_spec(), params.select("trunk"), states)
        h = np.maximum(trunk_z, 0.0)
        raw = {head: mlp_forward(self.spec.head_spec(head), params.select(head), h) for head in HEADS}
        return trunk_z, h, raw

    def hyper_weights(self, state, params=None):
        """Realized (W1, b1, W2, b2) for one state, or stacked along a leading batch axis."""
        params = params if params is not None else self.params
        states, single = self._states(state)
        _, _, raw = self._hyper(params, states)
        n, hidden = self.spec.n_agents, self.spec.hidden_dim
        w1 = self.realize(raw["w1"]).reshape(len(states), n, hidden)
        b1 = raw["b1"]
        w2 = self.realize(raw["w2"])
        b2 = np.maximum(raw["b2"][:, 0], 0.0)
        if single:
            return w1[0], b1[0], w2[0], float(b2[0])
        return w1, b1, w2, b2

    def _q(self, q):
        q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        if q.shape[1] != self.spec.n_agents:
            raise DimensionError("got {} agent values for a {}-agent mixer".format(q.shape[1], self.spec.n_agents))
        return q

    def mix(self, q, state, params=None):
        w1, b1, w2, b2 = self.hyper_weights(np.atleast_2d(state), params)
        q = self._q(q)
        q_tot = mix_with_weights(q, w1, b1, w2, b2)
        return float(q_tot[0]) if np.ndim(state) == 1 else q_tot

    def joint_max(self, q_tables, state, params=None):
        """Per-agent argmax goals (lowest index on ties) and Q_tot of that tuple."""
        tables = np.asarray(q_tables, dtype=np.float64)
        goals = tuple(int(g) for g in np.argmax(tables, axis=1))
        q = tables[np.arange(len(goals)), goals]
        return goals, self.mix(q, state, params)

    def backward(self, q, state, upstream, params=None):
        """Gradients of sum(upstream * Q_tot) for the mixer parameters and for the agent values."""
        params = params if params is not None else self.params
        states, _ = self._states(np.atleast_2d(state))
        q = self._q(q)
        upstream = np.atleast_1d(np.asarray(upstream, dtype=np.float64))
        batch, n, hidden = len(states), self.spec.n_agents, self.spec.hidden_dim

        trunk_z, h, raw = self._hyper(params, states)
        w1 = self.realize(raw["w1"]).reshape(batch, n, hidden)
        w2 = self.realize(raw["w2"])
        pre = np.einsum("bn,bnh->bh", q, w1) + raw["b1"]
        act = elu(pre)

        d_w2 = upstream[:, None] * act
        d_raw_w2 = d_w2 * self.realize_grad(raw["w2"])
        d_raw_b2 = (upstream * (raw["b2"][:, 0] > 0.0))[:, None]
        d_pre = upstream[:, None] * w2 * elu_grad(pre)
        d_raw_b1 = d_pre
        d_w1 = q[:, :, None] * d_pre[:, None, :]
        d_raw_w1 = (d_w1 * self.realize_grad(raw["w1"].reshape(batch, n, hidden))).reshape(batch, n * hidden)
        d_q = np.einsum("bnh,bh->bn", w1, d_pre)

        grads = GradientRecord()
        d_h = np.zeros_like(h)
        for head, d_raw in (("w1", d_raw_w1), ("b1", d_raw_b1), ("w2", d_raw_w2), ("b2", d_raw_b2)):
            head_grads, d_in = backward(self.spec.head_spec(head), params.select(head), h, d_raw,
                                        return_input_grad=True)
            grads.add(head_grads.prefixed(head))
            d_h += d_in
        d_trunk = d_h * (trunk_z > 0.0)
        grads.add(backward(self.spec.trunk_spec(), params.select("trunk"), states, d_trunk).prefixed("trunk"))
        return grads.check_finite(), d_q

    def apply(self, grads, target_update):
        self.params = self.optimizer.step(self.params, grads)
        self.updates += 1
        if self.updates % target_update == 0:
            self.sync_target()

    def sync_target(self):
        self.target_params = self.params.copy()

    def check_non_negative(self, states):
        w1, _, w2, b2 = self.hyper_weights(np.atleast_2d(states))
        return bool(w1.min() >= 0.0 and w2.min() >= 0.0 and b2.min() >= 0.0)

    def monotonicity_probe(self, trials, rng=None, delta=PROBE_DELTA, q_scale=1.0):
        """Smallest forward-difference partial of Q_tot over random states and agent values."""
        rng = rng if rng is not None else make_stream(0, "mixer.probe")
        states = rng.uniform(0.0, 1.0, size=(trials, self.spec.state_dim))
        q = rng.normal(0.0, q_scale, size=(trials, self.spec.n_agents))
        base = self.mix(q, states)
        worst = np.inf
        for i in range(self.spec.n_agents):
            bumped = q.copy()
            bumped[:, i] += delta
            worst = min(worst, float(((self.mix(bumped, states) - base) / delta).min()))
        return worst

    def parameter_count(self):
        return self.params.count()

    def save(self, path, meta=None):
        meta = dict(meta or {}, adam=self.optimizer.state.to_dict(), updates=self.updates)
        return save_checkpoint(path, CHECKPOINT_KIND, self.spec.to_dict(), self.params, meta)

    @classmethod
    def load(cls, path, lr=5e-4):
        document = load_checkpoint(path, CHECKPOINT_KIND)
        mixer = cls(MixerSpec.from_dict(document["spec"]), params=document["params"], lr=lr)
        if "adam" in document["meta"]:
            mixer.optimizer.state = AdamState.from_dict(document["meta"]["adam"])
        mixer.updates = document["meta"].get("updates", 0)
        return mixer


def mix_with_weights(q, w1, b1, w2, b2):
    """Q_tot = W2 . elu(q W1 + b1) + b2, for a single agent-value vector or a batch."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    w1, b1, w2 = np.asarray(w1, dtype=np.float64), np.asarray(b1, dtype=np.float64), np.asarray(w2, dtype=np.float64)
    if w1.ndim == 2:
        w1, b1, w2 = w1[None], np.atleast_2d(b1), np.atleast_2d(w2)
    hidden = elu(np.einsum("bn,bnh->bh", q, w1) + b1)
    return np.sum(hidden * w2, axis=1) + b2
