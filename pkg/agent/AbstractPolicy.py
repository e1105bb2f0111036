import logging

from network.Adam import Adam, AdamState
from network.Mlp import MlpSpec, init_params, mlp_forward, parameter_count
from utils.checkpoint import load_checkpoint, save_checkpoint


class AbstractPolicy:
    """A value network with a target copy and its own optimizer."""

    kind = "policy"

    def __init__(self, spec, rng=None, params=None, lr=1e-3):
        self.log = logging.getLogger(self.__class__.__name__)
        self.spec = spec
        self.params = params if params is not None else init_params(spec, rng)
        self.params.check_spec(spec)
        self.target_params = self.params.copy()
        self.optimizer = Adam(lr)
        self.updates = 0
        self.meta = {}

    def q_values(self, x, params=None):
        return mlp_forward(self.spec, params if params is not None else self.params, x)

    def target_q_values(self, x):
        return mlp_forward(self.spec, self.target_params, x)

    def apply(self, grads, target_update):
        self.params = self.optimizer.step(self.params, grads)
        self.updates += 1
        if self.updates % target_update == 0:
            self.sync_target()

    def sync_target(self):
        self.target_params = self.params.copy()

    def parameter_count(self):
        return parameter_count(self.spec)

    def save(self, path, meta=None):
        meta = dict(self.meta, **(meta or {}))
        meta.update(adam=self.optimizer.state.to_dict(), updates=self.updates)
        return save_checkpoint(path, self.kind, self.spec.to_dict(), self.params, meta)

    @classmethod
    def init_kwargs(cls, meta):
        return {}

    @classmethod
    def load(cls, path, lr=1e-3):
        document = load_checkpoint(path, cls.kind)
        meta = document["meta"]
        policy = cls(MlpSpec.from_dict(document["spec"]), params=document["params"], lr=lr, **cls.init_kwargs(meta))
        if "adam" in meta:
            policy.optimizer.state = AdamState.from_dict(meta.pop("adam"))
        policy.updates = meta.pop("updates", 0)
        policy.meta = meta
        return policy
