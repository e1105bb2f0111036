from dataclasses import dataclass, field

import numpy as np

from network.Mlp import ParameterSet
from utils.errors import ConsistencyError, DomainError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def to_dict(self):
        return {
            "t": self.t,
            "m": ParameterSet(self.m).to_dict(),
            "v": ParameterSet(self.v).to_dict(),
        }

    @staticmethod
    def from_dict(data):
        return AdamState(m=dict(ParameterSet.from_dict(data["m"]).items()),
                         v=dict(ParameterSet.from_dict(data["v"]).items()),
                         t=int(data["t"]))


def adam_step(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1, state=None):
    """One adaptive-moment update. Returns the new parameters and moments."""
    if t < 1:
        raise DomainError("adam step counter must be >= 1, got {}".format(t))
    if lr <= 0:
        raise DomainError("learning rate must be > 0, got {}".format(lr))
    state = state if state is not None else AdamState()
    missing = [name for name in params.names() if name not in grads]
    if missing:
        raise ConsistencyError("no gradient for parameters {}".format(missing))

    new_params = ParameterSet()
    new_state = AdamState(t=t)
    for name, value in params.items():
        g = grads[name]
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_state.m[name] = m
        new_state.v[name] = v
    return new_params, new_state


class Adam:

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, params, grads):
        params, self.state = adam_step(params, grads, self.lr, self.beta1, self.beta2, self.eps,
                                       self.state.t + 1, self.state)
        return params
