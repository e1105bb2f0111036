from dataclasses import dataclass

import numpy as np
from scipy.special import softmax as _scipy_softmax

from utils.errors import DimensionError, NumericError

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_HEADS = ("linear", "softmax")
INITS = ("orthogonal", "uniform_scaled")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    hidden_activation: str = "relu"
    output_head: str = "linear"
    init: str = "orthogonal"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise DimensionError("an MLP needs at least 2 layer sizes, got {}".format(self.layer_sizes))
        if min(self.layer_sizes) < 1:
            raise DimensionError("layer sizes must be positive, got {}".format(self.layer_sizes))
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError("unknown hidden activation {}".format(self.hidden_activation))
        if self.output_head not in OUTPUT_HEADS:
            raise ValueError("unknown output head {}".format(self.output_head))
        if self.init not in INITS:
            raise ValueError("unknown init {}".format(self.init))

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def input_size(self):
        return self.layer_sizes[0]

    @property
    def output_size(self):
        return self.layer_sizes[-1]

    def param_shapes(self):
        shapes = {}
        for i in range(self.n_layers):
            shapes["W{}".format(i)] = (self.layer_sizes[i], self.layer_sizes[i + 1])
            shapes["b{}".format(i)] = (self.layer_sizes[i + 1],)
        return shapes

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_head": self.output_head,
            "init": self.init,
        }

    @staticmethod
    def from_dict(data):
        return MlpSpec(tuple(data["layer_sizes"]), data["hidden_activation"], data["output_head"], data["init"])


class ParameterSet:
    """Named float64 arrays, the weights of one or more networks."""

    def __init__(self, entries=None):
        self.entries = {}
        for name, value in (entries or {}).items():
            self.entries[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name):
        return self.entries[name]

    def __setitem__(self, name, value):
        self.entries[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self):
        return list(self.entries)

    def items(self):
        return self.entries.items()

    def copy(self):
        return self.__class__({k: v.copy() for k, v in self.entries.items()})

    def count(self):
        return int(sum(v.size for v in self.entries.values()))

    def prefixed(self, prefix):
        return ParameterSet({"{}.{}".format(prefix, k): v for k, v in self.entries.items()})

    def select(self, prefix):
        start = prefix + "."
        return ParameterSet({k[len(start):]: v for k, v in self.entries.items() if k.startswith(start)})

    def merge(self, other):
        merged = self.copy()
        for k, v in other.items():
            merged.entries[k] = np.array(v, dtype=np.float64)
        return merged

    def check_spec(self, spec):
        shapes = spec.param_shapes()
        if set(shapes) != set(self.entries):
            raise DimensionError("parameter names {} do not match spec {}".format(sorted(self.entries), sorted(shapes)))
        for name, shape in shapes.items():
            if self.entries[name].shape != shape:
                raise DimensionError("{} has shape {}, spec expects {}".format(name, self.entries[name].shape, shape))

    def to_dict(self):
        return {name: {"shape": list(v.shape), "values": v.ravel().tolist()} for name, v in self.entries.items()}

    @classmethod
    def from_dict(cls, data):
        entries = {}
        for name, entry in data.items():
            values = np.asarray(entry["values"], dtype=np.float64)
            shape = tuple(entry["shape"])
            if int(np.prod(shape)) != values.size:
                raise DimensionError("{}: shape {} does not hold {} values".format(name, shape, values.size))
            entries[name] = values.reshape(shape)
        return cls(entries)

    def allclose(self, other, atol=0.0):
        if set(self.entries) != set(other.entries):
            return False
        return all(np.allclose(self.entries[k], other.entries[k], rtol=0.0, atol=atol) for k in self.entries)


class GradientRecord(ParameterSet):

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()})

    def add(self, other, scale=1.0):
        for k, v in other.items():
            if k in self.entries:
                self.entries[k] = self.entries[k] + scale * v
            else:
                self.entries[k] = scale * np.asarray(v, dtype=np.float64)
        return self

    def scaled(self, factor):
        return GradientRecord({k: v * factor for k, v in self.entries.items()})

    def check_finite(self):
        for k, v in self.entries.items():
            if not np.all(np.isfinite(v)):
                raise NumericError("non-finite gradient for {}".format(k))
        return self


def orthogonal(shape, rng, gain=1.0):
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(spec, rng):
    params = ParameterSet()
    for i in range(spec.n_layers):
        shape = (spec.layer_sizes[i], spec.layer_sizes[i + 1])
        if spec.init == "orthogonal":
            params["W{}".format(i)] = orthogonal(shape, rng)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params["W{}".format(i)] = rng.uniform(-bound, bound, size=shape)
        params["b{}".format(i)] = np.zeros(shape[1])
    return params


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logit in softmax")
    return _scipy_softmax(logits, axis=-1)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(kind, z, a):
    if kind == "relu":
        # kink at exactly 0 has gradient 0
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


def _as_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_size:
        raise DimensionError("input of shape {} does not match first layer size {}".format(
            x.shape, spec.input_size))
    return x, single


def forward_cache(spec, params, x):
    x, single = _as_batch(spec, x)
    activations = [x]
    pre_activations = []
    h = x
    for i in range(spec.n_layers):
        z = h @ params["W{}".format(i)] + params["b{}".format(i)]
        if not np.all(np.isfinite(z)):
            raise NumericError("non-finite pre-activation", layer=i)
        pre_activations.append(z)
        if i < spec.n_layers - 1:
            h = _activate(spec.hidden_activation, z)
        elif spec.output_head == "softmax":
            h = softmax(z)
        else:
            h = z
        activations.append(h)
    return h, (activations, pre_activations, single)


def mlp_forward(spec, params, x):
    out, (_, _, single) = forward_cache(spec, params, x)
    return out[0] if single else out


def backward(spec, params, x, upstream, return_input_grad=False):
    """Gradients of sum(upstream * mlp_forward(x)) for every parameter.

    Works on a single input vector or a batch of rows; for a batch the loss is
    summed over rows.
    """
    out, (activations, pre_activations, single) = forward_cache(spec, params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if single:
        upstream = upstream[None, :] if upstream.ndim == 1 else upstream
    if upstream.shape != out.shape:
        raise DimensionError("upstream of shape {} does not match output shape {}".format(upstream.shape, out.shape))

    if spec.output_head == "softmax":
        dz = out * (upstream - np.sum(upstream * out, axis=1, keepdims=True))
    else:
        dz = upstream

    grads = GradientRecord()
    for i in reversed(range(spec.n_layers)):
        grads["W{}".format(i)] = activations[i].T @ dz
        grads["b{}".format(i)] = dz.sum(axis=0)
        dh = dz @ params["W{}".format(i)].T
        if i > 0:
            dz = dh * _activation_grad(spec.hidden_activation, pre_activations[i - 1], activations[i])
        if not np.all(np.isfinite(dh)):
            raise NumericError("non-finite gradient", layer=i)
    if return_input_grad:
        return grads, (dh[0] if single else dh)
    return grads


def parameter_count(spec):
    return int(sum(np.prod(s) for s in spec.param_shapes().values()))
