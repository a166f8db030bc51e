"""Dense networks, parameter storage, gradients and the Adam optimizer."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from hvfae import tensor as T
from hvfae.tensor import DimensionError, NonFiniteError, Tensor, as_real_array

SIGMA_FLOOR = 1e-4

ACTIVATIONS = {"softplus": T.softplus, "tanh": T.tanh, "relu": T.relu}
HEADS = ("linear", "gaussian_params", "logits")


def seeded_rng(seed):
    """Independent, reproducible random stream (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


class ParamStore:
    """Ordered name -> array map with a parallel map of gradient slots."""

    def __init__(self):
        self.entries = OrderedDict()
        self.grads = OrderedDict()

    def add(self, name, value):
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = as_real_array(value, name).copy()
        self.entries[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name):
        return self.entries[name]

    def __setitem__(self, name, value):
        arr = as_real_array(value, name)
        if arr.shape != self.entries[name].shape:
            raise DimensionError(f"{name}: shape {arr.shape} != {self.entries[name].shape}")
        self.entries[name] = arr.copy()

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

    def num_values(self):
        return sum(a.size for a in self.entries.values())

    def copy(self):
        out = ParamStore()
        for k, v in self.entries.items():
            out.add(k, v)
        return out

    def zero_grad(self):
        for g in self.grads.values():
            g[...] = 0.0

    def as_tensors(self, requires_grad=False):
        return OrderedDict((k, Tensor(v, requires_grad=requires_grad, name=k))
                           for k, v in self.entries.items())

    def check_finite(self):
        for k, v in self.entries.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"parameter {k!r} became non-finite")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1
    hidden_activation: str = "softplus"
    output_head: str = "linear"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all MLP dims must be >= 1, got {dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")
        if self.output_head not in HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def layer_shapes(self, prefix):
        """(name, shape) for every parameter of the network, in creation order."""
        shapes = []
        fan_in = self.input_dim
        for i, h in enumerate(self.hidden_dims):
            shapes += [(f"{prefix}.w{i}", (fan_in, h)), (f"{prefix}.b{i}", (h,))]
            fan_in = h
        if self.output_head == "gaussian_params":
            shapes += [(f"{prefix}.w_mu", (fan_in, self.output_dim)),
                       (f"{prefix}.b_mu", (self.output_dim,)),
                       (f"{prefix}.w_sig", (fan_in, self.output_dim)),
                       (f"{prefix}.b_sig", (self.output_dim,))]
        else:
            shapes += [(f"{prefix}.w_out", (fan_in, self.output_dim)),
                       (f"{prefix}.b_out", (self.output_dim,))]
        return shapes


def init_mlp(spec, prefix, params, rng):
    """Fan-in scaled uniform weights, zero biases."""
    for name, shape in spec.layer_shapes(prefix):
        if len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            params.add(name, rng.uniform(-bound, bound, size=shape))
        else:
            params.add(name, np.zeros(shape))


def mlp_forward(spec, params, prefix, x):
    """Run the network named ``prefix``.

    ``params`` maps names to Tensors (or raw arrays, treated as constants).
    A ``gaussian_params`` head returns ``(mean, sigma)`` with
    ``sigma = softplus(raw) + SIGMA_FLOOR``.
    """
    x = T.tensor(x)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"{prefix}: expected input width {spec.input_dim}, got {x.shape}")
    act = ACTIVATIONS[spec.hidden_activation]
    h = x
    for i in range(len(spec.hidden_dims)):
        h = act(h @ params[f"{prefix}.w{i}"] + params[f"{prefix}.b{i}"])
    if spec.output_head == "gaussian_params":
        mean = h @ params[f"{prefix}.w_mu"] + params[f"{prefix}.b_mu"]
        sigma = T.softplus(h @ params[f"{prefix}.w_sig"] + params[f"{prefix}.b_sig"]) + SIGMA_FLOOR
        return mean, sigma
    return h @ params[f"{prefix}.w_out"] + params[f"{prefix}.b_out"]


def grad(loss_fn, params):
    """Gradient of the scalar ``loss_fn(tensors)`` w.r.t. every entry of ``params``.

    Writes into ``params.grads`` and returns ``(loss_value, params.grads)``.
    Parameters the loss does not reach get exact zeros.
    """
    leaves = params.as_tensors(requires_grad=True)
    loss = loss_fn(leaves)
    if loss.data.size != 1:
        raise DimensionError(f"loss must be scalar, got shape {loss.shape}")
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is non-finite ({value})")
    loss.backward()
    for name, leaf in leaves.items():
        g = params.grads[name]
        if leaf.grad is None:
            g[...] = 0.0
        else:
            g[...] = leaf.grad
    return value, params.grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update of ``params`` (minimization) in place."""
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of {name!r} is non-finite")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.entries.items():
        g = params.grads[name]
        if name not in state.first_moment:
            state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.check_finite()
    return params, state
