"""Actor-critic MLP with hand-written reverse mode and Adam/SGD.

Parameters live in one flat float64 vector; named blocks are views into it.
The policy and value networks are separate tanh MLPs.  A Gaussian head adds
a state-independent ``log_std`` block.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ppob.distributions import Categorical, DiagGaussian
from ppob.errors import ConfigError, NumericFault, UsageError

HIDDEN_GAIN = 1.0
POLICY_GAIN = 0.01
VALUE_GAIN = 1.0


@dataclass(frozen=True)
class HeadSpec:
    kind: str  # "categorical" | "gaussian"
    size: int  # num_actions or action_dim

    def __post_init__(self):
        if self.kind not in ("categorical", "gaussian"):
            raise ConfigError("head", f"unknown head kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError("head", "head size must be positive")


@dataclass(frozen=True)
class Layout:
    """Ordered (name, shape) blocks of the flat parameter vector."""

    obs_dim: int
    hidden: tuple
    head: HeadSpec
    blocks: tuple = field(init=False)

    def __post_init__(self):
        blocks = []
        for prefix, out in (("pi", self.head.size), ("v", 1)):
            sizes = (self.obs_dim, *self.hidden, out)
            for i in range(len(sizes) - 1):
                blocks.append((f"{prefix}.{i}.W", (sizes[i + 1], sizes[i])))
                blocks.append((f"{prefix}.{i}.b", (sizes[i + 1],)))
        if self.head.kind == "gaussian":
            blocks.append(("log_std", (self.head.size,)))
        object.__setattr__(self, "blocks", tuple(blocks))

    @property
    def num_layers(self) -> int:
        return len(self.hidden) + 1

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.blocks)

    def offsets(self):
        off = 0
        for name, shape in self.blocks:
            n = int(np.prod(shape))
            yield name, shape, off, off + n
            off += n

    def views(self, flat: np.ndarray) -> dict:
        return {name: flat[a:b].reshape(shape) for name, shape, a, b in self.offsets()}

    def to_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden),
                "head": [self.head.kind, self.head.size]}

    @classmethod
    def from_dict(cls, d) -> "Layout":
        return cls(int(d["obs_dim"]), tuple(int(h) for h in d["hidden"]),
                   HeadSpec(d["head"][0], int(d["head"][1])))


class PolicyParams:
    """Flat parameter vector plus named views.  Treat as a value: the
    optimizer returns new instances instead of mutating."""

    def __init__(self, layout: Layout, flat: np.ndarray, seed: Optional[int] = None):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (layout.size,):
            raise ConfigError("params", f"expected {layout.size} values, got {flat.shape}")
        self.layout = layout
        self.flat = flat
        self.seed = seed
        self.blocks = layout.views(flat)

    def __getitem__(self, name) -> np.ndarray:
        return self.blocks[name]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layout, self.flat.copy(), self.seed)

    def with_flat(self, flat) -> "PolicyParams":
        return PolicyParams(self.layout, flat, self.seed)

    def layers(self, prefix: str):
        return [(self.blocks[f"{prefix}.{i}.W"], self.blocks[f"{prefix}.{i}.b"])
                for i in range(self.layout.num_layers)]

    def __repr__(self):
        return f"PolicyParams(obs_dim={self.layout.obs_dim}, hidden={self.layout.hidden}, head={self.layout.head}, n={self.layout.size})"


def init_params(obs_dim: int, head: HeadSpec, hidden: Sequence[int] = (64, 64),
                seed: int = 0) -> PolicyParams:
    """Scaled-uniform init: var(W) = gain**2 / fan_in, zero biases, log_std 0."""
    layout = Layout(int(obs_dim), tuple(int(h) for h in hidden), head)
    rng = np.random.default_rng(seed)
    params = PolicyParams(layout, np.zeros(layout.size), seed)
    last = layout.num_layers - 1
    for prefix, out_gain in (("pi", POLICY_GAIN), ("v", VALUE_GAIN)):
        for i in range(layout.num_layers):
            W = params[f"{prefix}.{i}.W"]
            gain = out_gain if i == last else HIDDEN_GAIN
            bound = gain * np.sqrt(3.0 / W.shape[1])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
    return params


def zero_params(obs_dim: int, head: HeadSpec, hidden: Sequence[int] = (64, 64)) -> PolicyParams:
    layout = Layout(int(obs_dim), tuple(int(h) for h in hidden), head)
    return PolicyParams(layout, np.zeros(layout.size))


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    states: np.ndarray
    pi_acts: list  # tanh outputs of each hidden layer
    v_acts: list
    head_out: np.ndarray  # logits or mean
    values: np.ndarray


def _mlp(layers, x, prefix):
    acts = []
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W.T + b
        if not np.all(np.isfinite(z)):
            raise NumericFault(f"{prefix} layer {i}", "non-finite activation")
        if i < len(layers) - 1:
            z = np.tanh(z)
            acts.append(z)
        h = z
    return h, acts


def forward_cached(params: PolicyParams, states) -> ForwardCache:
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.layout.obs_dim:
        raise ConfigError("state", f"state dimension {x.shape[-1]} != network input {params.layout.obs_dim}")
    head_out, pi_acts = _mlp(params.layers("pi"), x, "pi")
    values, v_acts = _mlp(params.layers("v"), x, "v")
    return ForwardCache(x, pi_acts, v_acts, head_out, values[:, 0])


def make_distribution(params: PolicyParams, head_out: np.ndarray):
    if params.layout.head.kind == "categorical":
        return Categorical(head_out)
    return DiagGaussian(head_out, params["log_std"].copy())


def forward(params: PolicyParams, state):
    """Return ``(distribution, value)``.

    A 1-D state gives an unbatched distribution and a float value; a 2-D
    batch gives batched outputs.
    """
    single = np.ndim(state) == 1
    cache = forward_cached(params, state)
    if single:
        return make_distribution(params, cache.head_out[0]), float(cache.values[0])
    return make_distribution(params, cache.head_out), cache.values


@dataclass
class LossGraph:
    """A scalar loss expressed through the network outputs.

    ``d_head`` is dLoss/d(logits or mean) per sample, ``d_values`` is
    dLoss/dV per sample, ``d_log_std`` the gradient on the Gaussian log-std
    block, and ``direct`` an optional gradient added straight onto the flat
    parameter vector.
    """

    params: PolicyParams
    cache: Optional[ForwardCache] = None
    d_head: Optional[np.ndarray] = None
    d_values: Optional[np.ndarray] = None
    d_log_std: Optional[np.ndarray] = None
    direct: Optional[np.ndarray] = None


class GradientTape:
    """Gradient of a scalar loss, congruent with a :class:`PolicyParams`."""

    def __init__(self, layout: Layout, flat: np.ndarray):
        self.layout = layout
        self.flat = flat
        self.blocks = layout.views(flat)

    def __getitem__(self, name):
        return self.blocks[name]


def _mlp_backward(layers, x, acts, d_out, grads, prefix):
    g = d_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = acts[i - 1] if i > 0 else x
        grads[f"{prefix}.{i}.W"] += g.T @ h_in
        grads[f"{prefix}.{i}.b"] += g.sum(axis=0)
        if i > 0:
            g = (g @ W) * (1.0 - acts[i - 1] ** 2)


def backward(graph: LossGraph) -> GradientTape:
    params = graph.params
    layout = params.layout
    flat = np.zeros(layout.size)
    grads = layout.views(flat)
    c = graph.cache
    if c is not None:
        if graph.d_head is not None:
            _mlp_backward(params.layers("pi"), c.states, c.pi_acts,
                          np.asarray(graph.d_head, dtype=np.float64).reshape(c.head_out.shape), grads, "pi")
        if graph.d_values is not None:
            d_v = np.asarray(graph.d_values, dtype=np.float64).reshape(-1, 1)
            _mlp_backward(params.layers("v"), c.states, c.v_acts, d_v, grads, "v")
    if graph.d_log_std is not None:
        if "log_std" not in grads:
            raise UsageError("log-std gradient given for a categorical head")
        grads["log_std"] += graph.d_log_std
    if graph.direct is not None:
        flat += graph.direct
    for name, _, a, b in layout.offsets():
        if not np.all(np.isfinite(flat[a:b])):
            raise NumericFault(f"parameter block {name}", "non-finite gradient")
    return GradientTape(layout, flat)


@dataclass
class OptimizerState:
    algorithm: str = "adam"  # "adam" | "sgd"
    step_size: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-5
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    t: int = 0

    def __post_init__(self):
        if self.algorithm not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"unknown algorithm {self.algorithm!r}")


def optimizer_step(params: PolicyParams, tape: GradientTape, opt: OptimizerState,
                   step_size: Optional[float] = None) -> PolicyParams:
    """Descend the loss once; ``opt`` moments and counter update in place."""
    if tape.layout != params.layout:
        raise UsageError("gradient tape does not match parameter layout")
    lr = opt.step_size if step_size is None else step_size
    g = tape.flat
    opt.t += 1
    if opt.algorithm == "sgd":
        new = params.flat - lr * g
    else:
        if opt.m is None:
            opt.m = np.zeros_like(params.flat)
            opt.v = np.zeros_like(params.flat)
        opt.m = opt.beta1 * opt.m + (1.0 - opt.beta1) * g
        opt.v = opt.beta2 * opt.v + (1.0 - opt.beta2) * g * g
        m_hat = opt.m / (1.0 - opt.beta1 ** opt.t)
        v_hat = opt.v / (1.0 - opt.beta2 ** opt.t)
        new = params.flat - lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    if not np.all(np.isfinite(new)):
        raise NumericFault("optimizer_step", "non-finite parameters")
    return params.with_flat(new)


def save_checkpoint(params: PolicyParams, path, **meta) -> Path:
    """Write shapes, row-major float64 values and the seed; exact round trip."""
    path = Path(path)
    header = {"layout": params.layout.to_dict(), "seed": params.seed,
              "shapes": [[n, list(s)] for n, s in params.layout.blocks], **meta}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), flat=params.flat)
    return path


def load_checkpoint(path):
    """Return ``(params, header)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        flat = data["flat"].astype(np.float64, copy=True)
    layout = Layout.from_dict(header["layout"])
    if [[n, list(s)] for n, s in layout.blocks] != header["shapes"]:
        raise ConfigError("checkpoint", "stored shapes do not match the stored layout")
    return PolicyParams(layout, flat, header.get("seed")), header
