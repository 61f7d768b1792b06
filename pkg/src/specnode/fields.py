"""Learnable correction networks and the spectral vector field built on them.

The vector field acting on a coefficient state ``s`` (channels first) is

    second-order wiring (u, v):  (v, M u + eps * s_out * N(u / s_in))
    first-order wiring:          M s_k + eps * s_out * N_k(s / s_in)  for each channel k

where ``M`` is a linear spectral multiplier and ``N`` a dense MLP (1D) or a
stack of dimensionwise layers (2D).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .basis import LinearSpectralOperator

WIRINGS = ("second_order", "first_order")


def init_glorot(shape: Sequence[int], rng: np.random.Generator, name: str | None = None) -> Tensor:
    """Uniform Glorot sample on ``+-sqrt(6 / (fan_in + fan_out))``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2:
        raise ValueError("Glorot initialization expects a rank-2 weight shape")
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


# -------------------------------------------------------------------- MLP


@dataclass
class Mlp:
    weights: list
    biases: list
    activations: list

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


def make_mlp(n_in: int, n_out: int, rng: np.random.Generator, hidden: int = 256,
             depth: int = 2, activation: str = "relu") -> Mlp:
    """``depth`` hidden layers of width ``hidden``; Glorot weights, zero biases."""
    widths = [n_in] + [hidden] * depth + [n_out]
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        weights.append(init_glorot((a, b), rng, name=f"W{i}"))
        biases.append(Tensor(np.zeros(b), requires_grad=True, name=f"b{i}"))
    acts = [activation] * depth + ["identity"]
    return Mlp(weights, biases, acts)


def mlp_forward(params: Mlp, state) -> Tensor:
    """Apply the MLP to the trailing axis of ``state``."""
    x = ad.as_tensor(state)
    if x.shape[-1] != params.n_in:
        raise ad.ShapeError(f"MLP expects input width {params.n_in}, got {x.shape[-1]}")
    squeeze = x.ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, -1))
    for W, b, act in zip(params.weights, params.biases, params.activations):
        x = ad.activation(ad.add(ad.matmul(x, W), b), act)
    return ad.reshape(x, (params.n_out,)) if squeeze else x


# ---------------------------------------------------------- dimensionwise


@dataclass
class DimwiseLayer:
    A: Tensor  # m x n Hadamard mask
    B: Tensor  # n x n row map
    C: Tensor  # m_out x m column map
    activation: str = "identity"

    def parameter_count(self) -> int:
        return self.A.size + self.B.size + self.C.size


@dataclass
class DimwiseStack:
    layers: list

    def parameters(self) -> list:
        return [p for L in self.layers for p in (L.A, L.B, L.C)]

    def parameter_count(self) -> int:
        return sum(L.parameter_count() for L in self.layers)

    @property
    def in_shape(self) -> tuple:
        return tuple(self.layers[0].A.shape)


def make_dimwise(m: int, n: int, rng: np.random.Generator, depth: int = 2,
                 activation: str = "tanh", m_out: int | None = None) -> DimwiseStack:
    """Stack of dimensionwise layers mapping ``m x n`` inputs to ``m_out x n``.

    The first layer's ``C`` is rectangular when ``m_out != m`` (stacked channel
    input); hidden layers use ``activation`` and the last layer is linear.
    """
    m_out = m if m_out is None else m_out
    layers = []
    rows = m
    for i in range(depth):
        out_rows = m_out
        layers.append(DimwiseLayer(
            A=init_glorot((rows, n), rng, name=f"A{i}"),
            B=init_glorot((n, n), rng, name=f"B{i}"),
            C=init_glorot((out_rows, rows), rng, name=f"C{i}"),
            activation=activation if i < depth - 1 else "identity",
        ))
        rows = out_rows
    return DimwiseStack(layers)


def dimwise_forward(stack: DimwiseStack, state) -> Tensor:
    """Per layer: Hadamard with A, rows times B, transpose, times C, transpose, activation."""
    x = ad.as_tensor(state)
    if tuple(x.shape[-2:]) != stack.in_shape:
        raise ad.ShapeError(f"dimensionwise stack expects {stack.in_shape}, got {x.shape}")
    for L in stack.layers:
        x = ad.hadamard(x, L.A)
        x = ad.matmul_rowwise(x, L.B)
        x = ad.transpose(x)
        x = ad.matmul(x, ad.transpose(L.C))
        x = ad.transpose(x)
        x = ad.activation(x, L.activation)
    return x


def network_forward(net, x) -> Tensor:
    if isinstance(net, Mlp):
        return mlp_forward(net, x)
    if isinstance(net, DimwiseStack):
        return dimwise_forward(net, x)
    raise TypeError(f"unsupported network type {type(net).__name__}")


def network_parameters(net) -> list:
    return net.parameters()


# ------------------------------------------------------------- orthogonal


def make_orthogonal(skew_params) -> Tensor:
    """``O = expm(S - S^T)``; the identity for zero parameters, always in SO(c)."""
    S = ad.as_tensor(skew_params)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ad.ShapeError(f"orthogonal parametrization needs a square matrix, got {S.shape}")
    return ad.expm(ad.sub(S, ad.transpose(S)))


# ----------------------------------------------------------- vector field


@dataclass
class VectorField:
    """Multiplier plus epsilon-weighted network correction, wired per problem.

    ``networks`` holds one network for second-order wiring (it perturbs the
    velocity equation) and one per channel for first-order wiring, each
    consuming all channels.  Channels are stacked along the first spatial
    axis for dimensionwise networks and flattened for MLPs.
    """

    multiplier: LinearSpectralOperator
    epsilon: float = 0.0
    networks: list = field(default_factory=list)
    wiring: str = "first_order"
    channels: int = 1
    in_scale: float = 1.0
    out_scale: float = 1.0

    def __post_init__(self):
        if self.wiring not in WIRINGS:
            raise ValueError(f"unknown wiring {self.wiring!r}")
        if self.wiring == "second_order":
            if self.channels != 2:
                raise ValueError("second-order wiring needs exactly two channels")
            if len(self.networks) not in (0, 1):
                raise ValueError("second-order wiring takes a single network")
        elif len(self.networks) not in (0, self.channels):
            raise ValueError("first-order wiring needs one network per channel")

    @property
    def state_shape(self) -> tuple:
        return (self.channels,) + self.multiplier.basis.shape

    def parameters(self) -> list:
        return [p for net in self.networks for p in net.parameters()]

    def _network_input(self, state: Tensor, net) -> Tensor:
        if self.wiring == "second_order":
            x = state[0]
        elif self.channels == 1:
            x = state[0]
        elif isinstance(net, DimwiseStack):
            x = ad.concatenate([state[k] for k in range(self.channels)], axis=0)
        else:
            x = state
        if isinstance(net, Mlp):
            x = ad.reshape(x, (-1,))
        return ad.mul(x, 1.0 / self.in_scale) if self.in_scale != 1.0 else x

    def _correction(self, state: Tensor, net) -> Tensor:
        out = network_forward(net, self._network_input(state, net))
        out = ad.reshape(out, self.multiplier.basis.shape)
        return ad.mul(out, self.epsilon * self.out_scale)

    def __call__(self, state) -> Tensor:
        return field_eval(self, state)


def field_eval(vf: VectorField, state) -> Tensor:
    """Time derivative of a coefficient state ``(channels, *modes)``."""
    state = ad.as_tensor(state)
    if tuple(state.shape) != vf.state_shape:
        raise ValueError(f"state shape {state.shape} does not match wiring {vf.state_shape}")
    use_net = vf.epsilon != 0.0 and len(vf.networks) > 0
    if vf.wiring == "second_order":
        u, v = state[0], state[1]
        accel = vf.multiplier(u)
        if use_net:
            accel = ad.add(accel, vf._correction(state, vf.networks[0]))
        return ad.stack([v, accel], axis=0)
    lin = vf.multiplier(state)
    if not use_net:
        return lin
    corr = ad.stack([vf._correction(state, net) for net in vf.networks], axis=0)
    return ad.add(lin, corr)


# ------------------------------------------------------------ checkpoints

_MAGIC = "specnode-checkpoint"


def save_checkpoint(path, named_params: dict, seed: int, config_hash: str = "") -> None:
    """Write parameters as text: header, then ``param name shape`` and value rows.

    Values use the shortest round-trip decimal form, so reading them back is
    exact.
    """
    lines = [f"{_MAGIC} 1 seed={int(seed)} config={config_hash or '-'} count={len(named_params)}"]
    for name, p in named_params.items():
        data = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
        shape = "x".join(str(s) for s in data.shape) or "scalar"
        lines.append(f"param {name} {shape}")
        rows = data.reshape(data.shape[0], -1) if data.ndim >= 1 else data.reshape(1, 1)
        for row in rows:
            lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(arrays by name, header fields)``."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if not head or head[0] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    header = dict(item.split("=", 1) for item in head[2:])
    arrays = {}
    i = 1
    while i < len(lines):
        tag, name, shape_txt = lines[i].split()
        if tag != "param":
            raise ValueError(f"malformed checkpoint line {i + 1}")
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split("x"))
        nrows = 1 if not shape else shape[0]
        rows = [[float(v) for v in lines[i + 1 + r].split()] for r in range(nrows)]
        arrays[name] = np.array(rows, dtype=np.float64).reshape(shape)
        i += 1 + nrows
    if len(arrays) != int(header.get("count", len(arrays))):
        raise ValueError("checkpoint parameter count does not match its header")
    return arrays, header
