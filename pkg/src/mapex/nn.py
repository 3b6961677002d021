"""Dense feed-forward networks with hand-written backpropagation.

All parameters of a network live in one flat float64 vector; per-layer
weights and biases are views into it. Optimizer and target-network updates
therefore operate on a single array, which keeps the Python overhead of a
training step small.

Flat layout, layer by layer: ``W`` (shape ``(out, in)``, row-major) followed
by ``b`` (shape ``(out,)``). A layer computes ``h @ W.T + b``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, FormatError, UnsupportedVersionError

OUTPUT_ACTIVATIONS = ("identity", "tanh")

_NET_MAGIC = b"MPXN"
_NET_VERSION = 1


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


class DenseNetwork:
    """Fully connected network with tanh hidden units.

    ``output_activation="tanh"`` squashes the output to
    ``[-output_scale, output_scale]`` (actors); ``"identity"`` leaves it
    linear (critics).
    """

    def __init__(
        self,
        layer_sizes: Sequence[int],
        output_activation: str = "identity",
        output_scale: float = 1.0,
        params: np.ndarray | None = None,
    ):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise DimensionError(f"layer sizes must be >= 2 positive integers, got {layer_sizes!r}")
        if output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output_activation!r}")
        self.layer_sizes = sizes
        self.output_activation = output_activation
        self.output_scale = float(output_scale)

        n = self.parameter_count(sizes)
        if params is None:
            self.params = np.zeros(n)
        else:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (n,):
                raise DimensionError(f"expected {n} parameters, got shape {params.shape}")
            self.params = params.copy()
        self._bind_views()

    @staticmethod
    def parameter_count(layer_sizes: Sequence[int]) -> int:
        return sum(o * i + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))

    def _bind_views(self) -> None:
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(self.params[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in))
            pos += fan_out * fan_in
            self.biases.append(self.params[pos : pos + fan_out])
            pos += fan_out

    @classmethod
    def initialize(
        cls,
        layer_sizes: Sequence[int],
        seed=None,
        output_activation: str = "identity",
        output_scale: float = 1.0,
    ) -> "DenseNetwork":
        """He-style uniform init, ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
        net = cls(layer_sizes, output_activation, output_scale)
        rng = _as_rng(seed)
        for w in net.weights:
            limit = np.sqrt(6.0 / w.shape[1])
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return net

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "DenseNetwork":
        return DenseNetwork(self.layer_sizes, self.output_activation, self.output_scale, self.params)

    def same_architecture(self, other: "DenseNetwork") -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.output_activation == other.output_activation
            and self.output_scale == other.output_scale
        )

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"network expects input of length {self.input_dim}, got shape {np.shape(x)}"
            )
        return x, single

    def forward(self, x) -> np.ndarray:
        """Evaluate on a vector or a batch (rows are samples)."""
        x, single = self._check_input(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T
            z += b
            if i < last:
                h = np.tanh(z, out=z)
            elif self.output_activation == "tanh":
                h = np.tanh(z, out=z)
                if self.output_scale != 1.0:
                    h *= self.output_scale
            else:
                h = z
        return h[0] if single else h

    def forward_cache(self, x) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batched forward pass that also returns the activations needed by ``backward``."""
        x, _ = self._check_input(x)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T
            z += b
            if i < last or self.output_activation == "tanh":
                h = np.tanh(z, out=z)
            else:
                h = z
            acts.append(h)
        out = acts[-1]
        if self.output_activation == "tanh" and self.output_scale != 1.0:
            out = out * self.output_scale
        return out, acts

    def backward(self, acts: list[np.ndarray], upstream) -> tuple[np.ndarray, np.ndarray]:
        """Gradients of ``sum(upstream * output)`` w.r.t. the flat parameters and the input."""
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        if upstream.shape != acts[-1].shape:
            raise DimensionError(
                f"upstream shape {upstream.shape} does not match output shape {acts[-1].shape}"
            )
        grad = np.empty_like(self.params)
        pos_end = grad.size
        last = len(self.weights) - 1
        delta = upstream
        if self.output_activation == "tanh":
            t = acts[-1]
            delta = delta * (self.output_scale * (1.0 - t * t))
        for i in range(last, -1, -1):
            w = self.weights[i]
            h_in = acts[i]
            fan_out, fan_in = w.shape
            grad[pos_end - fan_out : pos_end] = delta.sum(axis=0)
            pos_end -= fan_out
            grad[pos_end - fan_out * fan_in : pos_end] = (delta.T @ h_in).ravel()
            pos_end -= fan_out * fan_in
            delta = delta @ w
            if i > 0:
                delta *= 1.0 - h_in * h_in
        return grad, delta

    def gradients(self, x, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Parameter and input gradients of ``upstream . forward(x)``.

        Input gradient has the same shape as ``x`` (vector in, vector out).
        """
        x_arr = np.asarray(x, dtype=np.float64)
        up = np.asarray(upstream, dtype=np.float64)
        if (x_arr.ndim == 1) != (up.ndim == 1):
            raise DimensionError("input and upstream must both be vectors or both be batches")
        _, acts = self.forward_cache(x_arr)
        grad, dx = self.backward(acts, up)
        return grad, (dx[0] if x_arr.ndim == 1 else dx)

    # serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _NET_MAGIC + struct.pack("<II", _NET_VERSION, len(self.layer_sizes))
        header += struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes)
        header += struct.pack(
            "<Id", OUTPUT_ACTIVATIONS.index(self.output_activation), self.output_scale
        )
        return header + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DenseNetwork":
        if len(data) < 12 or data[:4] != _NET_MAGIC:
            raise FormatError("not a network parameter file")
        version, n_sizes = struct.unpack_from("<II", data, 4)
        if version != _NET_VERSION:
            raise UnsupportedVersionError(f"unsupported network file version {version}")
        pos = 12
        if len(data) < pos + 4 * n_sizes + 12:
            raise FormatError("truncated network header")
        sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
        pos += 4 * n_sizes
        act_code, scale = struct.unpack_from("<Id", data, pos)
        pos += 12
        if act_code >= len(OUTPUT_ACTIVATIONS):
            raise FormatError(f"unknown activation code {act_code}")
        n = cls.parameter_count(sizes)
        if len(data) != pos + 8 * n:
            raise FormatError(f"expected {n} parameters, file holds {(len(data) - pos) / 8:g}")
        params = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        return cls(sizes, OUTPUT_ACTIVATIONS[act_code], scale, params)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DenseNetwork":
        return cls.from_bytes(Path(path).read_bytes())

    def __repr__(self) -> str:
        return f"DenseNetwork({list(self.layer_sizes)}, output={self.output_activation!r})"


def mlp(
    input_dim: int,
    output_dim: int,
    hidden: int | Sequence[int] = 256,
    n_hidden: int = 2,
    seed=None,
    output_activation: str = "identity",
    output_scale: float = 1.0,
) -> DenseNetwork:
    if isinstance(hidden, int):
        hidden = [hidden] * n_hidden
    sizes = [input_dim, *hidden, output_dim]
    return DenseNetwork.initialize(sizes, seed, output_activation, output_scale)


@dataclass
class OptimizerState:
    """Adam moments for one network's flat parameter vector."""

    lr: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _scratch: np.ndarray = field(default=None, repr=False, compare=False)

    @classmethod
    def for_network(cls, net: DenseNetwork, lr: float = 3e-4, **kwargs) -> "OptimizerState":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return cls(lr=lr, m=np.zeros_like(net.params), v=np.zeros_like(net.params), **kwargs)


Adam = OptimizerState


def apply_update(net: DenseNetwork, opt: OptimizerState, grad: np.ndarray) -> DenseNetwork:
    """One Adam step on ``net`` in place; returns ``net`` for chaining."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != net.params.shape or opt.m.shape != net.params.shape:
        raise DimensionError(
            f"gradient shape {grad.shape} does not match parameters {net.params.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient; training diverged")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    opt.m *= b1
    opt.m += (1.0 - b1) * grad
    opt.v *= b2
    opt.v += (1.0 - b2) * (grad * grad)
    if opt._scratch is None or opt._scratch.shape != grad.shape:
        opt._scratch = np.empty_like(grad)
    denom = opt._scratch
    np.sqrt(opt.v / (1.0 - b2**opt.step), out=denom)
    denom += opt.eps
    # lr * m_hat / (sqrt(v_hat) + eps)
    net.params -= (opt.lr / (1.0 - b1**opt.step)) * opt.m / denom
    return net


def polyak_blend(target: DenseNetwork, source: DenseNetwork, tau: float) -> DenseNetwork:
    """``target <- (1 - tau) * target + tau * source``, in place."""
    if not target.same_architecture(source):
        raise DimensionError("polyak_blend requires identical architectures")
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if tau == 1.0:
        target.params[...] = source.params
    elif tau > 0.0:
        # written as an increment so blending identical nets is exactly a no-op
        target.params += tau * (source.params - target.params)
    return target
