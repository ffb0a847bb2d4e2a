"""Network building blocks: linear maps, layer norm, masked multi-head
attention and transformer encoder blocks.

All blocks run on the tape in tensor.py. Masks are plain numpy bool arrays;
masked rows are excluded from attention and zeroed at block boundaries so
padding can never leak into a summary statistic.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import ConfigError, DimensionError
from .tensor import Tensor, assert_finite

__all__ = [
    "Module",
    "Linear",
    "LayerNorm",
    "FeedForward",
    "MultiheadAttention",
    "EncoderBlock",
    "EncoderStack",
    "dropout",
    "masked_mean",
]


class Module:
    """Minimal parameter container with train/eval mode propagation."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}
        self.training = False

    def register(self, name: str, value):
        if isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, Tensor):
            self._params[name] = value
        else:
            raise ConfigError(f"cannot register {type(value)!r} as {name}")
        return value

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def set_training(self, flag: bool):
        self.training = flag
        for child in self._children.values():
            child.set_training(flag)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _param(rng: np.random.Generator, shape, scale: float, dtype) -> Tensor:
    data = rng.uniform(-scale, scale, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Linear(Module):
    """y = x @ W + b with exact reverse-mode gradients."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        scale = 0.0 if zero_init else math.sqrt(6.0 / (n_in + n_out))
        self.w = self.register("w", _param(rng, (n_in, n_out), scale, dtype))
        self.b = self.register("b", Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"linear expects last dim {self.n_in}, got {x.shape}")
        if x.ndim <= 2:
            return x @ self.w + self.b
        # one flat gemm instead of a stack of small ones
        lead = x.shape[:-1]
        out = x.reshape(-1, self.n_in) @ self.w + self.b
        return out.reshape(*lead, self.n_out)


class LayerNorm(Module):
    def __init__(self, width: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.register("gamma", Tensor(np.ones(width, dtype=dtype), requires_grad=True))
        self.beta = self.register("beta", Tensor(np.zeros(width, dtype=dtype), requires_grad=True))

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return self.gamma * (centered / (var + self.eps).sqrt()) + self.beta


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rng is None (evaluation mode)."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def masked_mean(x: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Mean over `axis` counting only positions where mask is true.

    mask broadcasts against x up to the feature dimension. Rows with an
    empty mask yield zeros (caller decides whether that is an error).
    """
    m = np.asarray(mask, dtype=x.dtype)
    while m.ndim < x.ndim:
        m = m[..., None]
    total = (x * Tensor(m)).sum(axis=axis)
    count = np.maximum(m.sum(axis=axis), 1.0)
    return total * Tensor(1.0 / count)


class MultiheadAttention(Module):
    """Self-attention over the second-to-last axis with a validity mask.

    Rows where mask is false neither attend nor are attended to, and their
    output rows are zeroed.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"width {width} not divisible by heads {heads}")
        self.width, self.heads = width, heads
        self.head_dim = width // heads
        self.wq = self.register("wq", Linear(width, width, rng, dtype))
        self.wk = self.register("wk", Linear(width, width, rng, dtype))
        self.wv = self.register("wv", Linear(width, width, rng, dtype))
        self.wo = self.register("wo", Linear(width, width, rng, dtype))

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        if x.shape[-1] != self.width:
            raise DimensionError(f"attention expects width {self.width}, got {x.shape}")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape((1,) + x.shape)
            mask = np.asarray(mask)[None, :]
        b, n, _ = x.shape
        mask = np.asarray(mask, dtype=bool)

        def split(t: Tensor) -> Tensor:
            # (b, n, width) -> (b, heads, n, head_dim)
            return t.reshape(b, n, self.heads, self.head_dim).transpose((0, 2, 1, 3))

        q, k, v = split(self.wq(x)), split(self.wk(x)), split(self.wv(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(self.head_dim))
        # invalid keys get a large negative score; an all-invalid row then
        # softmaxes to uniform and is zeroed below
        bias = np.where(mask[:, None, None, :], 0.0, -1e30).astype(x.dtype)
        weights = (scores + Tensor(bias)).softmax(axis=-1)
        out = (weights @ v).transpose((0, 2, 1, 3)).reshape(b, n, self.width)
        out = self.wo(out) * Tensor(mask[:, :, None].astype(x.dtype))
        return out.reshape(out.shape[1:]) if squeeze else out


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.up = self.register("up", Linear(width, hidden, rng, dtype))
        self.down = self.register("down", Linear(hidden, width, rng, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(self.up(x).gelu())


class EncoderBlock(Module):
    """Post-norm transformer encoder block: attention and feedforward
    sublayers with residuals, layer norm, dropout and gelu."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator,
                 dropout_rate: float = 0.01, dtype=np.float32, name: str = "encoder"):
        super().__init__()
        self.name = name
        self.dropout_rate = dropout_rate
        self.attn = self.register("attn", MultiheadAttention(width, heads, rng, dtype))
        self.norm1 = self.register("norm1", LayerNorm(width, dtype))
        self.ff = self.register("ff", FeedForward(width, width, rng, dtype))
        self.norm2 = self.register("norm2", LayerNorm(width, dtype))

    def __call__(self, x: Tensor, mask: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        if not self.training:
            rng = None
        mask = np.asarray(mask, dtype=bool)
        keep = Tensor(np.expand_dims(mask, -1).astype(x.dtype))
        h = self.norm1(x + dropout(self.attn(x, mask), self.dropout_rate, rng)) * keep
        h = self.norm2(h + dropout(self.ff(h), self.dropout_rate, rng)) * keep
        assert_finite(h, f"{self.name} output")
        return h


class EncoderStack(Module):
    def __init__(self, width: int, blocks: int, heads: int, rng: np.random.Generator,
                 dropout_rate: float = 0.01, dtype=np.float32, name: str = "encoder"):
        super().__init__()
        self.blocks = []
        for i in range(blocks):
            blk = EncoderBlock(width, heads, rng, dropout_rate, dtype, name=f"{name}[{i}]")
            self.register(f"block{i}", blk)
            self.blocks.append(blk)

    def __call__(self, x: Tensor, mask: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        for blk in self.blocks:
            x = blk(x, mask, rng)
        return x
