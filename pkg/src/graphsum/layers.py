"""Shared transformer building blocks over :mod:`graphsum.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class Ctx:
    """Per-forward-pass switches: training mode and the dropout generator."""
    train: bool = False
    rng: Optional[np.random.Generator] = None
    dropout: float = 0.0

    def drop(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.dropout, self.train, self.rng)


EVAL = Ctx()


def sinusoid_table(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d // 2])
    return pe


def linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    y = T.matmul(x, params[prefix + ".w"])
    b = params.get(prefix + ".b")
    return y if b is None else T.add(y, b)


def layer_norm(x: Tensor, params: dict, prefix: str, eps: float) -> Tensor:
    return T.layer_norm(x, params[prefix + ".gain"], params[prefix + ".offset"], eps)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d_head)."""
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, heads, d // heads)
    k = len(lead)
    return T.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, n, d_head) -> (..., n, heads * d_head)."""
    *lead, h, n, dh = x.shape
    k = len(lead)
    x = T.transpose(x, tuple(range(k)) + (k + 1, k, k + 2))
    return x.reshape(*lead, n, h * dh)


def attention(q_in: Tensor, kv_in: Tensor, params: dict, prefix: str, heads: int, ctx: Ctx,
              mask=None, bias=None, out_proj: bool = True):
    """Scaled dot-product multi-head attention.

    ``mask`` broadcasts against the (..., heads, n_q, n_k) logits; ``bias`` is
    added to the logits of every head. Returns the output and the attention
    weights.
    """
    q = split_heads(linear(q_in, params, prefix + ".q"), heads)
    k = split_heads(linear(kv_in, params, prefix + ".k"), heads)
    v = split_heads(linear(kv_in, params, prefix + ".v"), heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), scale)
    weights = T.softmax_with_bias(logits, bias, mask)
    out = merge_heads(T.matmul(ctx.drop(weights), v))
    if out_proj:
        out = linear(out, params, prefix + ".o")
    return out, weights


def feed_forward(x: Tensor, params: dict, prefix: str, ctx: Ctx) -> Tensor:
    h = T.relu(linear(x, params, prefix + ".ff1"))
    return linear(ctx.drop(h), params, prefix + ".ff2")


def check(x: Tensor, where: str) -> Tensor:
    T.check_finite(x, where)
    return x
