"""Token-level transformer layers followed by graph-informed paragraph layers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError, ShapeError, ValidationError
from .graphs import GraphMatrix
from .layers import EVAL, Ctx, attention, check, feed_forward, layer_norm, linear, sinusoid_table
from .tensor import NEG_LARGE, Tensor
from .text import PAD, PBOUND


@dataclass
class EncoderOutput:
    token_states: Tensor        # L x n x d
    paragraph_states: Tensor    # L x d
    token_mask: np.ndarray      # L x n, True on real tokens
    paragraph_mask: np.ndarray  # L, True on real paragraphs

    @property
    def num_paragraphs(self) -> int:
        return self.paragraph_states.shape[0]


def pad_paragraphs(paragraphs) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad paragraph id lists into an (L, n) array plus its validity mask."""
    if not len(paragraphs):
        raise ValidationError("instance has no paragraphs")
    n = max(len(p) for p in paragraphs)
    ids = np.full((len(paragraphs), n), PAD, dtype=np.int64)
    for i, p in enumerate(paragraphs):
        ids[i, :len(p)] = p
    return ids, ids != PAD


def embed_tokens(ids: np.ndarray, params: dict, cfg: ModelConfig, ctx: Ctx = EVAL) -> Tensor:
    """Scaled token embedding + within-paragraph sinusoid + learned paragraph index."""
    L, n = ids.shape
    if n > cfg.max_paragraph_tokens + 1:
        raise ValidationError(f"paragraph length {n} exceeds {cfg.max_paragraph_tokens} tokens plus boundary")
    if L > cfg.max_paragraphs:
        raise ValidationError(f"{L} paragraphs exceed max_paragraphs={cfg.max_paragraphs}")
    d = cfg.d_model
    x = T.mul(T.embedding(params["embed"], ids), math.sqrt(d))
    x = T.add(x, sinusoid_table(n, d))
    para = T.embedding(params["para_embed"], np.arange(L)).reshape(L, 1, d)
    x = T.add(x, para)
    return ctx.drop(x)


def token_encoder_layer(x: Tensor, mask: np.ndarray, params: dict, prefix: str, cfg: ModelConfig,
                        ctx: Ctx = EVAL) -> Tensor:
    """Self-attention confined to each paragraph (paragraphs act as the batch axis)."""
    key_mask = mask[:, None, None, :]
    a, _ = attention(x, x, params, prefix + ".attn", cfg.heads, ctx, mask=key_mask)
    x = layer_norm(T.add(x, ctx.drop(a)), params, prefix + ".ln1", cfg.ln_eps)
    f = feed_forward(x, params, prefix, ctx)
    return check(layer_norm(T.add(x, ctx.drop(f)), params, prefix + ".ln2", cfg.ln_eps), prefix)


def pool_paragraphs(token_states: Tensor, ids: np.ndarray) -> Tensor:
    """Paragraph vector = state at the leading boundary token."""
    if not (ids[:, 0] == PBOUND).all():
        bad = np.flatnonzero(ids[:, 0] != PBOUND).tolist()
        raise ValidationError(f"paragraphs {bad} do not start with the boundary token")
    return token_states[:, 0, :]


def graph_bias(g, sigma: float, valid: np.ndarray | None = None) -> np.ndarray:
    """Gaussian bias ``-(1 - G)^2 / (2 sigma^2)``; invalid rows/columns get a large negative."""
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    w = g.weights if isinstance(g, GraphMatrix) else np.asarray(g, dtype=np.float64)
    bias = -((1.0 - w) ** 2) / (2.0 * sigma * sigma)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        bad = ~(valid[:, None] & valid[None, :])
        bias = np.where(bad, NEG_LARGE, bias)
    return bias


def graph_encoding_layer(x: Tensor, bias, params: dict, prefix: str, cfg: ModelConfig,
                         ctx: Ctx = EVAL, return_weights: bool = False):
    """Graph-informed self-attention over paragraph vectors (x: L x d).

    Every head adds the same ``bias`` to its logits; ``bias=None`` is the
    plain attention path. The context vector ``u`` enters the feed-forward
    net together with the residual, followed by a single layer norm::

        p = W2 relu(W1 (u + x));  x' = LayerNorm(p + x)
    """
    if bias is not None and np.shape(bias) != (x.shape[0], x.shape[0]):
        raise ShapeError(f"graph bias shape {np.shape(bias)} does not match {x.shape[0]} paragraphs")
    u, weights = attention(x, x, params, prefix + ".attn", cfg.heads, ctx, bias=bias, out_proj=False)
    h = T.relu(linear(T.add(u, x), params, prefix + ".ff1"))
    p = linear(ctx.drop(h), params, prefix + ".ff2")
    out = check(layer_norm(T.add(ctx.drop(p), x), params, prefix + ".ln", cfg.ln_eps), prefix)
    return (out, weights) if return_weights else out


def encode(paragraphs, g, params: dict, cfg: ModelConfig, ablate_graph_enc: bool | None = None,
           ctx: Ctx = EVAL) -> EncoderOutput:
    """embed -> token layers -> boundary pooling -> graph layers."""
    ids, mask = pad_paragraphs(paragraphs)
    L = ids.shape[0]
    weights = g.weights if isinstance(g, GraphMatrix) else np.asarray(g)
    if weights.shape != (L, L):
        raise ValidationError(f"graph of size {weights.shape[0]} does not match {L} paragraphs")
    if ablate_graph_enc is None:
        ablate_graph_enc = cfg.ablate_graph_enc
    x = embed_tokens(ids, params, cfg, ctx)
    for k in range(cfg.token_layers):
        x = token_encoder_layer(x, mask, params, f"enc.tok{k}", cfg, ctx)
    p = pool_paragraphs(x, ids)
    valid = np.ones(L, dtype=bool)
    bias = None if ablate_graph_enc else graph_bias(weights, cfg.sigma, valid)
    for k in range(cfg.graph_layers):
        p = graph_encoding_layer(p, bias, params, f"enc.graph{k}", cfg, ctx)
    return EncoderOutput(x, p, mask, valid)
