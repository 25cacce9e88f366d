"""Graph decoding layers with hierarchical (global graph + local normalized) attention."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .encoder import EncoderOutput
from .errors import ValidationError
from .graphs import GraphMatrix
from .layers import EVAL, Ctx, attention, check, feed_forward, layer_norm, linear, merge_heads, sinusoid_table, split_heads
from .tensor import Tensor
from .text import BOS, PAD


def predict_central_position(y: Tensor, params: dict, prefix: str, L: int) -> Tensor:
    """``s = L * sigmoid(U_p^T tanh(W_p y))`` for every row of ``y`` (..., d) -> (...)."""
    h = T.tanh(T.matmul(y, params[prefix + ".pos.w"]))
    pre = T.matmul(h, params[prefix + ".pos.u"])  # (..., 1)
    s = T.mul(T.sigmoid(pre), float(L))
    return s.reshape(s.shape[:-1])


def graph_row_at(g, s: Tensor, mode: str = "interpolate") -> Tensor:
    """Row of ``G`` at the continuous position ``s`` (shape (...)) -> (..., L).

    Row ``i`` sits at the cell center ``i + 0.5``; positions in between
    blend the two neighbouring rows linearly, so the result stays
    differentiable in ``s``.
    """
    w = g.weights if isinstance(g, GraphMatrix) else np.asarray(g, dtype=np.float64)
    L = w.shape[0]
    a = T.clip(T.sub(s, 0.5), 0.0, float(L - 1))
    if mode == "round":
        idx = np.clip(np.floor(s.data), 0, L - 1).astype(np.int64)
        return T.Tensor(w[idx])
    lo = np.floor(a.data).astype(np.int64)
    hi = np.minimum(lo + 1, L - 1)
    frac = T.sub(a, lo.astype(np.float64)).reshape(*a.shape, 1)
    return T.add(w[lo], T.mul(frac, w[hi] - w[lo]))


def gaussian_penalty(rows: Tensor, sigma: float) -> Tensor:
    gap = T.sub(1.0, rows)
    return T.mul(T.mul(gap, gap), -1.0 / (2.0 * sigma * sigma))


def global_graph_attention(y: Tensor, paragraph_states: Tensor, g, sigma: float, params: dict,
                           prefix: str, heads: int, ctx: Ctx = EVAL, use_graph: bool = True,
                           row_mode: str = "interpolate", paragraph_mask=None):
    """Paragraph-level attention regularized by the graph row at the central position.

    y: (B, T, d); paragraph_states: (L, d). Returns ``beta`` (B, H, T, L), the
    per-head global context merged to (B, T, d), and the central positions
    (B, T) or None when the graph is not used.
    """
    B, Tn, d = y.shape
    L = paragraph_states.shape[0]
    q = split_heads(linear(y, params, prefix + ".gq"), heads)                  # B H T dh
    k = split_heads(linear(paragraph_states, params, prefix + ".gk"), heads)   # H L dh
    v = split_heads(linear(paragraph_states, params, prefix + ".gv"), heads)   # H L dh
    e = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))
    s = None
    bias = None
    if use_graph:
        s = predict_central_position(y, params, prefix, L)
        rows = graph_row_at(g, s, row_mode)
        bias = gaussian_penalty(rows, sigma).reshape(B, 1, Tn, L)
    mask = None if paragraph_mask is None else np.asarray(paragraph_mask, dtype=bool)
    beta = T.softmax_with_bias(e, bias, mask)
    g_t = merge_heads(T.matmul(beta, v))
    return beta, g_t, s


def local_normalized_attention(y: Tensor, enc: EncoderOutput, beta: Tensor, params: dict, prefix: str,
                               heads: int, return_weights: bool = False):
    """Token attention within each paragraph, rescaled by the paragraph weights ``beta``.

    Returns the local context (B, T, d) and optionally the joint weights
    ``gamma_hat`` of shape (B, H, L, T, n), which sum to one over (L, n).
    """
    B, Tn, d = y.shape
    L, n, _ = enc.token_states.shape
    q = split_heads(linear(y, params, prefix + ".lq"), heads)                 # B H T dh
    q = q.reshape(B, heads, 1, Tn, q.shape[-1])
    k = split_heads(linear(enc.token_states, params, prefix + ".lk"), heads)  # L H n dh
    v = split_heads(linear(enc.token_states, params, prefix + ".lv"), heads)
    k = T.swapaxes(k, 0, 1).reshape(1, heads, L, n, -1)                       # 1 H L n dh
    v = T.swapaxes(v, 0, 1).reshape(1, heads, L, n, -1)
    logits = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / math.sqrt(q.shape[-1]))  # B H L T n
    gamma = T.softmax_with_bias(logits, None, enc.token_mask[:, None, :])
    scale = T.swapaxes(beta, 2, 3).reshape(B, heads, L, Tn, 1)
    gamma_hat = T.mul(gamma, scale)
    per_para = T.matmul(gamma_hat, v)                                         # B H L T dh
    l_t = merge_heads(T.tsum(per_para, axis=2))
    return (l_t, gamma_hat) if return_weights else l_t


def hierarchical_fuse(g_t: Tensor, l_t: Tensor, params: dict, prefix: str) -> Tensor:
    """``d_t = U_d^T [g_t, l_t]`` without activation."""
    return T.matmul(T.concat([g_t, l_t], axis=-1), params[prefix + ".fuse.w"])


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def graph_decoding_layer(y: Tensor, enc: EncoderOutput, g, params: dict, prefix: str, cfg: ModelConfig,
                         ctx: Ctx = EVAL, ablate_graph_dec: bool | None = None, trace: dict | None = None) -> Tensor:
    """Masked self-attention, hierarchical graph attention, feed-forward; each with residual + norm."""
    if ablate_graph_dec is None:
        ablate_graph_dec = cfg.ablate_graph_dec
    Tn = y.shape[1]
    a, _ = attention(y, y, params, prefix + ".self", cfg.heads, ctx, mask=causal_mask(Tn))
    y = layer_norm(T.add(y, ctx.drop(a)), params, prefix + ".ln1", cfg.ln_eps)
    beta, g_t, s = global_graph_attention(y, enc.paragraph_states, g, cfg.sigma, params, prefix, cfg.heads, ctx,
                                          use_graph=not ablate_graph_dec, row_mode=cfg.graph_row,
                                          paragraph_mask=enc.paragraph_mask)
    l_t = local_normalized_attention(y, enc, beta, params, prefix, cfg.heads)
    d_t = hierarchical_fuse(g_t, l_t, params, prefix)
    if trace is not None:
        trace[prefix] = {"beta": beta, "s": s}
    y = layer_norm(T.add(y, ctx.drop(d_t)), params, prefix + ".ln2", cfg.ln_eps)
    f = feed_forward(y, params, prefix, ctx)
    return check(layer_norm(T.add(y, ctx.drop(f)), params, prefix + ".ln3", cfg.ln_eps), prefix)


def embed_summary(prefix_ids: np.ndarray, params: dict, cfg: ModelConfig, ctx: Ctx = EVAL) -> Tensor:
    d = cfg.d_model
    x = T.mul(T.embedding(params["embed"], prefix_ids), math.sqrt(d))
    x = T.add(x, sinusoid_table(prefix_ids.shape[1], d))
    return ctx.drop(x)


def decode_logits(prefix_ids, enc: EncoderOutput, g, params: dict, cfg: ModelConfig, ctx: Ctx = EVAL,
                  ablate_graph_dec: bool | None = None, trace: dict | None = None) -> Tensor:
    """Run the decoder stack over (B, T) prefixes and project with the tied embedding -> (B, T, V)."""
    ids = np.asarray(prefix_ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.shape[1] == 0 or not (ids[:, 0] == BOS).all():
        raise ValidationError("decoder prefix must begin with BOS")
    if (ids == PAD).any():
        raise ValidationError("decoder prefix contains padding")
    y = embed_summary(ids, params, cfg, ctx)
    for k in range(cfg.decoder_layers):
        y = graph_decoding_layer(y, enc, g, params, f"dec{k}", cfg, ctx, ablate_graph_dec, trace)
    logits = T.matmul(y, T.transpose(params["embed"]))
    return logits.reshape(logits.shape[1:]) if squeeze else logits
