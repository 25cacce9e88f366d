"""Parameter initialization and the end-to-end model wrapper."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .decoder import decode_logits
from .encoder import EncoderOutput, encode
from .errors import ConfigError
from .layers import EVAL, Ctx
from .tensor import Tensor
from .text import PAD, Instance


def _xavier(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Named learnable tensors in a fixed, deterministic creation order."""
    if cfg.vocab_size < 6:
        raise ConfigError(f"vocab_size must be set (got {cfg.vocab_size})")
    cfg.validate()
    rng = np.random.default_rng(seed)
    d, ff = cfg.d_model, cfg.d_ff
    params: dict[str, np.ndarray] = {}

    def lin(name, fan_in, fan_out, bias=True):
        params[name + ".w"] = _xavier(rng, fan_in, fan_out)
        if bias:
            params[name + ".b"] = np.zeros(fan_out)

    def norm(name):
        params[name + ".gain"] = np.ones(d)
        params[name + ".offset"] = np.zeros(d)

    emb = rng.normal(0.0, d ** -0.5, size=(cfg.vocab_size, d))
    emb[PAD] = 0.0
    params["embed"] = emb
    params["para_embed"] = rng.normal(0.0, 0.02, size=(cfg.max_paragraphs, d))

    for k in range(cfg.token_layers):
        p = f"enc.tok{k}"
        for proj in "qkvo":
            lin(f"{p}.attn.{proj}", d, d)
        norm(p + ".ln1")
        lin(p + ".ff1", d, ff)
        lin(p + ".ff2", ff, d)
        norm(p + ".ln2")
    for k in range(cfg.graph_layers):
        p = f"enc.graph{k}"
        for proj in "qkv":
            lin(f"{p}.attn.{proj}", d, d, bias=False)
        lin(p + ".ff1", d, ff)
        lin(p + ".ff2", ff, d)
        norm(p + ".ln")
    for k in range(cfg.decoder_layers):
        p = f"dec{k}"
        for proj in "qkvo":
            lin(f"{p}.self.{proj}", d, d)
        norm(p + ".ln1")
        for proj in ("gq", "gk", "gv", "lq", "lk", "lv"):
            lin(f"{p}.{proj}", d, d, bias=False)
        params[p + ".pos.w"] = _xavier(rng, d, d)
        params[p + ".pos.u"] = _xavier(rng, d, 1)
        params[p + ".fuse.w"] = _xavier(rng, 2 * d, d)
        norm(p + ".ln2")
        lin(p + ".ff1", d, ff)
        lin(p + ".ff2", ff, d)
        norm(p + ".ln3")
    return {name: T.parameter(value, name) for name, value in params.items()}


class GraphSum:
    """Encoder-decoder bundle: configuration plus its named parameters."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg.validate()
        self.params = params if params is not None else init_params(cfg, seed)

    def encode(self, paragraphs, graph, ctx: Ctx = EVAL) -> EncoderOutput:
        return encode(paragraphs, graph, self.params, self.cfg, ctx=ctx)

    def logits(self, prefix_ids, enc: EncoderOutput, graph, ctx: Ctx = EVAL, trace=None) -> Tensor:
        return decode_logits(prefix_ids, enc, graph, self.params, self.cfg, ctx, trace=trace)

    def forward(self, instance: Instance, graph, ctx: Ctx = EVAL) -> Tensor:
        """Teacher-forced logits (T-1, V) predicting ``summary[1:]``."""
        enc = self.encode(instance.paragraphs, graph, ctx)
        return self.logits(np.asarray(instance.summary[:-1]), enc, graph, ctx)

    def loss(self, instance: Instance, graph, epsilon: float = 0.1, ctx: Ctx = EVAL,
             reduction: str = "sum", kl: bool = True) -> tuple[Tensor, int]:
        """Label-smoothed loss over the summary; returns (loss, number of target tokens)."""
        logits = self.forward(instance, graph, ctx)
        targets = np.asarray(instance.summary[1:])
        loss = T.cross_entropy_label_smoothed(logits, targets, epsilon, PAD, reduction=reduction, kl=kl)
        return loss, int((targets != PAD).sum())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())
