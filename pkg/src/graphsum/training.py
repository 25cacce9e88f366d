"""Maximum-likelihood training: Noam schedule, Adam, clipping, accumulation, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig, model_config_from_dict
from .errors import ConfigError, IntegrityError, NumericError, ValidationError
from .graphs import GraphMatrix
from .layers import Ctx
from .model import GraphSum, init_params
from .text import Instance, Vocabulary

log = logging.getLogger(__name__)

MAGIC = b"GSUMCKPT"
FORMAT_VERSION = 1


def lr_at(step: int, cfg: TrainConfig, d_model: int) -> float:
    """Noam schedule: linear warmup then inverse-square-root decay, peaking at ``warmup_steps``."""
    if step < 1:
        raise ConfigError(f"learning-rate step must be >= 1, got {step}")
    return cfg.lr_factor * d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def clip_gradients(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Rescale in place so the global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState, lr: float, cfg: TrainConfig):
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


def _check_aligned(instances, graphs):
    if len(instances) != len(graphs):
        raise ValidationError(f"{len(instances)} instances but {len(graphs)} graphs")
    bad = [k for k, (inst, g) in enumerate(zip(instances, graphs))
           if np.shape(g.weights if isinstance(g, GraphMatrix) else g) != (inst.num_paragraphs,) * 2]
    if bad:
        raise ValidationError(f"graph size does not match paragraph count for instances {bad[:20]}")


class Trainer:
    """Owns the model, optimizer moments, dropout generator and data order."""

    def __init__(self, model: GraphSum, cfg: TrainConfig, vocab: Vocabulary | None = None):
        self.model = model
        self.cfg = cfg.validate()
        self.vocab = vocab
        self.opt = AdamState()
        self.rng = np.random.default_rng(cfg.seed)
        self.micro = 0
        self.pending_tokens = 0
        self.pending_loss = 0.0
        self.cursor = 0          # position in the data stream, in instances
        self.history: list[dict] = []

    @property
    def step(self) -> int:
        return self.opt.step

    def _ctx(self) -> Ctx:
        return Ctx(True, self.rng, self.model.cfg.dropout)

    def train_step(self, batch: Sequence[tuple[Instance, object]]) -> dict | None:
        """Forward and backward over one micro-batch; update every ``accumulation`` calls.

        Gradients are summed over tokens and divided by the token count of
        the whole effective batch at update time, so 4 micro-batches of one
        instance give the same update as one batch of four. Returns the
        update record (step, lr, loss, grad_norm) when an update happened.
        """
        if not batch:
            raise ValidationError("empty batch")
        eps = self.cfg.label_smoothing
        for inst, graph in batch:
            loss, ntok = self.model.loss(inst, graph, eps, self._ctx(), reduction="sum", kl=True)
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite loss at step {self.step + 1}: {self._diagnostics()}")
            loss.backward()
            self.pending_loss += loss.item()
            self.pending_tokens += ntok
        self.micro += 1
        if self.micro % self.cfg.accumulation:
            return None
        return self._update()

    def _update(self) -> dict:
        params = self.model.params
        denom = float(self.pending_tokens)
        grads = {}
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            grads[name] = g / denom
        norm = clip_gradients(list(grads.values()), self.cfg.clip_norm)
        lr = lr_at(self.step + 1, self.cfg, self.model.cfg.d_model)
        adam_update(params, grads, self.opt, lr, self.cfg)
        self.model.zero_grad()
        record = {"step": self.step, "lr": lr, "loss": self.pending_loss / denom, "grad_norm": norm}
        self.pending_loss = 0.0
        self.pending_tokens = 0
        return record

    def _diagnostics(self) -> str:
        worst = {name: float(np.max(np.abs(p.data))) for name, p in self.model.params.items()}
        top = sorted(worst.items(), key=lambda kv: -kv[1])[:5]
        return ", ".join(f"{k}={v:.3g}" for k, v in top)

    def next_batch(self, instances, graphs) -> list:
        """Deterministic data order: epoch ``e`` is a permutation seeded by (seed, e)."""
        n = len(instances)
        out = []
        for _ in range(self.cfg.batch_size):
            epoch, pos = divmod(self.cursor, n)
            order = np.random.default_rng([self.cfg.seed, epoch]).permutation(n)
            k = int(order[pos])
            out.append((instances[k], graphs[k]))
            self.cursor += 1
        return out

    def fit(self, instances: Sequence[Instance], graphs: Sequence, max_steps: int | None = None,
            checkpoint_dir: str | Path | None = None, log_path: str | Path | None = None,
            on_update=None) -> list[dict]:
        _check_aligned(instances, graphs)
        max_steps = self.cfg.max_steps if max_steps is None else max_steps
        logfh = open(log_path, "a") if log_path else None
        t0 = time.time()
        try:
            while self.step < max_steps:
                rec = self.train_step(self.next_batch(instances, graphs))
                if rec is None:
                    continue
                self.history.append(rec)
                if logfh:
                    logfh.write(json.dumps({"step": rec["step"], "lr": rec["lr"], "loss": rec["loss"]}) + "\n")
                    logfh.flush()
                if self.step % self.cfg.log_every == 0:
                    log.info("step %d lr %.3g loss %.4f (%.1fs)", self.step, rec["lr"], rec["loss"], time.time() - t0)
                if checkpoint_dir and (self.step % self.cfg.checkpoint_every == 0 or self.step == max_steps):
                    save_checkpoint(self, Path(checkpoint_dir) / f"step{self.step:07d}.ckpt")
                if on_update:
                    on_update(rec)
        finally:
            if logfh:
                logfh.close()
        return self.history


def train(instances, graphs, model_cfg: ModelConfig, train_cfg: TrainConfig, vocab: Vocabulary | None = None,
          checkpoint_dir=None, log_path=None, resume: str | Path | None = None) -> Trainer:
    _check_aligned(instances, graphs)
    if resume:
        trainer = load_checkpoint(resume)
        if asdict(trainer.model.cfg) != asdict(model_cfg):
            raise ConfigError("model configuration differs from the checkpoint being resumed")
        trainer.cfg = train_cfg.validate()
    else:
        trainer = Trainer(GraphSum(model_cfg, seed=train_cfg.seed), train_cfg, vocab)
    trainer.fit(instances, graphs, checkpoint_dir=checkpoint_dir, log_path=log_path)
    return trainer


# ---------------------------------------------------------------------------
# checkpoint container:
#   MAGIC | u32 version | u64 header length | JSON header | f64 LE payload | sha256 of all preceding bytes


def _payload_arrays(trainer: Trainer):
    for name, p in trainer.model.params.items():
        yield "param", name, p.data
    for name in trainer.model.params:
        if name in trainer.opt.m:
            yield "adam_m", name, trainer.opt.m[name]
            yield "adam_v", name, trainer.opt.v[name]


def checkpoint_bytes(trainer: Trainer) -> bytes:
    if trainer.micro % trainer.cfg.accumulation:
        raise ValidationError("checkpoints are only taken on update boundaries")
    entries, chunks = [], []
    for kind, name, arr in _payload_arrays(trainer):
        entries.append({"kind": kind, "name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "model": asdict(trainer.model.cfg),
        "train": asdict(trainer.cfg),
        "step": trainer.step,
        "micro": trainer.micro,
        "cursor": trainer.cursor,
        "rng": trainer.rng.bit_generator.state,
        "vocab": trainer.vocab.to_json() if trainer.vocab else None,
        "tensors": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(trainer: Trainer, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(trainer))
    tmp.replace(path)


def parse_checkpoint(blob: bytes, expect_model: ModelConfig | None = None) -> Trainer:
    if len(blob) < len(MAGIC) + 12 + 32 or not blob.startswith(MAGIC):
        raise IntegrityError("not a checkpoint file (bad magic or truncated)")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint checksum mismatch (file truncated or corrupt)")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    start = len(MAGIC) + 12
    header = json.loads(body[start:start + hlen])
    model_cfg = model_config_from_dict(header["model"])
    if expect_model is not None and asdict(expect_model) != asdict(model_cfg):
        diff = sorted(k for k, v in asdict(expect_model).items() if asdict(model_cfg).get(k) != v)
        raise ConfigError(f"checkpoint configuration mismatch in {diff}")
    train_cfg = TrainConfig(**header["train"])
    offset = start + hlen
    arrays = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        end = offset + 8 * n
        if end > len(body):
            raise IntegrityError("checkpoint payload shorter than its header declares")
        arrays[(e["kind"], e["name"])] = np.frombuffer(body[offset:end], dtype="<f8").reshape(e["shape"]).astype(np.float64)
        offset = end
    if offset != len(body):
        raise IntegrityError("trailing bytes in checkpoint payload")

    template = init_params(model_cfg, 0)
    params = {}
    for name, p in template.items():
        arr = arrays.get(("param", name))
        if arr is None or arr.shape != p.shape:
            raise ConfigError(f"checkpoint tensor {name} missing or has the wrong shape")
        params[name] = T.parameter(arr, name)
    vocab = Vocabulary.from_json(header["vocab"]) if header.get("vocab") else None
    trainer = Trainer(GraphSum(model_cfg, params), train_cfg, vocab)
    trainer.opt.step = header["step"]
    for name in params:
        if ("adam_m", name) in arrays:
            trainer.opt.m[name] = arrays[("adam_m", name)]
            trainer.opt.v[name] = arrays[("adam_v", name)]
    trainer.micro = header["micro"]
    trainer.cursor = header["cursor"]
    trainer.rng.bit_generator.state = header["rng"]
    return trainer


def load_checkpoint(path, expect_model: ModelConfig | None = None) -> Trainer:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    return parse_checkpoint(blob, expect_model)
