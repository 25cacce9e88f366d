"""Synthetic corpora for smoke tests, overfitting runs and the graph-signal probe."""

from __future__ import annotations

import numpy as np

from .graphs import GraphMatrix, build_similarity_graph
from .text import BOS, EOS, PBOUND, Instance


def overfit_corpus(n_instances: int = 10, n_paragraphs: int = 3, paragraph_len: int = 15,
                   summary_len: int = 8, vocab_size: int = 60, seed: int = 0):
    """Random paragraphs; each summary is a sample of distinct tokens from its own paragraphs."""
    rng = np.random.default_rng(seed)
    instances, graphs = [], []
    for _ in range(n_instances):
        paras = [[PBOUND] + rng.integers(5, vocab_size, paragraph_len).tolist() for _ in range(n_paragraphs)]
        pool = sorted({t for p in paras for t in p[1:]})
        summary = rng.choice(pool, summary_len, replace=False).tolist()
        instances.append(Instance(paras, [BOS] + summary + [EOS], [0] * n_paragraphs))
        graphs.append(build_similarity_graph([[str(t) for t in p[1:]] for p in paras]))
    return instances, graphs


def planted_hub_corpus(n_instances: int, n_paragraphs: int = 4, n_keys: int = 10, n_filler: int = 30,
                       filler_len: int = 3, hub_weight: float = 1.0, noise_weight: float = 0.2, seed: int = 0):
    """Instances whose correct summary token is decided by the graph alone.

    Every paragraph is ``[PBOUND, key, filler...]`` with a distinct key per
    paragraph. One paragraph (the hub) is linked to all others with weight
    ``hub_weight``; remaining pairs get weights below ``noise_weight``. The
    summary is the hub's key. Text alone carries no hint of which paragraph
    is the hub. Key ids are ``5 .. 5+n_keys-1``; filler ids follow.
    Returns ``(instances, graphs, hubs)``; vocabulary size is
    ``5 + n_keys + n_filler``.
    """
    if n_keys < n_paragraphs:
        raise ValueError("need at least one key per paragraph")
    rng = np.random.default_rng(seed)
    key0, fill0 = 5, 5 + n_keys
    instances, graphs, hubs = [], [], []
    L = n_paragraphs
    for _ in range(n_instances):
        keys = rng.choice(n_keys, L, replace=False) + key0
        paras = [[PBOUND, int(k)] + (rng.integers(0, n_filler, filler_len) + fill0).tolist() for k in keys]
        hub = int(rng.integers(L))
        w = rng.uniform(0.0, noise_weight, size=(L, L))
        w = np.triu(w, 1)
        w = w + w.T
        w[hub, :] = hub_weight
        w[:, hub] = hub_weight
        np.fill_diagonal(w, 1.0)
        instances.append(Instance(paras, [BOS, int(keys[hub]), EOS], [0] * L))
        graphs.append(GraphMatrix(w, "planted").validate())
        hubs.append(hub)
    return instances, graphs, hubs


def key_accuracy(model, instances, graphs) -> float:
    """Teacher-forced accuracy on the first summary token."""
    from .tensor import no_grad

    hits = 0
    with no_grad():
        for inst, g in zip(instances, graphs):
            logits = model.forward(inst, g).data
            hits += int(logits[0].argmax() == inst.summary[1])
    return hits / len(instances)
