import json
from dataclasses import replace

import numpy as np
import pytest

from graphsum.config import ModelConfig, TrainConfig, load_config
from graphsum.errors import ConfigError, IntegrityError, NumericError
from graphsum.model import GraphSum
from graphsum.synthetic import overfit_corpus
from graphsum.text import build_vocab
from graphsum.training import (Trainer, checkpoint_bytes, clip_gradients, global_norm, load_checkpoint, lr_at,
                               parse_checkpoint, save_checkpoint, train)

MODEL = ModelConfig(vocab_size=30, d_model=16, d_ff=32, heads=2, token_layers=1, graph_layers=1, decoder_layers=1,
                    dropout=0.1, max_paragraphs=4, max_paragraph_tokens=8)
TRAIN = TrainConfig(warmup_steps=20, accumulation=2, batch_size=1, max_steps=10, log_every=10**9)


def corpus(n=4, seed=0):
    return overfit_corpus(n, n_paragraphs=3, paragraph_len=5, summary_len=4, vocab_size=30, seed=seed)


def fresh(model_cfg=MODEL, train_cfg=TRAIN, seed=None) -> Trainer:
    return Trainer(GraphSum(model_cfg, seed=train_cfg.seed if seed is None else seed), train_cfg)


class TestSchedule:
    def test_peak_at_warmup(self):
        cfg = TrainConfig(lr_factor=2.0, warmup_steps=400)
        assert lr_at(400, cfg, 64) == pytest.approx(2.0 * 64 ** -0.5 * 400 ** -0.5, rel=1e-15)

    def test_half_way_is_half_the_peak(self):
        cfg = TrainConfig(warmup_steps=400)
        assert lr_at(200, cfg, 64) == pytest.approx(0.5 * lr_at(400, cfg, 64), rel=1e-12)

    def test_shape(self):
        cfg = TrainConfig(warmup_steps=50)
        lrs = np.array([lr_at(s, cfg, 64) for s in range(1, 501)])
        assert (np.diff(lrs[:50]) > 0).all()
        assert (np.diff(lrs[49:]) < 0).all()

    def test_step_zero(self):
        with pytest.raises(ConfigError):
            lr_at(0, TrainConfig(), 64)


class TestClipping:
    def test_scaled_by_exactly_one_fifth(self):
        grads = [np.array([6.0, 0.0]), np.array([[0.0], [8.0]])]
        original = [g.copy() for g in grads]
        assert global_norm(grads) == 10.0
        assert clip_gradients(grads, 2.0) == 10.0
        for g, o in zip(grads, original):
            np.testing.assert_array_equal(g, o * 0.2)
        assert global_norm(grads) == pytest.approx(2.0, rel=1e-15)

    def test_small_gradients_untouched(self):
        grads = [np.array([0.3, 0.4])]
        clip_gradients(grads, 2.0)
        np.testing.assert_array_equal(grads[0], [0.3, 0.4])


class TestTrainStep:
    def test_accumulation_matches_one_large_batch(self):
        instances, graphs = corpus(4)
        batch = list(zip(instances, graphs))
        a = fresh(train_cfg=replace(TRAIN, accumulation=4, batch_size=1))
        recs = [a.train_step([item]) for item in batch]
        assert recs[:3] == [None, None, None] and recs[3] is not None
        b = fresh(train_cfg=replace(TRAIN, accumulation=1, batch_size=4))
        rec = b.train_step(batch)
        assert recs[3]["loss"] == rec["loss"]
        for name in a.model.params:
            np.testing.assert_array_equal(a.model.params[name].data, b.model.params[name].data)

    def test_loss_falls_after_one_update(self):
        instances, graphs = corpus(1)
        t = fresh(replace(MODEL, dropout=0.0), replace(TRAIN, accumulation=1, warmup_steps=1, lr_factor=0.05))
        first = t.train_step([(instances[0], graphs[0])])["loss"]
        second = t.train_step([(instances[0], graphs[0])])["loss"]
        assert second < first

    def test_non_finite_loss_raises(self):
        instances, graphs = corpus(1)
        t = fresh()
        t.model.params["embed"].data[:] = np.nan
        with pytest.raises(NumericError):
            t.train_step([(instances[0], graphs[0])])

    def test_data_order_is_a_seeded_permutation(self):
        instances, graphs = corpus(5)
        t = fresh(train_cfg=replace(TRAIN, batch_size=5))
        epoch0 = [id(i) for i, _ in t.next_batch(instances, graphs)]
        assert sorted(epoch0) == sorted(id(i) for i in instances)
        order = np.random.default_rng([TRAIN.seed, 0]).permutation(5)
        assert epoch0 == [id(instances[k]) for k in order]


class TestTrainLoop:
    def test_seed_changes_trajectory(self):
        instances, graphs = corpus()
        a = fresh(train_cfg=replace(TRAIN, seed=1)).fit(instances, graphs, 5)
        b = fresh(train_cfg=replace(TRAIN, seed=2)).fit(instances, graphs, 5)
        assert [r["loss"] for r in a] != [r["loss"] for r in b]

    def test_same_seed_same_trajectory(self):
        instances, graphs = corpus()
        a = fresh().fit(instances, graphs, 5)
        b = fresh().fit(instances, graphs, 5)
        assert [r["loss"] for r in a] == [r["loss"] for r in b]

    def test_resume_is_bitwise(self, tmp_path):
        instances, graphs = corpus()
        full = fresh().fit(instances, graphs, 15)
        part = fresh()
        part.fit(instances, graphs, 5)
        save_checkpoint(part, tmp_path / "k.ckpt")
        resumed = load_checkpoint(tmp_path / "k.ckpt")
        tail = resumed.fit(instances, graphs, 15)
        assert [r["step"] for r in tail] == list(range(6, 16))
        assert [r["loss"] for r in tail] == [r["loss"] for r in full[5:]]

    def test_log_and_checkpoints(self, tmp_path):
        instances, graphs = corpus()
        t = train(instances, graphs, MODEL, replace(TRAIN, checkpoint_every=2, max_steps=4),
                  checkpoint_dir=tmp_path, log_path=tmp_path / "log.jsonl")
        assert t.step == 4
        lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [x["step"] for x in lines] == [1, 2, 3, 4]
        assert set(lines[0]) == {"step", "lr", "loss"}
        assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["step0000002.ckpt", "step0000004.ckpt"]

    def test_resume_with_other_model_config(self, tmp_path):
        instances, graphs = corpus()
        t = fresh()
        t.fit(instances, graphs, 2)
        save_checkpoint(t, tmp_path / "a.ckpt")
        with pytest.raises(ConfigError):
            train(instances, graphs, replace(MODEL, sigma=1.0), TRAIN, resume=tmp_path / "a.ckpt")


class TestCheckpoint:
    @pytest.fixture
    def trained(self):
        instances, graphs = corpus()
        t = Trainer(GraphSum(MODEL, seed=1), TRAIN, build_vocab([["x", "y"]]))
        t.fit(instances, graphs, 3)
        return t

    def test_save_load_save_identical_bytes(self, trained, tmp_path):
        save_checkpoint(trained, tmp_path / "a.ckpt")
        save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_restores_everything(self, trained):
        back = parse_checkpoint(checkpoint_bytes(trained))
        assert back.step == trained.step and back.cursor == trained.cursor and back.micro == trained.micro
        assert back.vocab.tokens == trained.vocab.tokens
        assert back.rng.bit_generator.state == trained.rng.bit_generator.state
        for name, p in trained.model.params.items():
            np.testing.assert_array_equal(back.model.params[name].data, p.data)
            np.testing.assert_array_equal(back.opt.m[name], trained.opt.m[name])
            np.testing.assert_array_equal(back.opt.v[name], trained.opt.v[name])

    @pytest.mark.parametrize("cut", [1, 40, 1000])
    def test_truncated_file(self, trained, tmp_path, cut):
        blob = checkpoint_bytes(trained)
        (tmp_path / "t.ckpt").write_bytes(blob[:-cut])
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / "t.ckpt")

    def test_flipped_byte(self, trained):
        blob = bytearray(checkpoint_bytes(trained))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(IntegrityError, match="checksum"):
            parse_checkpoint(bytes(blob))

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"hello world" * 10)
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_d_model_mismatch(self, trained, tmp_path):
        save_checkpoint(trained, tmp_path / "a.ckpt")
        with pytest.raises(ConfigError, match="d_model"):
            load_checkpoint(tmp_path / "a.ckpt", expect_model=replace(MODEL, d_model=32))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / "nope.ckpt")


class TestConfig:
    def test_layered_loading(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"model": {"sigma": 1.0, "d_model": 32}, "train": {"seed": 5}}))
        cfg = load_config(tmp_path / "c.json", {"model": {"sigma": 0.5}})
        assert (cfg.model.sigma, cfg.model.d_model, cfg.train.seed) == (0.5, 32, 5)

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"model": {"sigmaa": 1.0}}))
        with pytest.raises(ConfigError, match="model.sigmaa"):
            load_config(tmp_path / "c.json")

    def test_heads_must_divide_d_model(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=10, d_model=10, heads=4).validate()

    def test_full_scale_presets(self):
        m, t = ModelConfig.full_scale(), TrainConfig.full_scale()
        assert (m.d_model, m.d_ff, m.heads, m.token_layers, m.graph_layers, m.decoder_layers) == (256, 1024, 8, 6, 2, 8)
        assert (t.warmup_steps, t.beta2, t.clip_norm) == (8000, 0.998, 2.0)
