import json
import random

import numpy as np
import numpy.testing as npt
import pytest

from absanet.autodiff import backward, zero_grads
from absanet.corpus import SynthConfig, generate_synthetic
from absanet.encoder import ModelConfig
from absanet.errors import NumericalError, ValidationError
from absanet.kernels import adam_step
from absanet.model import (
    ModelParams, forward_absa, init_model_params, named_parameters, param_tensors,
)
from absanet.text import build_vocab, encode_absa, pad_batch
from absanet.train import (
    AdamState, Checkpoint, TrainConfig, clip_gradients, load_checkpoint,
    load_state_dict, optimizer_update, params_state_dict, save_checkpoint,
    step, train_loop, CHECKPOINT_VERSION,
)
from absanet.auxgen import make_prd, make_tsmtd


def tiny_world(n_sentences=8, seed=1, d_h=16):
    corpus = generate_synthetic(SynthConfig(n_sentences=n_sentences, seed=seed,
                                            contrastive_fraction=0.5))
    vocab = build_vocab(corpus)
    mcfg = ModelConfig(d_h=d_h, n_enc_layers=1, n_dec_layers=1, n_heads=2, ffn_dim=32,
                       max_len=64, dropout=0.1, vocab_size=len(vocab))
    return corpus, vocab, mcfg


def batches_for(corpus, vocab, take=None):
    sents = corpus.sentences[:take] if take else corpus.sentences
    absa = pad_batch([encode_absa(s, vocab) for s in sents], vocab)
    rng = random.Random("aux-batch")
    tsmtd = pad_batch([make_tsmtd(s, vocab, rng).encoded for s in sents], vocab)
    prd_insts = [make_prd(s, vocab, rng) for s in sents]
    prd = pad_batch([i.encoded for i in prd_insts if i is not None], vocab)
    return absa, tsmtd, prd


class TestOptimizer:
    def test_zero_grad_zero_decay_unchanged(self):
        _, _, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        before = params_state_dict(params)
        state = AdamState.init(params)
        optimizer_update(params, state, lr=0.1, weight_decay=0.0)
        after = params_state_dict(params)
        for name in before:
            npt.assert_array_equal(before[name], after[name])

    def test_first_step_bias_corrected(self):
        # hand-computed: m_hat = g, v_hat = g^2 -> delta ~ lr * sign(g)
        p = np.array([1.0])
        m = np.zeros(1)
        v = np.zeros(1)
        adam_step(p, np.array([1.0]), m, v, 0.1, 0.9, 0.999, 1e-8,
                  1.0 - 0.9, 1.0 - 0.999, 0.0)
        npt.assert_allclose(p, 1.0 - 0.1, atol=1e-7)

    def test_decay_skips_ln_and_biases(self):
        _, _, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        state = AdamState.init(params)
        gain_before = params.encoder.layers[0].ln1.gain.data.copy()
        weight_before = params.encoder.layers[0].attn.wq.data.copy()
        # pure-decay step: all gradients zero
        optimizer_update(params, state, lr=0.1, weight_decay=0.5)
        npt.assert_array_equal(params.encoder.layers[0].ln1.gain.data, gain_before)
        assert not np.array_equal(params.encoder.layers[0].attn.wq.data, weight_before)

    def test_clip_scales_to_max_norm(self):
        _, _, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        named = named_parameters(params)
        for _, t, _ in named:
            t.grad = np.ones_like(t.data)
        norm_before = clip_gradients(named, max_norm=1.0)
        assert norm_before > 1.0
        total = sum(float((t.grad ** 2).sum()) for _, t, _ in named) ** 0.5
        npt.assert_allclose(total, 1.0, rtol=1e-12)

    def test_clip_disabled(self):
        _, _, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        named = named_parameters(params)
        for _, t, _ in named:
            t.grad = np.ones_like(t.data)
        clip_gradients(named, max_norm=0.0)
        assert all((t.grad == 1.0).all() for _, t, _ in named)


class TestStep:
    def test_loss_identities(self):
        corpus, vocab, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        state = AdamState.init(params)
        absa, tsmtd, prd = batches_for(corpus, vocab)
        cfg = TrainConfig(alpha=0.7, seed=3)
        bd = step(absa, tsmtd, prd, params, mcfg, cfg, state)
        assert abs(bd.l_absa - (bd.l_ate + bd.l_ote + bd.l_asc)) <= 1e-12
        assert abs(bd.l_aux - (bd.l_tsmtd + bd.l_prd)) <= 1e-12
        assert abs(bd.l_final - (bd.l_absa + cfg.alpha * bd.l_aux)) <= 1e-12

    def test_alpha_zero_final_equals_absa_exactly(self):
        corpus, vocab, mcfg = tiny_world()
        params = init_model_params(mcfg, seed=0)
        state = AdamState.init(params)
        absa, tsmtd, prd = batches_for(corpus, vocab)
        bd = step(absa, tsmtd, prd, params, mcfg, TrainConfig(alpha=0.0), state)
        assert bd.l_final == bd.l_absa
        assert bd.l_tsmtd > 0 and bd.l_prd > 0  # still computed, contribution scaled to 0

    def test_disabled_aux_matches_no_aux_batches(self):
        corpus, vocab, mcfg = tiny_world()
        absa, tsmtd, prd = batches_for(corpus, vocab)
        cfg = TrainConfig(enable_tsmtd=False, enable_prd=False, seed=5)

        params1 = init_model_params(mcfg, seed=0)
        bd1 = step(absa, tsmtd, prd, params1, mcfg, cfg, AdamState.init(params1))
        params2 = init_model_params(mcfg, seed=0)
        bd2 = step(absa, None, None, params2, mcfg, cfg, AdamState.init(params2))

        assert bd1.l_aux == 0.0 and bd2.l_aux == 0.0
        assert bd1.l_final == bd2.l_final
        for name in (s1 := params_state_dict(params1)):
            npt.assert_array_equal(s1[name], params_state_dict(params2)[name])

    def test_aux_changes_shared_encoder_gradient(self):
        corpus, vocab, mcfg = tiny_world()
        absa, tsmtd, prd = batches_for(corpus, vocab)
        params = init_model_params(mcfg, seed=0)
        cfg = TrainConfig(seed=0)

        def shared_grad(with_aux: bool):
            named = named_parameters(params)
            zero_grads(t for _, t, _ in named)
            fwd = forward_absa(params, absa, mcfg, mode="eval")
            loss = fwd.l_ate + fwd.l_ote + fwd.l_asc
            if with_aux:
                from absanet.model import forward_aux
                loss = loss + forward_aux(params, tsmtd, mcfg, mode="eval")
            backward(loss)
            return params.encoder.tok_emb.grad.copy()

        diff = np.linalg.norm(shared_grad(True) - shared_grad(False))
        assert diff > 0

    def test_fixed_batch_overfit_300_steps(self):
        # same batch every step: l_absa must collapse by >= 90% from step 1
        corpus, vocab, mcfg = tiny_world(n_sentences=8, d_h=16)
        absa, tsmtd, prd = batches_for(corpus, vocab)
        params = init_model_params(mcfg, seed=0)
        state = AdamState.init(params)
        cfg = TrainConfig(seed=0, lr=2e-3)
        first = last = None
        for i in range(300):
            bd = step(absa, tsmtd, prd, params, mcfg, cfg, state, step_idx=i)
            if first is None:
                first = bd.l_absa
            last = bd.l_absa
        assert last <= 0.10 * first, (first, last)

    def test_non_finite_loss_diagnosed(self):
        corpus, vocab, mcfg = tiny_world()
        absa, tsmtd, prd = batches_for(corpus, vocab)
        params = init_model_params(mcfg, seed=0)
        params.encoder.tok_emb.data[...] = np.inf
        with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
            step(absa, tsmtd, prd, params, mcfg, TrainConfig(), AdamState.init(params))


class TestTrainLoop:
    def test_zero_epochs_checkpoint_is_initialization(self):
        corpus, vocab, mcfg = tiny_world()
        cfg = TrainConfig(epochs=0, seed=4)
        result = train_loop(corpus, corpus, vocab, mcfg, cfg)
        assert result.log == []
        fresh = init_model_params(mcfg, cfg.seed)
        for name, arr in params_state_dict(result.checkpoint.params).items():
            npt.assert_array_equal(arr, params_state_dict(fresh)[name])

    def test_same_seed_identical_logs(self, tmp_path):
        corpus, vocab, mcfg = tiny_world()
        cfg = TrainConfig(epochs=2, seed=11, batch_size=4)
        train_loop(corpus, corpus, vocab, mcfg, cfg, log_path=tmp_path / "a.jsonl")
        train_loop(corpus, corpus, vocab, mcfg, cfg, log_path=tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_log_schema(self, tmp_path):
        corpus, vocab, mcfg = tiny_world()
        cfg = TrainConfig(epochs=1, seed=0, batch_size=4)
        result = train_loop(corpus, corpus, vocab, mcfg, cfg, log_path=tmp_path / "log.jsonl")
        lines = (tmp_path / "log.jsonl").read_text().strip().split("\n")
        assert len(lines) == 1
        rec = json.loads(lines[0])
        for key in ("epoch", "l_ate", "l_ote", "l_asc", "l_tsmtd", "l_prd", "l_final", "dev"):
            assert key in rec
        assert rec["dev"]["absa_f1"] == result.log[0]["dev"]["absa_f1"]

    def test_epoch_is_shuffled_permutation(self):
        # every instance appears exactly once per epoch
        corpus, vocab, mcfg = tiny_world(n_sentences=10)
        order = list(range(10))
        random.Random("0:shuffle:0").shuffle(order)
        assert sorted(order) == list(range(10))
        assert order != list(range(10))

    def test_per_step_breakdowns_returned(self):
        corpus, vocab, mcfg = tiny_world()
        cfg = TrainConfig(epochs=2, seed=0, batch_size=4)
        result = train_loop(corpus, corpus, vocab, mcfg, cfg)
        assert len(result.steps) == 2 * 2  # 8 sentences / batch 4 = 2 steps per epoch
        for bd in result.steps:
            assert abs(bd.l_final - (bd.l_absa + cfg.alpha * bd.l_aux)) <= 1e-12


class TestCheckpoint:
    def roundtrip(self, tmp_path):
        corpus, vocab, mcfg = tiny_world()
        cfg = TrainConfig(epochs=1, seed=2, batch_size=4)
        result = train_loop(corpus, corpus, vocab, mcfg, cfg)
        path = tmp_path / "model.ckpt"
        save_checkpoint(result.checkpoint, path)
        return result.checkpoint, load_checkpoint(path), corpus, vocab, mcfg

    def test_roundtrip_exact(self, tmp_path):
        before, after, *_ = self.roundtrip(tmp_path)
        assert after.version == CHECKPOINT_VERSION
        assert after.model_cfg == before.model_cfg
        assert after.train_cfg == before.train_cfg
        assert after.vocab.id_to_token == before.vocab.id_to_token
        assert after.rng_state == before.rng_state
        assert after.epoch == before.epoch
        b = params_state_dict(before.params)
        a = params_state_dict(after.params)
        for name in b:
            npt.assert_array_equal(a[name], b[name])

    def test_eval_bit_identical_after_roundtrip(self, tmp_path):
        from absanet.predict import evaluate
        before, after, corpus, vocab, mcfg = self.roundtrip(tmp_path)
        r1 = evaluate(before.params, mcfg, vocab, corpus)
        r2 = evaluate(after.params, after.model_cfg, after.vocab, corpus)
        assert r1.to_dict() == r2.to_dict()

    def test_corrupted_manifest_rejected(self, tmp_path):
        ckpt, _, *_ = self.roundtrip(tmp_path)
        path = tmp_path / "bad.ckpt"
        save_checkpoint(ckpt, path)
        raw = path.read_bytes()
        head, _, body = raw.partition(b"\n")
        header = json.loads(head)
        header["manifest"][0]["name"] = "nonsense"
        path.write_bytes(json.dumps(header).encode() + b"\n" + body)
        with pytest.raises(ValidationError):
            load_checkpoint(path)


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(alpha=-1).validate()
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=0).validate()
        with pytest.raises(ValidationError):
            TrainConfig(clip_norm=-0.5).validate()

    def test_dict_roundtrip(self):
        cfg = TrainConfig(alpha=0.5, enable_ap=False)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
