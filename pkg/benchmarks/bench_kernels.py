#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy twins, per kernel and
on a full optimization step.

Run from the repo root:
    python benchmarks/bench_kernels.py            # uses numba when available
    ABSANET_NUMBA=0 python benchmarks/bench_kernels.py   # numpy-only process

The per-kernel table compares both paths inside one process; the end-to-end
step number reflects whichever backend this process selected (see the header),
so run it twice with the env flag flipped for the full picture.
"""
import time
import timeit

import numpy as np

from absanet import kernels
from absanet.corpus import SynthConfig, generate_synthetic
from absanet.encoder import ModelConfig
from absanet.model import init_model_params
from absanet.text import build_vocab, encode_absa, pad_batch
from absanet.train import AdamState, TrainConfig, step
from absanet.auxgen import make_prd, make_tsmtd

REPEAT = 200


def bench(fn, *args, repeat=REPEAT):
    fn(*args)  # warm-up (JIT compile on the numba path)
    return timeit.timeit(lambda: fn(*args), number=repeat) / repeat


def kernel_table():
    rng = np.random.default_rng(0)
    rows, cols, d = 512, 66, 64
    x = rng.normal(size=(rows, cols))
    valid = np.ones((rows, cols), dtype=bool)
    valid[:, 50:] = False
    y = kernels.softmax_fwd_np(x, valid)
    gy = rng.normal(size=(rows, cols))
    xd = rng.normal(size=(rows, d))
    gyd = rng.normal(size=(rows, d))
    gain, bias = rng.normal(size=d), rng.normal(size=d)
    _, mean, rstd = kernels.layernorm_fwd_np(xd, gain, bias, 1e-5)
    ids = rng.integers(0, 300, size=2000)
    gemb = rng.normal(size=(2000, d))

    def emb_np():
        gw = np.zeros((300, d))
        kernels.embedding_bwd_np(ids, gemb, gw)

    def adam_args():
        return (rng.normal(size=100_000), rng.normal(size=100_000),
                np.zeros(100_000), np.zeros(100_000),
                1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001, 0.01)

    cases = [
        ("softmax fwd (512x66)", lambda: kernels.softmax_fwd_np(x, valid), None),
        ("softmax bwd", lambda: kernels.softmax_bwd_np(y, gy), None),
        ("layernorm fwd (512x64)", lambda: kernels.layernorm_fwd_np(xd, gain, bias, 1e-5), None),
        ("layernorm bwd", lambda: kernels.layernorm_bwd_np(xd, gyd, gain, mean, rstd), None),
        ("embedding bwd (2000x64)", emb_np, None),
        ("adam step (100k)", lambda: kernels.adam_step_np(*adam_args()), None),
    ]
    if kernels.HAS_NUMBA:
        def emb_nb():
            gw = np.zeros((300, d))
            kernels.embedding_bwd_nb(ids, gemb, gw)

        nb_cases = [
            lambda: kernels.softmax_fwd_nb(x, valid),
            lambda: kernels.softmax_bwd_nb(y, gy),
            lambda: kernels.layernorm_fwd_nb(xd, gain, bias, 1e-5),
            lambda: kernels.layernorm_bwd_nb(xd, gyd, gain, mean, rstd),
            emb_nb,
            lambda: kernels.adam_step_nb(*adam_args()),
        ]
        cases = [(name, np_fn, nb_fn) for (name, np_fn, _), nb_fn in zip(cases, nb_cases)]

    print(f"{'kernel':28s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, np_fn, nb_fn in cases:
        t_np = bench(np_fn)
        if nb_fn is None:
            print(f"{name:28s} {t_np*1e6:9.1f}u {'-':>10s} {'-':>8s}")
            continue
        t_nb = bench(nb_fn)
        print(f"{name:28s} {t_np*1e6:9.1f}u {t_nb*1e6:9.1f}u {t_np/t_nb:7.1f}x")


def step_benchmark():
    corpus = generate_synthetic(SynthConfig(n_sentences=16, seed=0))
    vocab = build_vocab(corpus)
    cfg = ModelConfig(vocab_size=len(vocab))
    params = init_model_params(cfg, seed=0)
    state = AdamState.init(params)
    tcfg = TrainConfig(seed=0)
    absa = pad_batch([encode_absa(s, vocab) for s in corpus.sentences], vocab)
    import random
    rng = random.Random("bench")
    tsmtd = pad_batch([make_tsmtd(s, vocab, rng).encoded for s in corpus.sentences], vocab)
    prd = pad_batch([p.encoded for p in (make_prd(s, vocab, rng) for s in corpus.sentences) if p], vocab)

    step(absa, tsmtd, prd, params, cfg, tcfg, state)  # warm-up
    t0 = time.perf_counter()
    n = 20
    for i in range(n):
        step(absa, tsmtd, prd, params, cfg, tcfg, state, step_idx=i + 1)
    dt = (time.perf_counter() - t0) / n
    print(f"\nfull train step (batch 16, d_h 64, backend={kernels.BACKEND}): {dt*1000:.1f} ms")


if __name__ == "__main__":
    print(f"active backend: {kernels.BACKEND} (numba available: {kernels.HAS_NUMBA})\n")
    kernel_table()
    step_benchmark()
