"""Shared test utilities: randomized gold/prediction generators."""
import random

from absanet.corpus import SynthConfig, encode_bio, generate_synthetic
from absanet.metrics import Prediction


def random_eval_pair(rng: random.Random):
    """One (gold sentences, predictions) pair with partially corrupted tags."""
    corpus = generate_synthetic(SynthConfig(
        n_sentences=rng.randint(1, 8),
        max_aspects_per_sentence=rng.randint(1, 3),
        contrastive_fraction=rng.random(),
        seed=rng.randint(0, 10**6),
    ))
    preds = []
    for s in corpus.sentences:
        ls = encode_bio(s)
        a = list(ls.aspect_tags)
        o = list(ls.opinion_tags)
        p = list(ls.polarity_tags)
        for i in range(len(a)):
            if rng.random() < 0.25:
                a[i] = rng.choice(["B", "I", "O"])
            if rng.random() < 0.25:
                o[i] = rng.choice(["B", "I", "O"])
            if rng.random() < 0.3:
                p[i] = rng.choice(["POS", "NEU", "NEG", "O"])
        preds.append(Prediction(tuple(a), tuple(o), tuple(p)))
    return list(corpus.sentences), preds
