import random

import pytest

from absanet.corpus import (
    AnnotatedSentence, Span, SynthConfig, decode_chunks, encode_bio, generate_synthetic,
)
from absanet.errors import ContractViolation
from absanet.metrics import (
    MatchCounts, Prediction, absa_f1, asc_f1, chunk_f1, score,
    sentence_accuracy, stratify_by_aspect_count,
)
from helpers import random_eval_pair
from oracle_metrics import (
    naive_asc_f1, naive_chunk_prf, naive_joint_prf, naive_sentence_accuracy,
)


def spans(*pairs):
    return [Span(a, b) for a, b in pairs]


def items(*triples):
    return [(Span(a, b), pol) for a, b, pol in triples]


def views(gold, preds):
    gold_spans = [[sp for sp, _ in s.aspects] for s in gold]
    gold_items = [list(s.aspects) for s in gold]
    pred_items = [p.aspect_chunks() for p in preds]
    pred_spans = [[sp for sp, _ in it] for it in pred_items]
    return gold_spans, gold_items, pred_spans, pred_items


class TestChunkF1:
    def test_identical_sets(self):
        assert chunk_f1([spans((0, 1), (5, 6))], [spans((0, 1), (5, 6))]) == (1.0, 1.0, 1.0)

    def test_hand_counted(self):
        p, r, f = chunk_f1([spans((0, 1), (5, 6))], [spans((0, 1))])
        assert (p, r) == (1.0, 0.5)
        assert abs(f - 2 / 3) < 1e-15

    def test_empty_pred(self):
        assert chunk_f1([spans((0, 1))], [[]]) == (0.0, 0.0, 0.0)

    def test_boundary_must_be_exact(self):
        p, r, f = chunk_f1([spans((0, 2))], [spans((0, 1))])
        assert f == 0.0


class TestAbsaF1:
    def test_polarity_must_match(self):
        gold = [items((0, 1, "POS"), (5, 6, "NEG"))]
        pred = [items((0, 1, "POS"), (5, 6, "POS"))]
        gold_spans = [[sp for sp, _ in gold[0]]]
        pred_spans = [[sp for sp, _ in pred[0]]]
        assert chunk_f1(gold_spans, pred_spans)[2] == 1.0
        assert absa_f1(gold, pred)[2] == 0.5

    def test_perfect(self):
        gold = [items((0, 1, "POS"))]
        assert absa_f1(gold, gold)[2] == 1.0

    def test_never_exceeds_ate(self):
        rng = random.Random(314)
        for _ in range(500):
            gold, preds = random_eval_pair(rng)
            report = score(gold, preds, with_strata=False)
            assert report.absa_f1 <= report.ate_f1 + 1e-15


class TestAscF1:
    def test_perfect(self):
        gold = [items((0, 1, "POS"), (3, 4, "NEG"))]
        assert asc_f1(gold, gold) == 1.0

    def test_all_extracted_all_wrong_polarity(self):
        gold = [items((0, 1, "POS"), (3, 4, "NEG"))]
        pred = [items((0, 1, "NEG"), (3, 4, "POS"))]
        assert asc_f1(gold, pred) == 0.0

    def test_two_class_confusion_vs_brute_force(self):
        gold = [items((0, 1, "POS"), (2, 3, "POS"), (4, 5, "NEG"))]
        pred = [items((0, 1, "POS"), (2, 3, "NEG"), (4, 5, "NEG"))]
        assert asc_f1(gold, pred) == naive_asc_f1(gold, pred)

    def test_unextracted_chunks_excluded(self):
        gold = [items((0, 1, "POS"), (3, 4, "NEG"))]
        pred = [items((0, 1, "POS"))]  # NEG chunk not extracted -> class NEG has no support
        assert asc_f1(gold, pred) == 1.0

    def test_no_scoreable_chunks(self):
        gold = [items((0, 1, "POS"))]
        pred = [[]]
        assert asc_f1(gold, pred) == 0.0


class TestSentenceAccuracy:
    def test_all_perfect(self):
        gold = [items((0, 1, "POS"))] * 4
        assert sentence_accuracy(gold, gold) == 1.0

    def test_one_extra_in_one_of_four(self):
        gold = [items((0, 1, "POS"))] * 4
        pred = [items((0, 1, "POS"))] * 3 + [items((0, 1, "POS"), (2, 3, "NEG"))]
        assert sentence_accuracy(gold, pred) == 0.75

    def test_equals_one_only_with_perfect_absa(self):
        rng = random.Random(2718)
        for _ in range(300):
            gold, preds = random_eval_pair(rng)
            report = score(gold, preds, with_strata=False)
            assert report.sent_acc <= 1.0
            if report.sent_acc == 1.0:
                assert report.absa_f1 == 1.0


class TestStratify:
    def test_single_only_corpus(self):
        corpus = generate_synthetic(SynthConfig(n_sentences=20, max_aspects_per_sentence=1, seed=1))
        preds = []
        for s in corpus.sentences:
            ls = encode_bio(s)
            preds.append(Prediction(ls.aspect_tags, ls.opinion_tags, ls.polarity_tags))
        strata = stratify_by_aspect_count(list(corpus.sentences), preds)
        assert strata["multiple_aspect"] is None
        assert strata["single_aspect"].n_sentences == 20
        assert strata["zero_aspect_sentences"] == 0

    def test_partition_counts(self):
        rng = random.Random(5)
        gold, preds = random_eval_pair(rng)
        strata = stratify_by_aspect_count(gold, preds)
        n_single = strata["single_aspect"].n_sentences if strata["single_aspect"] else 0
        n_multi = strata["multiple_aspect"].n_sentences if strata["multiple_aspect"] else 0
        with_aspects = sum(1 for s in gold if len(s.aspects) >= 1)
        assert n_single + n_multi == with_aspects

    def test_strata_match_filtered_recompute(self):
        rng = random.Random(99)
        for _ in range(20):
            gold, preds = random_eval_pair(rng)
            strata = stratify_by_aspect_count(gold, preds)
            idx = [i for i, s in enumerate(gold) if len(s.aspects) >= 2]
            if not idx:
                assert strata["multiple_aspect"] is None
                continue
            manual = score([gold[i] for i in idx], [preds[i] for i in idx], with_strata=False)
            assert strata["multiple_aspect"].absa_f1 == manual.absa_f1
            assert strata["multiple_aspect"].sent_acc == manual.sent_acc


class TestOracleAgreement:
    def test_exact_equality_on_randomized_pairs(self):
        rng = random.Random(424242)
        for _ in range(200):
            gold, preds = random_eval_pair(rng)
            gold_spans, gold_items, pred_spans, pred_items = views(gold, preds)
            gold_ops = [list(s.opinions) for s in gold]
            pred_ops = [p.opinion_chunks() for p in preds]

            report = score(gold, preds, with_strata=False)
            assert (report.ate_counts.prf()) == naive_chunk_prf(gold_spans, pred_spans)
            assert (report.ote_counts.prf()) == naive_chunk_prf(gold_ops, pred_ops)
            assert (report.absa_counts.prf()) == naive_joint_prf(gold_items, pred_items)
            assert report.asc_f1 == naive_asc_f1(gold_items, pred_items)
            assert report.sent_acc == naive_sentence_accuracy(gold_items, pred_items)


class TestReportPlumbing:
    def test_match_counts_add(self):
        assert MatchCounts(1, 2, 1) + MatchCounts(3, 4, 2) == MatchCounts(4, 6, 3)

    def test_report_dict_keys(self):
        rng = random.Random(8)
        gold, preds = random_eval_pair(rng)
        d = score(gold, preds).to_dict()
        for key in ("ate_f1", "ote_f1", "asc_f1", "absa_f1", "sent_acc", "counts", "strata"):
            assert key in d

    def test_alignment_required(self):
        with pytest.raises(ContractViolation):
            sentence_accuracy([items((0, 1, "POS"))], [])

    def test_length_mismatch_rejected(self):
        s = AnnotatedSentence(("a", "b"), (), (), ())
        p = Prediction(("O",), ("O",), ("O",))
        with pytest.raises(ContractViolation):
            score([s], [p])

    def test_reorder_invariance(self):
        rng = random.Random(31)
        gold, preds = random_eval_pair(rng)
        base = score(gold, preds, with_strata=False)
        order = list(range(len(gold)))
        rng.shuffle(order)
        shuffled = score([gold[i] for i in order], [preds[i] for i in order], with_strata=False)
        assert (base.ate_f1, base.ote_f1, base.asc_f1, base.absa_f1, base.sent_acc) == \
               (shuffled.ate_f1, shuffled.ote_f1, shuffled.asc_f1, shuffled.absa_f1, shuffled.sent_acc)
