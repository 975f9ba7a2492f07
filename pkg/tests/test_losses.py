import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from rerankmatch import autodiff as ad
from rerankmatch.errors import ConfigError, ContractError
from rerankmatch.losses import (Hyperparams, NormalizedLogitsBatch, PseudoLabelResult,
                                batchmean_triplet, combined_ce, contrastive_rank, one_hot,
                                pseudo_labels, ranking_loss, supervised_ce, unlabeled_ce)


def normalized(rows, labels):
    return NormalizedLogitsBatch.from_logits(ad.Node(np.asarray(rows, dtype=np.float64)), labels)


def random_batch(seed, n=None, classes=None, dim=4):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 9))
    classes = classes or int(rng.integers(1, 4))
    return rng.normal(size=(n, dim)), rng.integers(0, classes, size=n)


class TestSupervisedCE:
    def test_zero_logits_ln_classes(self):
        loss = supervised_ce(ad.Node(np.zeros((3, 10))), one_hot([0, 4, 9], 10))
        assert abs(loss.item() - math.log(10)) < 1e-9
        assert abs(loss.item() - 2.302585) < 1e-6

    def test_confident_correct(self):
        logits = np.zeros((2, 3))
        logits[0, 1] = logits[1, 2] = 1000.0
        assert supervised_ce(ad.Node(logits), one_hot([1, 2], 3)).item() < 1e-12

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(2, 4)) * 3
        labels = [3, 0]
        got = supervised_ce(ad.Node(logits), one_hot(labels, 4)).item()
        assert got == pytest.approx(oracles.cross_entropy(logits.tolist(), labels), rel=1e-12)

    def test_non_one_hot_rejected(self):
        with pytest.raises(ContractError, match="row 1"):
            supervised_ce(ad.Node(np.zeros((2, 2))), np.array([[1.0, 0.0], [0.5, 0.5]]))

    def test_gradient(self):
        rng = np.random.default_rng(12)
        y = one_hot(rng.integers(0, 5, 6), 5)
        assert ad.check_gradient(lambda x: supervised_ce(x, y), rng.normal(size=(6, 5))) < 1e-4


class TestPseudoLabels:
    def test_confident_row(self):
        pl = pseudo_labels(np.array([[10.0, 0.0, 0.0]]), 0.95)
        assert pl.q_hat.tolist() == [0] and pl.mask.tolist() == [True]
        assert pl.q_tilde[0, 0] == pytest.approx(0.99991, abs=1e-5)

    def test_uniform_row_masked(self):
        pl = pseudo_labels(np.zeros((1, 10)), 0.95)
        assert not pl.mask[0]
        assert pl.q_hat[0] == 0

    def test_ninety_percent_row_masked_and_ignored(self):
        # two classes with p = 0.9 on class 1
        logit = math.log(9.0)
        pl = pseudo_labels(np.array([[0.0, logit]]), 0.95)
        assert pl.q_tilde[0, 1] == pytest.approx(0.9)
        assert not pl.mask[0]
        assert unlabeled_ce(ad.Node(np.array([[5.0, -5.0]])), pl).item() == 0.0

    def test_ties_lowest_index(self):
        pl = pseudo_labels(np.array([[1.0, 3.0, 3.0], [2.0, 2.0, 2.0]]), 0.5)
        assert pl.q_hat.tolist() == [1, 0]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_argmax_same_for_raw_and_softmaxed(self, seed):
        logits = np.random.default_rng(seed).normal(size=(6, 5)) * 4
        probs = ad.softmax(ad.Node(logits)).value
        assert np.array_equal(pseudo_labels(logits, 0.9).q_hat, probs.argmax(axis=1))
        assert np.array_equal(pseudo_labels(logits, 0.9).q_hat, logits.argmax(axis=1))


class TestUnlabeledCE:
    def test_all_masked_out(self):
        pl = pseudo_labels(np.zeros((4, 3)), 0.95)
        assert unlabeled_ce(ad.Node(np.ones((4, 3))), pl).item() == 0.0

    def test_confident_matching_strong_view(self):
        weak = np.zeros((3, 4))
        weak[np.arange(3), [0, 2, 3]] = 1000.0
        pl = pseudo_labels(weak, 0.95)
        assert unlabeled_ce(ad.Node(weak.copy()), pl).item() < 1e-12

    def test_mixed_mask_oracle(self):
        weak = np.array([[8.0, 0.0, 0.0], [0.1, 0.2, 0.0], [0.0, 0.0, 9.0], [1.0, 1.2, 0.9]])
        strong = np.random.default_rng(2).normal(size=(4, 3))
        pl = pseudo_labels(weak, 0.95)
        assert pl.mask.tolist() == [True, False, True, False]
        got = unlabeled_ce(ad.Node(strong), pl).item()
        want = oracles.unlabeled_cross_entropy(strong.tolist(), weak.tolist(), 0.95)
        assert got == pytest.approx(want, rel=1e-12)

    def test_no_gradient_into_weak_view(self):
        weak = ad.param(np.array([[9.0, 0.0], [0.0, 9.0]]))
        strong = ad.param(np.zeros((2, 2)))
        grads = ad.backward(unlabeled_ce(strong, pseudo_labels(weak, 0.95)))
        assert weak not in grads and strong in grads

    def test_gradient(self):
        rng = np.random.default_rng(13)
        weak = rng.normal(size=(6, 3)) * 6
        pl = pseudo_labels(weak, 0.8)
        assert pl.mask.any()
        assert ad.check_gradient(lambda x: unlabeled_ce(x, pl), rng.normal(size=(6, 3))) < 1e-4


@pytest.mark.parametrize("lx, lu, lam, want", [(1.0, 0.5, 1.0, 1.5), (2.3, 0.4, 2.0, 3.1), (0.7, 9.0, 0.0, 0.7)])
def test_combined_ce(lx, lu, lam, want):
    assert combined_ce(lx, lu, lam).item() == pytest.approx(want, abs=1e-15)


class TestNormalizedBatch:
    def test_rejects_non_unit_rows(self):
        with pytest.raises(ContractError):
            NormalizedLogitsBatch(ad.Node(np.array([[1.0, 1.0]])), [0])

    def test_from_logits_normalizes(self):
        b = normalized([[3.0, 4.0], [0.0, -2.0]], [0, 1])
        np.testing.assert_allclose(b.vectors.value, [[0.6, 0.8], [0.0, -1.0]])


class TestBatchMeanTriplet:
    def test_two_identical_same_label_rows(self):
        loss = batchmean_triplet(normalized([[1.0, 2.0], [1.0, 2.0]], [3, 3]), 0.5)
        assert loss.item() == pytest.approx(0.974077, abs=1e-6)
        assert loss.item() == pytest.approx(oracles.softplus(0.5), abs=1e-15)

    def test_single_row(self):
        assert batchmean_triplet(normalized([[0.3, -1.0]], [0]), 0.5).item() == pytest.approx(
            math.log1p(math.exp(0.5)), abs=1e-15)

    def test_empty_batch_diagnostic(self):
        out = batchmean_triplet(NormalizedLogitsBatch(np.zeros((0, 3)), []), 0.5)
        assert out.item() == 0.0 and out.diagnostic

    def test_six_rows_two_classes_oracle(self):
        x, y = random_batch(21, n=6, classes=2)
        rows = [oracles.unit(r) for r in x.tolist()]
        want = oracles.batchmean_triplet(rows, y.tolist(), 0.5)
        got = batchmean_triplet(normalized(x, y), 0.5).item()
        assert abs(got - want) <= 1e-10 * abs(want)

    def test_divides_by_full_batch(self):
        # anchor 0 has one negative at distance 2; the batch holds 4 rows
        rows = [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]]
        loss = batchmean_triplet(normalized(rows, [0, 0, 0, 1]), 0.5).item()
        per_same = oracles.softplus(0.5 - 2.0 / 4)
        per_other = oracles.softplus(0.5 - 6.0 / 4)
        assert loss == pytest.approx((3 * per_same + per_other) / 4, abs=1e-15)

    def test_gradient(self):
        x, y = random_batch(22, n=7, classes=3)
        assert ad.check_gradient(lambda v: batchmean_triplet(
            NormalizedLogitsBatch.from_logits(v, y), 0.5), x) < 1e-4


class TestContrastive:
    def test_one_pair_no_negatives(self):
        assert contrastive_rank(normalized([[1.0, 0.0], [0.0, 1.0]], [2, 2]), 0.2).item() == 0.0

    def test_one_pair_one_negative(self):
        loss = contrastive_rank(normalized([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]], [0, 0, 1]), 0.2)
        want = -math.log(math.exp(5) / (math.exp(5) + math.exp(-5)))
        assert loss.item() == pytest.approx(want, rel=1e-9)
        assert loss.item() == pytest.approx(4.54e-5, abs=5e-8)

    def test_no_pairs_diagnostic(self):
        out = contrastive_rank(normalized([[1.0, 0.0], [0.0, 1.0]], [0, 1]), 0.2)
        assert out.item() == 0.0 and out.diagnostic

    @pytest.mark.parametrize("temperature", [0.0, -0.1])
    def test_bad_temperature(self, temperature):
        with pytest.raises(ConfigError):
            contrastive_rank(normalized([[1.0, 0.0]], [0]), temperature)

    def test_six_rows_two_classes_oracle(self):
        x, y = random_batch(31, n=6, classes=2)
        rows = [oracles.unit(r) for r in x.tolist()]
        want = oracles.contrastive(rows, y.tolist(), 0.2)
        got = contrastive_rank(normalized(x, y), 0.2).item()
        assert abs(got - want) <= 1e-10 * abs(want)

    def test_gradient(self):
        x, y = random_batch(32, n=8, classes=3)
        assert ad.check_gradient(lambda v: contrastive_rank(
            NormalizedLogitsBatch.from_logits(v, y), 0.2), x) < 1e-4


class TestRankingLoss:
    def test_empty_unlabeled_is_labeled_term(self):
        hp = Hyperparams()
        lab = normalized(*random_batch(41, n=5, classes=2))
        empty = NormalizedLogitsBatch(np.zeros((0, 4)), [])
        assert ranking_loss("CT", lab, empty, hp).item() == contrastive_rank(lab, 0.2).item()
        assert ranking_loss("BM", lab, empty, hp).item() == batchmean_triplet(lab, 0.5).item()

    def test_bm_composition(self):
        hp = Hyperparams()
        lab = normalized([[1.0, 2.0], [1.0, 2.0]], [0, 0])
        unl = normalized(*random_batch(42, n=4, classes=2))
        got = ranking_loss("BM", lab, unl, hp).item()
        assert got == pytest.approx(0.974077 + batchmean_triplet(unl, 0.5).item(), abs=1e-6)

    def test_singletons_ct_zero(self):
        one = normalized([[1.0, 0.0]], [0])
        assert ranking_loss("CT", one, one, Hyperparams()).item() == 0.0

    def test_unknown_kind(self):
        one = normalized([[1.0, 0.0]], [0])
        with pytest.raises(ConfigError):
            ranking_loss("triplet", one, one, Hyperparams())


def test_oracle_equivalence_100_seeds():
    for seed in range(100):
        x, y = random_batch(seed)
        rows = [oracles.unit(r) for r in x.tolist()]
        b = normalized(x, y)
        for got, want in ((batchmean_triplet(b, 0.5).item(), oracles.batchmean_triplet(rows, y.tolist(), 0.5)),
                          (contrastive_rank(b, 0.2).item(), oracles.contrastive(rows, y.tolist(), 0.2))):
            assert abs(got - want) <= 1e-10 * max(abs(want), 1e-300), seed


class TestInvariants:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_permutation_invariance(self, seed):
        x, y = random_batch(seed)
        perm = np.random.default_rng(seed + 1).permutation(len(y))
        for fn, arg in ((batchmean_triplet, 0.5), (contrastive_rank, 0.2)):
            a = fn(normalized(x, y), arg).item()
            b = fn(normalized(x[perm], y[perm]), arg).item()
            assert abs(a - b) <= 1e-12 * max(1.0, abs(a))
        labels = one_hot(y, int(y.max()) + 1)
        logits = x[:, :labels.shape[1]]
        assert supervised_ce(ad.Node(logits), labels).item() == pytest.approx(
            supervised_ce(ad.Node(logits[perm]), labels[perm]).item(), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 50))
    def test_ranking_scale_invariance(self, seed, c):
        x, y = random_batch(seed)
        for fn, arg in ((batchmean_triplet, 0.5), (contrastive_rank, 0.2)):
            assert fn(normalized(c * x, y), arg).item() == pytest.approx(
                fn(normalized(x, y), arg).item(), abs=1e-9)

    def test_ce_not_scale_invariant(self):
        x, y = random_batch(5, n=6, classes=3, dim=3)
        labels = one_hot(y, 3)
        assert abs(supervised_ce(ad.Node(2 * x), labels).item()
                   - supervised_ce(ad.Node(x), labels).item()) > 1e-3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_nonnegative_and_bm_positive(self, seed):
        x, y = random_batch(seed)
        b = normalized(x, y)
        assert batchmean_triplet(b, 0.5).item() > 0
        assert contrastive_rank(b, 0.2).item() >= 0
        assert unlabeled_ce(ad.Node(x), pseudo_labels(x * 3, 0.5)).item() >= 0


def test_hyperparams_defaults_and_validation():
    hp = Hyperparams()
    assert hp.unlabeled_batch_size == 448
    with pytest.raises(ConfigError) as info:
        Hyperparams(tau=1.5)
    assert info.value.key == "tau"
    assert isinstance(pseudo_labels(np.zeros((0, 3)), 0.9), PseudoLabelResult)
