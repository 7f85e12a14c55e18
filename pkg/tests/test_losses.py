import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankcon import autodiff as ad
from rankcon.autodiff import Tensor
from rankcon.errors import ContractError, DegenerateInputError
from rankcon.losses import (cosine_similarity, ranked_contrastive_loss, ranked_level_loss, similarity_matrix,
                            softmax_ce_loss, supcon_loss)
from rankcon.ranking import RankingTable, TemperatureSchedule

from helpers import central_diff, eq2_level_oracle, eq2_total_oracle, random_ranking, rel_err, unit_rows


def make_table(ranks_of_class):
    names = tuple(f"c{i}" for i in range(len(ranks_of_class)))
    return RankingTable(names, tuple(tuple(frozenset(s) for s in per) for per in ranks_of_class))


CHAIN3 = [[{1}], [{0, 2}], [{1}]]


# -- cosine similarity --------------------------------------------------------------

@pytest.mark.parametrize("q, x, expected", [
    ([1, 0], [1, 0], 1.0),
    ([1, 0], [0, 1], 0.0),
    ([1, 0], [1, 1], 0.70710678),
])
def test_cosine_examples(q, x, expected):
    assert cosine_similarity(q, x) == pytest.approx(expected, abs=1e-8)


def test_cosine_zero_vector():
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_scale_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    q, x = rng.normal(size=5), rng.normal(size=5)
    assert cosine_similarity(a * q, b * x) == pytest.approx(cosine_similarity(q, x), abs=1e-12)


def test_similarity_matrix_properties():
    z = unit_rows(np.random.default_rng(0).normal(size=(6, 4)))
    s = similarity_matrix(Tensor(z))
    np.testing.assert_allclose(s.values.data, s.values.data.T, atol=1e-12)
    assert np.all(np.abs(s.values.data) <= 1 + 1e-12)
    assert not s.mask.diagonal().any()


# -- single level ------------------------------------------------------------------

def level_loss(z, labels, ranks, anchor, level, taus):
    out = ranked_level_loss(anchor, level, similarity_matrix(Tensor(z)), labels, make_table(ranks),
                            TemperatureSchedule(tuple(taus)))
    return None if out is None else out.item()


def test_symmetric_pair_gives_log2():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert level_loss(z, [0, 0, 1], [[], []], 0, 1, [1.0]) == pytest.approx(0.6931471805599453, abs=1e-15)


def test_pos_one_neg_minus_one():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    # log(1 + e^-2), evaluated directly
    assert level_loss(z, [0, 0, 1], [[], []], 0, 1, [1.0]) == pytest.approx(0.1269280110429725, abs=1e-15)


def test_level_matches_set_enumeration_on_six_samples():
    rng = np.random.default_rng(11)
    z = unit_rows(rng.normal(size=(6, 5)))
    labels = np.array([0, 0, 1, 1, 2, 2])
    ranks = [[{1}], [{2}], [{0}]]
    for a in range(6):
        for level in (1, 2):
            want = eq2_level_oracle(z, labels, ranks, a, level, [0.1, 0.2])
            got = level_loss(z, labels, ranks, a, level, [0.1, 0.2])
            assert got == pytest.approx(want, abs=1e-10, rel=0)


def test_empty_positive_set_is_skipped():
    z = unit_rows(np.random.default_rng(0).normal(size=(3, 3)))
    assert level_loss(z, [0, 0, 2], [[{1}], [], []], 0, 2, [0.1, 0.2]) is None


def test_level_argument_checks():
    z = unit_rows(np.random.default_rng(0).normal(size=(3, 3)))
    with pytest.raises(ContractError):
        level_loss(z, [0, 0, 1], [[], []], 0, 2, [0.1])
    with pytest.raises(ContractError):
        level_loss(z, [0, 0, 1], [[], []], 5, 1, [0.1])


def test_identical_embeddings_closed_form():
    z = np.tile([[0.6, 0.8]], (8, 1))
    labels = np.array([0, 0, 0, 1, 1, 2, 2, 3])
    ranks = [[{1}, {2}], [], [], []]
    # anchor 0: |P_1|=2, |P_2|=2, |P_3|=2, |N|=1; level i denominators drop earlier ranks
    assert level_loss(z, labels, ranks, 0, 1, [0.1, 0.2, 0.3]) == pytest.approx(-math.log(2 / 7), abs=1e-12)
    assert level_loss(z, labels, ranks, 0, 2, [0.1, 0.2, 0.3]) == pytest.approx(-math.log(2 / 5), abs=1e-12)
    assert level_loss(z, labels, ranks, 0, 3, [0.1, 0.2, 0.3]) == pytest.approx(-math.log(2 / 3), abs=1e-12)


def _ordered_case(h1, h2):
    """Anchor with one P_1 sample at similarity h1, one P_2 sample at h2, one negative at -1."""
    q = np.array([1.0, 0.0])
    at = lambda h: np.array([h, math.sqrt(max(0.0, 1 - h * h))])
    z = np.stack([q, at(h1), at(h2), -q])
    labels = np.array([0, 0, 1, 2])
    ranks = [[{1}], [], []]
    taus = [0.1, 0.2]
    got = sum(level_loss(z, labels, ranks, 0, lv, taus) for lv in (1, 2))
    want = sum(eq2_level_oracle(z, labels, ranks, 0, lv, taus) for lv in (1, 2))
    return got, want


def test_perfect_ordering_beats_permuted():
    good, good_oracle = _ordered_case(1.0, 0.5)
    bad, bad_oracle = _ordered_case(0.5, 1.0)
    assert good == pytest.approx(good_oracle, abs=1e-12)
    assert bad == pytest.approx(bad_oracle, abs=1e-12)
    assert good < bad


# -- full loss ------------------------------------------------------------------

def random_batch(rng, n, d, c):
    labels = rng.integers(0, c, size=n)
    return rng.normal(size=(n, d)), labels


def test_breakdown_consistency():
    rng = np.random.default_rng(5)
    raw, labels = random_batch(rng, 10, 4, 4)
    ranks = [[{1}, {2, 3}], [{0}], [], [{2}, {0}]]
    out = ranked_contrastive_loss(ad.l2_normalize(Tensor(raw)), labels, make_table(ranks),
                                  TemperatureSchedule((0.1, 0.15, 0.3)))
    assert out.total.item() == pytest.approx(sum(out.per_level), rel=1e-12)
    assert all(v >= 0 for v in out.per_level)
    want = eq2_total_oracle(unit_rows(raw), labels, ranks, [0.1, 0.15, 0.3])
    assert out.total.item() == pytest.approx(want, abs=1e-10)
    assert out.per_anchor.shape == (10,)


def test_anchor_without_partners_reported():
    z = unit_rows(np.random.default_rng(1).normal(size=(4, 3)))
    out = ranked_contrastive_loss(Tensor(z), [0, 0, 1, 2], make_table([[], [], []]), TemperatureSchedule((0.1,)))
    assert out.excluded == 2 and out.skipped == 2
    assert out.level_counts == [2]


def test_anchor_mask_keeps_row_as_contrast():
    rng = np.random.default_rng(2)
    z = unit_rows(rng.normal(size=(5, 3)))
    labels = [0, 0, 1, 1, 2]
    table, taus = make_table([[], [], []]), TemperatureSchedule((0.2,))
    masked = ranked_contrastive_loss(Tensor(z), labels, table, taus, anchor_mask=[1, 1, 1, 1, 0])
    full = ranked_contrastive_loss(Tensor(z), labels, table, taus)
    # the lone class-2 sample has no positives, so masking it changes nothing
    assert masked.total.item() == pytest.approx(full.total.item(), abs=1e-14)
    masked = ranked_contrastive_loss(Tensor(z), labels, table, taus, anchor_mask=[0, 1, 1, 1, 1])
    assert masked.level_counts == [3]


def test_requires_enough_temperatures():
    z = unit_rows(np.random.default_rng(1).normal(size=(4, 3)))
    with pytest.raises(ContractError):
        ranked_contrastive_loss(Tensor(z), [0, 0, 1, 1], make_table([[{1}], []]), TemperatureSchedule((0.1,)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_scale_and_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    raw, labels = random_batch(rng, 8, 5, 4)
    ranks = random_ranking(rng, 4, 3)
    table, taus = make_table(ranks), TemperatureSchedule((0.1, 0.15, 0.225))
    base = ranked_contrastive_loss(ad.l2_normalize(Tensor(raw)), labels, table, taus)
    scaled = ranked_contrastive_loss(ad.l2_normalize(Tensor(raw * 7.3)), labels, table, taus)
    assert abs(scaled.total.item() - base.total.item()) <= 1e-6 * max(1.0, abs(base.total.item()))
    perm = rng.permutation(8)
    permuted = ranked_contrastive_loss(ad.l2_normalize(Tensor(raw[perm])), labels[perm], table, taus)
    assert permuted.total.item() == pytest.approx(base.total.item(), abs=1e-6)
    np.testing.assert_allclose(permuted.per_anchor, base.per_anchor[perm], atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_levels_strictly_positive_with_extra_denominator_terms(seed):
    rng = np.random.default_rng(seed)
    z = unit_rows(rng.normal(size=(8, 4)))
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    ranks = [[{1}, {2}], [{2}], [{3}], []]
    for a in range(8):
        for level in (1, 2, 3):
            v = level_loss(z, labels, ranks, a, level, [0.1, 0.2, 0.3])
            if v is not None:
                assert v > 0


def test_level_monotone_in_positive_similarity():
    rng = np.random.default_rng(9)
    z = unit_rows(rng.normal(size=(6, 3)))
    labels = np.array([0, 0, 1, 1, 2, 2])
    ranks = [[{1}], [], []]
    # move sample 2 (rank 2 for anchor 0) towards the anchor along the great circle
    prev = None
    for t in np.linspace(0.0, 0.9, 10):
        zz = z.copy()
        zz[2] = unit_rows([(1 - t) * z[2] + t * z[0]])[0]
        v = level_loss(zz, labels, ranks, 0, 2, [0.1, 0.2])
        if prev is not None:
            assert v < prev
        prev = v


def test_recursive_removal_zero_influence():
    rng = np.random.default_rng(4)
    z = unit_rows(rng.normal(size=(6, 4)))
    labels = np.array([0, 0, 1, 1, 2, 2])
    ranks = [[{1}, {2}], [], []]
    base = level_loss(z, labels, ranks, 0, 2, [0.1, 0.2, 0.3])
    for j in (1,):  # same-class sample: rank 1 < 2
        for _ in range(5):
            zz = z.copy()
            zz[j] = unit_rows([z[j] + 1e-3 * rng.normal(size=4)])[0]
            assert abs(level_loss(zz, labels, ranks, 0, 2, [0.1, 0.2, 0.3]) - base) < 1e-10
    base3 = level_loss(z, labels, ranks, 0, 3, [0.1, 0.2, 0.3])
    for j in (1, 2, 3):  # ranks 1 and 2 do not enter level 3
        zz = z.copy()
        zz[j] = unit_rows([z[j] + 1e-2 * rng.normal(size=4)])[0]
        assert abs(level_loss(zz, labels, ranks, 0, 3, [0.1, 0.2, 0.3]) - base3) < 1e-10


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    raw, labels = random_batch(rng, 8, 6, 4)
    ranks = [[{1}, {2}], [{0}], [{3}, {1}], []]
    table, taus = make_table(ranks), TemperatureSchedule((0.1, 0.2, 0.3))
    x = Tensor(raw, requires_grad=True)
    ranked_contrastive_loss(ad.l2_normalize(x), labels, table, taus).total.backward()
    f = lambda v: ranked_contrastive_loss(ad.l2_normalize(Tensor(v)), labels, table, taus).total.item()
    assert rel_err(x.grad, central_diff(f, raw)) < 1e-4


def test_supcon_helper_is_r1():
    rng = np.random.default_rng(8)
    raw, labels = random_batch(rng, 10, 4, 3)
    z = ad.l2_normalize(Tensor(raw))
    a = supcon_loss(z, labels, tau=0.2, num_classes=3).total.item()
    b = ranked_contrastive_loss(z, labels, make_table([[], [], []]), TemperatureSchedule((0.2,))).total.item()
    assert a == b


# -- softmax ------------------------------------------------------------------------

def test_softmax_uniform_logits():
    assert softmax_ce_loss(Tensor(np.zeros((4, 10))), [0, 3, 5, 9]).item() == pytest.approx(2.302585092994046,
                                                                                                  abs=1e-12)


def test_softmax_confident_logits():
    # log(1 + e^-20)
    assert softmax_ce_loss(Tensor([[10.0, -10.0]]), [0]).item() == pytest.approx(2.061153620314381e-09, rel=1e-6)


def test_softmax_column_permutation():
    rng = np.random.default_rng(0)
    logits, labels = rng.normal(size=(6, 5)), rng.integers(0, 5, 6)
    perm = rng.permutation(5)
    inv = np.argsort(perm)
    a = softmax_ce_loss(Tensor(logits), labels).item()
    b = softmax_ce_loss(Tensor(logits[:, perm]), inv[labels]).item()
    assert a == pytest.approx(b, abs=1e-14)


def test_softmax_gradient_and_errors():
    rng = np.random.default_rng(1)
    logits, labels = rng.normal(size=(5, 4)) * 3, rng.integers(0, 4, 5)
    x = Tensor(logits, requires_grad=True)
    softmax_ce_loss(x, labels).backward()
    f = lambda v: softmax_ce_loss(Tensor(v), labels).item()
    assert rel_err(x.grad, central_diff(f, logits)) < 1e-6
    with pytest.raises(ContractError):
        softmax_ce_loss(Tensor(logits), [0, 1, 2, 3, 4])
    with pytest.raises(ContractError):
        softmax_ce_loss(Tensor(np.zeros((2, 1))), [0, 0])
