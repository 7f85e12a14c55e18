"""Cosine similarity, the ranked contrastive loss, SupCon and softmax cross-entropy.

For an anchor ``q`` whose class ranks ``P_1 .. P_r`` (``P_1`` = other samples
of the same class, including the second view of ``q``) and negatives ``N``,
level ``i`` contributes::

    l_i = -log( sum_{p in P_i} exp(h(q,p)/tau_i)
                / (sum_{p in P_j, j >= i} exp(h(q,p)/tau_i) + sum_{n in N} exp(h(q,n)/tau_i)) )

Samples at ranks ``j < i`` are excluded from level ``i`` entirely.  With a
single rank this is the supervised contrastive loss with the positive sum
inside the log.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DegenerateInputError
from .ranking import NEGATIVE, RankingTable, TemperatureSchedule


def cosine_similarity(q, x) -> float:
    q = np.asarray(q, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    nq, nx = np.linalg.norm(q), np.linalg.norm(x)
    if nq < ad.NORM_EPS or nx < ad.NORM_EPS:
        raise DegenerateInputError("cosine_similarity: zero vector")
    return float(np.clip(q @ x / (nq * nx), -1.0, 1.0))


@dataclass
class SimilarityMatrix:
    """Pairwise cosine similarities of a batch; ``mask`` is False on self-pairs."""

    values: Tensor
    mask: np.ndarray

    @property
    def size(self) -> int:
        return self.values.shape[0]


def similarity_matrix(embeddings) -> SimilarityMatrix:
    """``Z Z^T`` for unit-norm rows ``Z`` (normalise first with ``l2_normalize``)."""
    z = ad.as_tensor(embeddings)
    if z.ndim != 2:
        raise ContractError(f"embeddings must be 2-D, got shape {z.shape}")
    sims = z @ z.T
    return SimilarityMatrix(sims, ~np.eye(z.shape[0], dtype=bool))


def level_masks(ranks: np.ndarray, valid: np.ndarray, level: int):
    """Numerator and denominator masks of level ``level`` for every anchor row.

    ``ranks[a, b]`` is the rank of sample ``b`` from anchor ``a``'s viewpoint
    and ``valid`` excludes self-pairs (and any rows that may not be contrasted).
    """
    num = valid & (ranks == level)
    den = valid & ((ranks >= level) | (ranks == NEGATIVE))
    return num, den


def _masked_logsumexp(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row-wise ``log sum_{mask} exp(logits)`` with a detached max shift.

    Entries outside ``mask`` contribute exactly zero value and zero gradient.
    """
    masked = np.where(mask, logits.data, -np.inf)
    shift = masked.max(axis=1, keepdims=True)
    fmask = mask.astype(logits.data.dtype)
    e = ad.exp((logits - shift) * fmask) * fmask
    return ad.log(e.sum(axis=1)) + shift[:, 0]


def _level_terms(sims: Tensor, rows: np.ndarray, num: np.ndarray, den: np.ndarray, tau: float) -> Tensor:
    logits = ad.scale(sims[rows], 1.0 / tau)
    return _masked_logsumexp(logits, den[rows]) - _masked_logsumexp(logits, num[rows])


def ranked_level_loss(
    anchor: int,
    level: int,
    sims: SimilarityMatrix,
    labels,
    table: RankingTable,
    taus: TemperatureSchedule,
) -> Tensor | None:
    """Contribution ``l_level`` of one anchor, or ``None`` when ``P_level`` is empty in the batch."""
    labels = np.asarray(labels, dtype=np.intp)
    n = sims.size
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch of {n}")
    if not 0 <= anchor < n:
        raise ContractError(f"anchor {anchor} outside batch of {n}")
    if not 1 <= level <= len(taus):
        raise ContractError(f"level {level} outside 1..{len(taus)}")
    ranks = table.rank_matrix(labels)
    num, den = level_masks(ranks, sims.mask, level)
    if not num[anchor].any():
        return None
    rows = np.array([anchor])
    return _level_terms(sims.values, rows, num, den, taus[level])[0]


@dataclass
class LossBreakdown:
    """Total loss, its per-level parts and per-anchor sums.

    ``per_level[i-1]`` is the mean of ``l_i`` over anchors whose ``P_i`` is
    nonempty (0.0 if there are none).  ``per_anchor`` adds up each anchor's
    levels.  ``skipped`` counts (anchor, level) pairs with an empty positive
    set and ``excluded`` the anchors for which every level was empty.
    """

    total: Tensor
    per_level: list
    per_anchor: np.ndarray
    level_counts: list
    skipped: int = 0
    excluded: int = 0
    level_terms: list = field(default_factory=list, repr=False)


def ranked_contrastive_loss(
    embeddings,
    labels,
    table: RankingTable,
    taus: TemperatureSchedule,
    anchor_mask=None,
) -> LossBreakdown:
    """Sum over levels of the anchor-averaged ranked loss.

    ``embeddings`` must already be unit-norm rows.  ``anchor_mask`` (optional,
    boolean per row) removes rows from the anchor set while keeping them as
    contrast samples for other anchors.
    """
    labels = np.asarray(labels, dtype=np.intp)
    sims = similarity_matrix(embeddings)
    n = sims.size
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch of {n}")
    if n < 2:
        raise ContractError("need at least two samples to contrast")
    if labels.min() < 0 or labels.max() >= table.num_classes:
        raise ContractError("label outside the ranking table's class range")
    if table.r > len(taus):
        raise ContractError(f"ranking has {table.r} levels but only {len(taus)} temperatures")
    anchors = np.ones(n, dtype=bool) if anchor_mask is None else np.asarray(anchor_mask, dtype=bool)

    ranks = table.rank_matrix(labels)
    rank_counts = np.array([table.rank_count(c) for c in range(table.num_classes)])[labels]
    per_anchor = np.zeros(n)
    covered = np.zeros(n, dtype=bool)
    total = None
    per_level, level_counts, terms = [], [], []
    skipped = 0
    for level in range(1, table.r + 1):
        num, den = level_masks(ranks, sims.mask, level)
        expected = anchors & (rank_counts >= level)
        rows = np.flatnonzero(expected & num.any(axis=1))
        skipped += int(expected.sum()) - len(rows)
        level_counts.append(len(rows))
        if len(rows) == 0:
            per_level.append(0.0)
            terms.append(None)
            continue
        l_rows = _level_terms(sims.values, rows, num, den, taus[level])
        term = l_rows.mean()
        per_anchor[rows] += l_rows.data
        covered[rows] = True
        per_level.append(float(term.data))
        terms.append(term)
        total = term if total is None else total + term
    if total is None:
        # nothing to contrast; keep the result on the tape with a zero value
        total = ad.scale(sims.values.sum(), 0.0)
    excluded = int((anchors & ~covered).sum())
    return LossBreakdown(total, per_level, per_anchor, level_counts, skipped, excluded, terms)


def supcon_loss(embeddings, labels, tau: float = 0.1, num_classes: int | None = None) -> LossBreakdown:
    """Supervised contrastive loss: the ranked loss with only the anchor's own class positive."""
    labels = np.asarray(labels, dtype=np.intp)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    table = RankingTable.empty([str(i) for i in range(c)])
    return ranked_contrastive_loss(embeddings, labels, table, TemperatureSchedule((tau,)))


def softmax_ce_loss(logits, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ContractError(f"logits must be B x C with C >= 2, got {logits.shape}")
    b, c = logits.shape
    if labels.shape != (b,):
        raise ContractError(f"labels shape {labels.shape} does not match {b} rows")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"label outside 0..{c - 1}")
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(b), labels] = 1.0
    lse = _masked_logsumexp(logits, np.ones(logits.shape, dtype=bool))
    true = (logits * onehot).sum(axis=1)
    return (lse - true).mean()
