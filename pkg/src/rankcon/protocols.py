"""Withheld-class OOD protocol and the reference-vector training variant."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractError
from .evaluation import (EvalReport, PrototypeBank, knn_predict, max_softmax_score, nearest_prototype_margin,
                         ood_score, per_class_accuracy, roc_auroc)
from .ranking import RankingTable
from .training import RunConfig, TrainResult, embed, eval_space, eval_subset, logits, train


def prototype_roc(train_emb, train_y, in_emb, out_emb):
    """ROC of max-prototype-similarity scores for known (in) versus withheld (out) embeddings."""
    bank = PrototypeBank.fit(train_emb, train_y)
    return roc_auroc(ood_score(in_emb, bank), ood_score(out_emb, bank)), bank


@dataclass
class WithheldSplit:
    """Known-class views of the data with labels remapped to ``0..K-1``."""

    train: Dataset
    test_in: Dataset
    test_out: Dataset
    train_source: np.ndarray
    table: RankingTable
    remap: dict
    withheld: tuple


def split_withheld(train_ds: Dataset, test_ds: Dataset, table: RankingTable, withheld) -> WithheldSplit:
    withheld = tuple(sorted({int(c) for c in withheld}))
    c = train_ds.num_classes
    if not withheld:
        raise ContractError("withheld class set is empty")
    if any(not 0 <= w < c for w in withheld):
        raise ContractError(f"withheld ids must be in [0, {c})")
    if len(withheld) >= c:
        raise ContractError("cannot withhold every class")
    compact, remap = table.without(withheld)
    lut = np.full(c, -1, dtype=np.int64)
    for old, new in remap.items():
        lut[old] = new
    names = compact.class_names

    def known(ds):
        idx = np.flatnonzero(lut[ds.y] >= 0)
        return Dataset(ds.x[idx], lut[ds.y[idx]], names, ds.kind, ds.image_shape, ds.source), idx

    tr, tr_idx = known(train_ds)
    te_in, _ = known(test_ds)
    out_idx = np.flatnonzero(lut[test_ds.y] < 0)
    te_out = test_ds.subset(out_idx)
    return WithheldSplit(tr, te_in, te_out, tr_idx, compact, remap, withheld)


def withheld_class_protocol(config: RunConfig, train_ds: Dataset, test_ds: Dataset, table: RankingTable,
                            withheld) -> tuple[EvalReport, TrainResult]:
    """Train without the withheld classes, then score their test samples as OOD.

    The returned report's metadata carries the index audit: ``leaked`` is the
    number of training-batch rows drawn from withheld classes (always 0 unless
    the split is broken).
    """
    split = split_withheld(train_ds, test_ds, table, withheld)
    if split.test_out.x.shape[0] == 0 or split.test_in.x.shape[0] == 0:
        raise ContractError("withheld protocol needs test samples of both known and withheld classes")
    result = train(config, split.train, split.table)
    used = split.train_source[result.seen_indices]
    leaked = int(np.isin(train_ds.y[used], split.withheld).sum())

    model, space = result.model, eval_space(config)
    sub = eval_subset(config, len(split.train))
    tr = embed(model, split.train.x[sub], space)
    te_in = embed(model, split.test_in.x, space)
    te_out = embed(model, split.test_out.x, space)
    preds = knn_predict(tr, split.train.y[sub], te_in, min(config.eval.k, len(sub)))
    if config.loss.mode == "softmax":
        score_name = "max_softmax_probability"
        roc = roc_auroc(max_softmax_score(logits(model, split.test_in.x)),
                        max_softmax_score(logits(model, split.test_out.x)))
        margin = None
    else:
        score_name = "max_prototype_cosine"
        roc, bank = prototype_roc(tr, split.train.y[sub], te_in, te_out)
        margin = float(np.mean(nearest_prototype_margin(te_out, bank)))
    report = EvalReport(
        accuracy=float(np.mean(preds == split.test_in.y)),
        per_class_accuracy=per_class_accuracy(preds, split.test_in.y, split.table.class_names),
        auroc=roc.auroc,
        roc=roc.points(),
        metadata={
            "protocol": "withheld_class",
            "withheld": [train_ds.class_names[w] for w in split.withheld],
            "known": list(split.table.class_names),
            "loss_mode": config.loss.mode,
            "ood_score": score_name,
            "probe": "knn",
            "embedding_space": space,
            "leaked": leaked,
            "train_rows_audited": int(len(used)),
            "ood_mean_prototype_margin": margin,
            "seed": config.seed,
            "config_hash": config.config_hash(),
        },
    )
    return report, result


def reference_vector_mode(config: RunConfig, dataset: Dataset, table: RankingTable, ood_aux,
                          f=None) -> TrainResult:
    """Train with auxiliary OOD samples ranked only towards a fixed reference vector ``f``.

    Known classes never rank ``f``.  ``f`` defaults to all-ones in the
    projection space.  With no auxiliary data this falls back to standard
    training with a warning.
    """
    if f is not None and not np.any(np.asarray(f)):
        raise ContractError("reference vector must be nonzero")
    if ood_aux is None or len(ood_aux) == 0:
        warnings.warn("no auxiliary OOD samples; reference-vector mode disabled", UserWarning, stacklevel=2)
        return train(config, dataset, table)
    return train(config, dataset, table, aux_x=np.asarray(ood_aux), reference=f)


def reference_similarity(result: TrainResult, x) -> np.ndarray:
    """Cosine similarity of each row's projection to the normalised reference vector (higher = more OOD)."""
    if result.reference is None:
        raise ContractError("model was not trained in reference-vector mode")
    z = embed(result.model, np.asarray(x), "projection")
    return z @ result.reference[0].astype(np.float64)
