"""Probes, OOD scoring, ROC/AUROC and 2-D projections."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DegenerateInputError
from .losses import softmax_ce_loss
from .model import SGD


def _unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norm < ad.NORM_EPS):
        raise DegenerateInputError("zero-norm embedding")
    return x / norm


# -- classification probes -----------------------------------------------------

def knn_predict(train_emb, train_y, test_emb, k: int = 5, chunk: int = 1024) -> np.ndarray:
    """Majority vote over the ``k`` nearest training rows by cosine distance.

    Vote ties go to the class with the smallest summed distance among its
    voters, then to the lowest class id.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    if len(train_y) == 0 or len(test_emb) == 0:
        raise ContractError("knn: empty split")
    if not 1 <= k <= len(train_y):
        raise ContractError(f"knn: k={k} must be in [1, {len(train_y)}]")
    a, b = _unit_rows(train_emb), _unit_rows(test_emb)
    n_cls = int(train_y.max()) + 1
    preds = np.empty(len(b), dtype=np.int64)
    for start in range(0, len(b), chunk):
        dist = 1.0 - b[start:start + chunk] @ a.T
        nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
        for row, idx in enumerate(nn):
            votes = np.bincount(train_y[idx], minlength=n_cls)
            summed = np.bincount(train_y[idx], weights=dist[row, idx], minlength=n_cls)
            top = np.flatnonzero(votes == votes.max())
            if len(top) > 1:
                best = summed[top].min()
                top = top[np.isclose(summed[top], best, rtol=1e-12, atol=1e-12)]
            preds[start + row] = top[0]
    return preds


def knn_accuracy(train_emb, train_y, test_emb, test_y, k: int = 5) -> float:
    preds = knn_predict(train_emb, train_y, test_emb, k)
    return float(np.mean(preds == np.asarray(test_y)))


def linear_probe(train_emb, train_y, test_emb, test_y, epochs: int = 200, lr: float = 0.5,
                 momentum: float = 0.9, seed: int = 0, num_classes: int | None = None) -> float:
    """Accuracy of a softmax-regression head trained full-batch on frozen embeddings."""
    x_tr = np.asarray(train_emb, dtype=np.float64)
    x_te = np.asarray(test_emb, dtype=np.float64)
    y_tr = np.asarray(train_y, dtype=np.int64)
    if len(x_tr) == 0 or len(x_te) == 0:
        raise ContractError("linear probe: empty split")
    c = num_classes or int(max(y_tr.max(), np.max(test_y))) + 1
    c = max(c, 2)
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(x_tr.shape[1])
    w = ad.Tensor(rng.uniform(-bound, bound, (x_tr.shape[1], c)), requires_grad=True)
    bias = ad.Tensor(np.zeros(c), requires_grad=True)
    opt = SGD([w, bias], lr=lr, momentum=momentum)
    for _ in range(epochs):
        opt.zero_grad()
        softmax_ce_loss(ad.Tensor(x_tr) @ w + bias, y_tr).backward()
        opt.step()
    pred = np.argmax(x_te @ w.data + bias.data, axis=1)
    return float(np.mean(pred == np.asarray(test_y)))


def per_class_accuracy(pred, y, class_names) -> dict:
    pred, y = np.asarray(pred), np.asarray(y)
    out = {}
    for c, name in enumerate(class_names):
        m = y == c
        if m.any():
            out[name] = float(np.mean(pred[m] == c))
    return out


# -- OOD scores --------------------------------------------------------------------

@dataclass
class PrototypeBank:
    """Re-normalised class-mean embeddings of the known classes."""

    prototypes: np.ndarray
    class_ids: np.ndarray

    @classmethod
    def fit(cls, embeddings, labels) -> "PrototypeBank":
        emb = _unit_rows(embeddings)
        labels = np.asarray(labels)
        ids = np.unique(labels)
        if len(ids) == 0:
            raise ContractError("prototype bank needs at least one class")
        protos = np.stack([emb[labels == c].mean(axis=0) for c in ids])
        return cls(_unit_rows(protos), ids)


def ood_score(embedding, bank: PrototypeBank):
    """Max cosine similarity to any prototype; higher means more in-distribution.

    Accepts one vector or a matrix of rows.
    """
    if len(bank.prototypes) == 0:
        raise ContractError("empty prototype bank")
    emb = np.asarray(embedding, dtype=np.float64)
    single = emb.ndim == 1
    scores = (_unit_rows(np.atleast_2d(emb)) @ bank.prototypes.T).max(axis=1)
    return float(scores[0]) if single else scores


def max_softmax_score(logits) -> np.ndarray:
    """Max class probability per row (the thresholded-confidence baseline)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p.max(axis=1)


def nearest_prototype_margin(embeddings, bank: PrototypeBank) -> np.ndarray:
    """Gap between the best and second-best prototype similarity per row."""
    sims = _unit_rows(embeddings) @ bank.prototypes.T
    if sims.shape[1] < 2:
        return sims[:, 0]
    top2 = np.sort(sims, axis=1)[:, -2:]
    return top2[:, 1] - top2[:, 0]


# -- ROC ---------------------------------------------------------------------------

@dataclass
class RocCurve:
    """ROC of in-distribution (positive) versus OOD scores; higher score = in-distribution."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auroc: float

    def points(self) -> list:
        return [(float(f), float(t)) for f, t in zip(self.fpr, self.tpr)]


def roc_auroc(in_scores, out_scores) -> RocCurve:
    pos = np.asarray(in_scores, dtype=np.float64).ravel()
    neg = np.asarray(out_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ContractError("roc_auroc: both score lists must be nonempty")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="stable")
    scores, is_pos = scores[order], is_pos[order]
    # one point per distinct threshold: predict "in" when score >= t
    last = np.r_[np.flatnonzero(np.diff(scores) != 0), scores.size - 1]
    tp = np.cumsum(is_pos)[last]
    fp = np.cumsum(1 - is_pos)[last]
    tpr = np.r_[0.0, tp / pos.size]
    fpr = np.r_[0.0, fp / neg.size]
    thresholds = np.r_[np.inf, scores[last]]
    auroc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auroc)


# -- projections -------------------------------------------------------------------

def pca_2d(embeddings) -> np.ndarray:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) < 3:
        raise ContractError("projection needs at least 3 rows")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 1e-14 * max(1.0, np.abs(x).max() ** 2):
        raise DegenerateInputError("PCA: embeddings have (near) zero variance")
    comps = vecs[:, ::-1][:, :2]
    # fix the sign so the largest-magnitude loading of each component is positive
    signs = np.sign(comps[np.argmax(np.abs(comps), axis=0), np.arange(2)])
    comps = comps * np.where(signs == 0, 1.0, signs)
    return xc @ comps


def tsne_2d(embeddings, seed: int = 0, perplexity: float = 30.0) -> np.ndarray:
    from sklearn.manifold import TSNE

    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) < 3:
        raise ContractError("projection needs at least 3 rows")
    perplexity = min(perplexity, (len(x) - 1) / 3.0)
    return TSNE(n_components=2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(x)


def project_2d(embeddings, method: str = "pca", seed: int = 0) -> np.ndarray:
    if method == "pca":
        return pca_2d(embeddings)
    if method == "tsne":
        return tsne_2d(embeddings, seed=seed)
    raise ContractError(f"unknown projection method {method!r}")


# -- ordering objective ------------------------------------------------------------

def ordering_fraction(embeddings, labels, table) -> float:
    """Fraction of anchors whose mean similarity strictly decreases across ``P_1, P_2, ..., N``.

    Empty groups (e.g. no negatives for a class that ranks everything) are
    skipped; anchors with fewer than two nonempty groups do not count.
    """
    from .ranking import NEGATIVE

    z = _unit_rows(embeddings)
    labels = np.asarray(labels, dtype=np.intp)
    sims = z @ z.T
    ranks = table.rank_matrix(labels)
    n = len(labels)
    off = ~np.eye(n, dtype=bool)
    ok = counted = 0
    for a in range(n):
        means = []
        for level in list(range(1, table.rank_count(labels[a]) + 1)) + [NEGATIVE]:
            m = off[a] & (ranks[a] == level)
            if m.any():
                means.append(sims[a, m].mean())
        if len(means) < 2:
            continue
        counted += 1
        ok += all(x > y for x, y in zip(means[:-1], means[1:]))
    if counted == 0:
        raise ContractError("no anchor has two nonempty rank groups")
    return ok / counted


# -- report ----------------------------------------------------------------------

@dataclass
class EvalReport:
    """Everything an evaluation run measures, serialisable to JSON/CSV/SVG."""

    accuracy: float | None = None
    per_class_accuracy: dict = field(default_factory=dict)
    auroc: float | None = None
    roc: list = field(default_factory=list)
    projection: list = field(default_factory=list)
    projection_labels: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        d["roc"] = [tuple(p) for p in d.get("roc", [])]
        d["projection"] = [tuple(p) for p in d.get("projection", [])]
        return cls(**d)

    def roc_csv(self) -> str:
        lines = [_csv_banner(self.metadata), "fpr,tpr"]
        lines += [f"{f:.10g},{t:.10g}" for f, t in self.roc]
        return "\n".join(lines) + "\n"

    def projection_csv(self, class_names=None) -> str:
        lines = [_csv_banner(self.metadata), "id,x,y,label"]
        for i, ((x, y), lab) in enumerate(zip(self.projection, self.projection_labels)):
            name = class_names[lab] if class_names is not None else lab
            lines.append(f"{i},{x:.10g},{y:.10g},{name}")
        return "\n".join(lines) + "\n"


def _csv_banner(meta: dict) -> str:
    return f"# config_hash={meta.get('config_hash', '')} seed={meta.get('seed', '')}"
