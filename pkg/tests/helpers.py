"""Independent oracles shared by the test modules.

Nothing here calls into the code paths it is used to check: the loss oracles
loop over samples with ``math.exp``/``math.log`` and explicit index sets, and
the gradient oracle is a central finite difference.
"""
import math

import numpy as np


def central_diff(f, x, step=1e-5):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f(x)
        x[i] = old - step
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), floor))


def unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def rank_sets_for(anchor, labels, ranks_of_class):
    """Explicit index lists ``P_1..P_r`` and ``N`` for one anchor.

    ``ranks_of_class[c]`` is a list of sets of class ids (``R_2, R_3, ...``).
    """
    c = labels[anchor]
    others = [j for j in range(len(labels)) if j != anchor]
    groups = [[j for j in others if labels[j] == c]]
    ranked = {c}
    for members in ranks_of_class[c]:
        groups.append([j for j in others if labels[j] in members])
        ranked |= set(members)
    negatives = [j for j in others if labels[j] not in ranked]
    return groups, negatives


def eq2_level_oracle(z, labels, ranks_of_class, anchor, level, taus):
    """Term-by-term evaluation of one level of the ranked loss; ``None`` for an empty positive set."""
    groups, negatives = rank_sets_for(anchor, labels, ranks_of_class)
    if level > len(groups) or not groups[level - 1]:
        return None
    tau = taus[level - 1]
    h = lambda j: float(np.dot(z[anchor], z[j]))
    num = sum(math.exp(h(p) / tau) for p in groups[level - 1])
    den = sum(math.exp(h(p) / tau) for g in groups[level - 1:] for p in g)
    den += sum(math.exp(h(n) / tau) for n in negatives)
    return -math.log(num / den)


def eq2_total_oracle(z, labels, ranks_of_class, taus):
    """Sum over levels of the per-level anchor mean, skipping absent positives."""
    total = 0.0
    r = 1 + max(len(v) for v in ranks_of_class)
    for level in range(1, r + 1):
        vals = [eq2_level_oracle(z, labels, ranks_of_class, a, level, taus) for a in range(len(labels))]
        vals = [v for v in vals if v is not None]
        if vals:
            total += sum(vals) / len(vals)
    return total


def supcon_oracle(z, labels, tau):
    """Supervised contrastive loss with the positive sum inside the log, averaged over anchors."""
    n = len(labels)
    losses = []
    for a in range(n):
        pos = [j for j in range(n) if j != a and labels[j] == labels[a]]
        if not pos:
            continue
        num = 0.0
        den = 0.0
        for j in range(n):
            if j == a:
                continue
            e = math.exp(float(z[a] @ z[j]) / tau)
            den += e
            if labels[j] == labels[a]:
                num += e
        losses.append(math.log(den) - math.log(num))
    return sum(losses) / len(losses)


def mann_whitney(pos, neg):
    """AUROC by counting all (in, out) pairs."""
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def random_ranking(rng, c, r_max):
    """Random valid per-class rank lists with up to ``r_max`` levels (ties allowed)."""
    out = []
    for k in range(c):
        others = [j for j in range(c) if j != k]
        rng.shuffle(others)
        depth = int(rng.integers(0, min(r_max - 1, len(others)) + 1))
        per, pos = [], 0
        for _ in range(depth):
            if pos >= len(others):
                break
            size = int(rng.integers(1, min(2, len(others) - pos) + 1))
            per.append(set(others[pos:pos + size]))
            pos += size
        out.append(per)
    return out
