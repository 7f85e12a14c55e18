"""Walk through the ranked contrastive loss on a batch small enough to print.

Four classes sit on a line (a-b-c-d).  Class ``a`` ranks ``b`` closest and
``c`` next, so for an ``a`` anchor the levels are:

    level 1: other ``a`` samples
    level 2: ``b`` samples           (level-1 samples leave the denominator)
    level 3: ``c`` samples           (levels 1 and 2 leave the denominator)

``d`` is a negative at every level.
"""
import numpy as np

from rankcon import Tensor, default_schedule, parse_ranking, ranked_contrastive_loss
from rankcon.losses import level_masks, ranked_level_loss, similarity_matrix

names = ["a", "b", "c", "d"]
table = parse_ranking("a: [b, c]\nb: [{a, c}, d]\n", names)
taus = default_schedule(table.r, tau1=0.1, growth=1.5)
print("ranking r =", table.r, " temperatures =", np.round(taus.taus, 4))

# two samples per class, angled so that similarity falls off along the chain
angles = np.repeat([0.0, 0.5, 1.0, 1.5], 2) + np.tile([0.0, 0.05], 4)
z = np.stack([np.cos(angles), np.sin(angles)], axis=1)
labels = np.repeat(np.arange(4), 2)
sims = similarity_matrix(Tensor(z))

print("\nrank of every sample seen from anchor 0 (0 = negative, -1 = self):")
ranks = table.rank_matrix(labels)
np.fill_diagonal(ranks, -1)
print(" ", ranks[0])

for level in range(1, table.r + 1):
    num, den = level_masks(ranks, sims.mask, level)
    li = ranked_level_loss(0, level, sims, labels, table, taus)
    print(f"\nlevel {level}: tau = {taus[level]:.3f}")
    print("  numerator samples  ", np.flatnonzero(num[0]))
    print("  denominator samples", np.flatnonzero(den[0]))
    print("  l_i for anchor 0   ", f"{li.item():.5f}")

parts = ranked_contrastive_loss(Tensor(z), labels, table, taus)
print("\nper-level means over anchors:", np.round(parts.per_level, 5))
print("total:", round(parts.total.item(), 5))

# Swapping the positions of b and c breaks the ranking and should cost more.
swapped = z.copy()
swapped[[2, 3, 4, 5]] = z[[4, 5, 2, 3]]
worse = ranked_contrastive_loss(Tensor(swapped), labels, table, taus).total.item()
print("total with b and c swapped:", round(worse, 5))
