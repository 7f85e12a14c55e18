"""Project trained embeddings to 2-D and write scatter plots.

Trains a ranked model briefly, then writes PCA and t-SNE views of the test
embeddings as CSV + SVG.  On the chain data the ranked model should lay the
classes out in chain order along the first principal component.

    python demos/projection.py --out runs/projection_demo
"""
import argparse
import os

import numpy as np

from rankcon.evaluation import EvalReport, project_2d
from rankcon.plotting import scatter_svg
from rankcon.training import RunConfig, build_datasets, embed, resolve_table, train

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/projection_demo")
ap.add_argument("--steps", type=int, default=1000)
args = ap.parse_args()
os.makedirs(args.out, exist_ok=True)

cfg = RunConfig.from_dict({"seed": 0, "train": {"steps": args.steps}})
tr, te, truth = build_datasets(cfg)
res = train(cfg, tr, resolve_table(cfg, tr, truth))
emb = embed(res.model, te.x)

for method in ("pca", "tsne"):
    xy = project_2d(emb, method, seed=cfg.seed)
    rep = EvalReport(projection=[tuple(p) for p in xy.tolist()], projection_labels=te.y.tolist(),
                     metadata={"config_hash": cfg.config_hash(), "seed": cfg.seed})
    with open(os.path.join(args.out, f"{method}.csv"), "w") as fh:
        fh.write(rep.projection_csv(te.class_names))
    with open(os.path.join(args.out, f"{method}.svg"), "w") as fh:
        fh.write(scatter_svg(xy, te.y, te.class_names, f"{method.upper()} of ranked embeddings"))
    centres = [xy[te.y == c, 0].mean() for c in range(te.num_classes)]
    print(method, "class centres on axis 1:", np.round(centres, 3))
print("plots written to", args.out)
