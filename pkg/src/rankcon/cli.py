"""Command line entry point: ``rankcon {train,eval,ood,project}``.

Exit codes: 0 success, 1 invalid config/arguments/contract, 2 runtime failure
(unreadable data or checkpoint, diverged training).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import ContractError, RankconError, TrainingDiverged, ValidationError
from .evaluation import EvalReport, knn_predict, per_class_accuracy, project_2d
from .model import read_checkpoint, save_checkpoint
from .plotting import roc_svg, scatter_svg
from .protocols import withheld_class_protocol
from .training import (RunConfig, build_datasets, embed, eval_space, eval_subset, resolve_table, train,
                       validation_accuracy)

log = logging.getLogger("rankcon")

CHECKPOINT_NAME = "checkpoint.rkc"


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load_config(args) -> RunConfig:
    overrides = {"seed": args.seed, "out_dir": args.out}
    return RunConfig.load(args.config, overrides)


def _config_from_checkpoint(args):
    model, extra = read_checkpoint(args.checkpoint)
    if args.config:
        config = _load_config(args)
    else:
        if "config" not in extra:
            raise ValidationError("checkpoint carries no run config; pass --config")
        raw = dict(extra["config"])
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out is not None:
            raw["out_dir"] = args.out
        config = RunConfig.from_dict(raw)
    return model, extra, config


def cmd_train(args) -> int:
    config = _load_config(args)
    train_ds, test_ds, truth = build_datasets(config)
    table = resolve_table(config, train_ds, truth)
    out = config.out_dir
    h = config.config_hash()
    try:
        result = train(config, train_ds, table)
    except TrainingDiverged as exc:
        _write(os.path.join(out, "diverged.json"),
               json.dumps({"step": exc.step, "batch_indices": [int(i) for i in exc.indices],
                           "config_hash": h, "seed": config.seed}, indent=2) + "\n")
        raise
    acc = validation_accuracy(config, result.model, train_ds, test_ds)
    summary = {"config_hash": h, "seed": config.seed, "loss_mode": config.loss.mode,
               "r": config.effective_r, "taus": list(result.taus), "steps": len(result.log),
               "probe": config.eval.probe, "validation_accuracy": acc,
               "final_loss": result.log[-1][1], "parameters": result.model.num_parameters()}
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "loss.csv"), result.loss_csv(h, config.seed))
    _write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_checkpoint(result.model, os.path.join(out, CHECKPOINT_NAME),
                    {"config": config.to_dict(), "config_hash": h, "validation_accuracy": acc})
    log.info("trained %d steps, %s accuracy %.4f", len(result.log), config.eval.probe, acc)
    return 0


def cmd_eval(args) -> int:
    model, _, config = _config_from_checkpoint(args)
    if args.probe:
        config.eval.probe = args.probe
    train_ds, test_ds, _ = build_datasets(config)
    if model.config.input_dim != train_ds.dim:
        raise ContractError(f"checkpoint expects {model.config.input_dim}-d inputs, dataset has {train_ds.dim}")
    acc = validation_accuracy(config, model, train_ds, test_ds)
    space = eval_space(config)
    sub = eval_subset(config, len(train_ds))
    tr, te = embed(model, train_ds.x[sub], space), embed(model, test_ds.x, space)
    if config.eval.probe == "knn":
        preds = knn_predict(tr, train_ds.y[sub], te, min(config.eval.k, len(sub)))
        per_class = per_class_accuracy(preds, test_ds.y, test_ds.class_names)
    else:
        per_class = {}
    report = EvalReport(accuracy=acc, per_class_accuracy=per_class, metadata={
        "probe": config.eval.probe, "k": config.eval.k if config.eval.probe == "knn" else None,
        "embedding_space": space, "loss_mode": config.loss.mode,
        "config_hash": config.config_hash(), "seed": config.seed, "checkpoint": os.path.basename(args.checkpoint),
    })
    out = config.out_dir
    _write(os.path.join(out, f"eval_{config.eval.probe}.json"), report.to_json())
    log.info("%s accuracy %.4f", config.eval.probe, acc)
    return 0


def cmd_ood(args) -> int:
    config = _load_config(args)
    train_ds, test_ds, truth = build_datasets(config)
    names = [n.strip() for n in args.withhold.split(",") if n.strip()]
    withheld = train_ds.label_ids(names)
    table = resolve_table(config, train_ds, truth)
    report, _ = withheld_class_protocol(config, train_ds, test_ds, table, withheld)
    out = config.out_dir
    banner = f"config_hash={report.metadata['config_hash']} seed={config.seed}"
    _write(os.path.join(out, "ood_report.json"), report.to_json())
    _write(os.path.join(out, "roc.csv"), report.roc_csv())
    fpr, tpr = zip(*report.roc)
    _write(os.path.join(out, "roc.svg"), roc_svg(fpr, tpr, report.auroc, banner))
    log.info("AUROC %.4f (%s)", report.auroc, report.metadata["ood_score"])
    return 0


def cmd_project(args) -> int:
    model, _, config = _config_from_checkpoint(args)
    _, test_ds, _ = build_datasets(config)
    space = eval_space(config)
    emb = embed(model, test_ds.x, space)
    coords = project_2d(emb, args.method, seed=config.seed)
    report = EvalReport(
        projection=[(float(x), float(y)) for x, y in coords],
        projection_labels=[int(v) for v in test_ds.y],
        metadata={"method": args.method, "embedding_space": space, "config_hash": config.config_hash(),
                  "seed": config.seed},
    )
    out = config.out_dir
    banner = f"config_hash={config.config_hash()} seed={config.seed}"
    _write(os.path.join(out, f"projection_{args.method}.csv"), report.projection_csv(test_ds.class_names))
    _write(os.path.join(out, f"projection_{args.method}.svg"),
           scatter_svg(coords, test_ds.y, test_ds.class_names, f"{args.method.upper()} of test embeddings", banner))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankcon", description="Ranked supervised contrastive learning")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required, help="run config (YAML key-value document)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    p = sub.add_parser("train", help="train an encoder and write checkpoint + loss log")
    common(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="probe a checkpoint's embeddings")
    common(p, False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe", choices=("knn", "linear"), default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ood", help="withheld-class OOD protocol")
    common(p, True)
    p.add_argument("--withhold", required=True, help="comma-separated class names")
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("project", help="2-D projection of test embeddings")
    common(p, False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("pca", "tsne"), default="pca")
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; usage errors are validation failures here
        return 1 if exc.code == 2 else int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except (ValidationError, ContractError) as exc:
        print(f"rankcon: error: {exc}", file=sys.stderr)
        return 1
    except RankconError as exc:
        print(f"rankcon: runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"rankcon: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
