"""Command-line driver: ``selflearn {pretrain,selftrain,sweep,eval}``.

A run is described by one JSON document::

    {
      "dataset":        {"kind": "two_moons", "samples_per_class": 250, ...},
      "source_dataset": {...},            # pretrain only
      "labels_per_class": 3,              # or "all"
      "test_fraction": 0.3,
      "experiment":     {"loss": {"kind": "triplet"}, "meta_iterations": 25, ...},
      "sweep":          {"losses": ["triplet"], "inits": ["random", "pretrained"]}
    }
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_to_model, load_checkpoint, model_to_checkpoint, save_checkpoint
from .data import DatasetSpec, generate, split_ssl
from .errors import ConfigError, SelfLearnError, TransferIncompatibleError
from .losses import LossConfig
from .propagation import knn_predict, softmax_predict
from .selftrain import (ExperimentConfig, pretrain_source, prediction_embeddings,
                        run_self_learning)

log = logging.getLogger("selflearn")

RESULT_COLUMNS = ["meta_iteration", "labeled_count", "selected_count", "mean_confidence",
                  "selected_pseudo_accuracy", "train_loss", "test_accuracy"]
AGGREGATE_COLUMNS = ["loss", "init", "runs", "initial_accuracy_mean", "initial_accuracy_std",
                     "final_accuracy_mean", "final_accuracy_std"]
RUN_COLUMNS = ["loss", "init", "seed", "initial_accuracy", "final_accuracy"]
TOP_LEVEL_KEYS = {"dataset", "source_dataset", "labels_per_class", "test_fraction", "experiment",
                  "sweep", "checkpoint"}


# -- config ------------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown top-level fields {sorted(unknown)}")
    return raw


def _section(raw: dict, key: str, factory):
    if key not in raw:
        raise ConfigError(f"config is missing the {key!r} section")
    try:
        return factory(raw[key])
    except ConfigError as e:
        raise ConfigError(f"{key}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from None


def dataset_spec(raw: dict, key: str = "dataset") -> DatasetSpec:
    return _section(raw, key, DatasetSpec.from_dict)


def experiment_config(raw: dict) -> ExperimentConfig:
    return _section({"experiment": raw.get("experiment", {})}, "experiment", ExperimentConfig.from_dict)


def labels_per_class(raw: dict):
    n = raw.get("labels_per_class", 10)
    if n != "all" and (not isinstance(n, int) or n < 0):
        raise ConfigError(f"labels_per_class: expected a non-negative integer or 'all', got {n!r}")
    return n


# -- csv helpers ---------------------------------------------------------------

def _cell(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(v) if isinstance(v, float) else v


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


# -- commands ------------------------------------------------------------------

def cmd_pretrain(config_path, seed=None, out=None) -> Path:
    raw = load_config(config_path)
    source = generate(dataset_spec(raw, "source_dataset"))
    cfg = experiment_config(raw)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    out_dir = Path(out) if out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    target = Path(raw["checkpoint"]) if raw.get("checkpoint") and not out else out_dir / "checkpoint.ckpt"
    ckpt, _ = pretrain_source(source, cfg, source_task=json.dumps(raw["source_dataset"], sort_keys=True))
    save_checkpoint(target, ckpt)
    print(f"pretrained {cfg.loss.kind} encoder on {len(source)} source examples; "
          f"final loss {ckpt.metadata['final_loss']:.6f}; wrote {target}", file=sys.stderr)
    return target


def run_selftrain(raw: dict, cfg: ExperimentConfig, out_dir: Path) -> dict:
    """Execute one self-learning run and write its artifacts to ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    dataset = generate(dataset_spec(raw))
    n_labels = labels_per_class(raw)
    pools = split_ssl(dataset, n_labels, raw.get("test_fraction", 0.2), seed=cfg.seed)
    result = run_self_learning(cfg, pools, num_classes=dataset.num_classes)

    rows = [{
        "meta_iteration": r.iteration,
        "labeled_count": r.labeled_count,
        "selected_count": r.selected_count,
        "mean_confidence": r.mean_confidence,
        "selected_pseudo_accuracy": r.selected_pseudo_accuracy,
        "train_loss": r.train_loss,
        "test_accuracy": r.test_accuracy,
    } for r in result.reports]
    write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)

    emb = result.model.embed(pools.test_x).data
    with open(out_dir / "embeddings_final.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"e{i}" for i in range(emb.shape[1])] + ["label"])
        for vec, label in zip(emb, pools.test_y):
            w.writerow([repr(float(v)) for v in vec] + [int(label)])

    save_checkpoint(out_dir / "model_final.ckpt",
                    model_to_checkpoint(result.model, loss=cfg.loss.kind, seed=cfg.seed,
                                        source_task="selftrain", epochs=cfg.epochs))

    summary = {
        "initial_accuracy": rows[0]["test_accuracy"],
        "final_accuracy": rows[-1]["test_accuracy"],
        "completed_meta_iterations": len(rows) - 1,
    }
    if n_labels == "all":
        summary["all_labeled_accuracy"] = rows[-1]["test_accuracy"]
    manifest = {
        "config": {**raw, "experiment": cfg.to_dict()},
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "reports": rows,
        "summary": summary,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
    return manifest


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_selftrain(config_path, init=None, seed=None, out="out") -> dict:
    raw = load_config(config_path)
    cfg = experiment_config(raw)
    if init is not None:
        cfg = replace(cfg, init=init)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if cfg.init != "random":
        load_checkpoint(cfg.init, expected=cfg.encoder_spec(_input_dim(raw)))
    manifest = run_selftrain(raw, cfg, Path(out))
    s = manifest["summary"]
    print(f"test accuracy: initial {s['initial_accuracy']:.4f} -> final {s['final_accuracy']:.4f} "
          f"after {s['completed_meta_iterations']} meta-iterations; wrote {out}", file=sys.stderr)
    return manifest


def _input_dim(raw: dict) -> int:
    spec = dataset_spec(raw)
    return generate(spec).features.shape[1] if spec.kind == "idx_images" else spec.dim


def aggregate_runs(runs: list[dict]) -> list[dict]:
    """Mean and sample standard deviation of initial/final accuracy per (loss, init)."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in runs:
        groups.setdefault((r["loss"], r["init"]), []).append(r)
    out = []
    for (loss, init), members in groups.items():
        row = {"loss": loss, "init": init, "runs": len(members)}
        for key in ("initial_accuracy", "final_accuracy"):
            vals = np.array([float(m[key]) for m in members])
            row[f"{key}_mean"] = float(vals.mean())
            row[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def cmd_sweep(config_path, seeds: int, out="sweep", base_seed: int = 0, same_seed: bool = False) -> list[dict]:
    if seeds < 2:
        raise ConfigError("--seeds must be at least 2")
    raw = load_config(config_path)
    base = experiment_config(raw)
    sweep = raw.get("sweep", {})
    losses = sweep.get("losses", [base.loss.kind])
    inits = sweep.get("inits", ["random"])
    out = Path(out)
    runs = []
    for loss in losses:
        loss_cfg = LossConfig(kind=loss) if loss != base.loss.kind else base.loss
        for init in inits:
            cfg = replace(base, loss=loss_cfg)
            label = init
            if init == "pretrained":
                ckpt_path = out / f"{loss}_pretrained" / "checkpoint.ckpt"
                ckpt_path.parent.mkdir(parents=True, exist_ok=True)
                ckpt, _ = pretrain_source(generate(dataset_spec(raw, "source_dataset")), cfg)
                save_checkpoint(ckpt_path, ckpt)
                init = str(ckpt_path)
            elif init != "random":
                label = Path(init).stem
            for i in range(seeds):
                seed = base_seed if same_seed else base_seed + i
                run_dir = out / f"{loss}_{label}" / f"seed_{i}"
                manifest = run_selftrain(raw, replace(cfg, init=init, seed=seed), run_dir)
                runs.append({"loss": loss, "init": label, "seed": seed,
                             "initial_accuracy": manifest["summary"]["initial_accuracy"],
                             "final_accuracy": manifest["summary"]["final_accuracy"]})
                log.info("%s/%s seed %d: %.4f -> %.4f", loss, label, seed,
                         runs[-1]["initial_accuracy"], runs[-1]["final_accuracy"])
    write_csv(out / "runs.csv", RUN_COLUMNS, runs)
    agg = aggregate_runs(runs)
    write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS, agg)
    for row in agg:
        print(f"{row['loss']:>14} {row['init']:>12}  initial {100 * row['initial_accuracy_mean']:.2f} "
              f"± {100 * row['initial_accuracy_std']:.2f}  final {100 * row['final_accuracy_mean']:.2f} "
              f"± {100 * row['final_accuracy_std']:.2f}", file=sys.stderr)
    return agg


def evaluate(model, loss_kind: str, reference_x, reference_y, test_x, test_y) -> dict:
    """Test accuracy of ``model``; 1-NN over the reference set for every loss,
    plus softmax accuracy when the model has a classification head."""
    if len(reference_y) == 0:
        raise ValueError("kNN evaluation needs a non-empty labelled reference set")
    cfg = ExperimentConfig(loss=LossConfig(kind=loss_kind))
    ref = prediction_embeddings(model, cfg, reference_x)
    q = prediction_embeddings(model, cfg, test_x)
    knn = knn_predict(ref, reference_y, q, k=1)
    report = {"test_examples": int(len(test_y)), "reference_examples": int(len(reference_y)),
              "knn_accuracy": float(np.mean(knn.label == test_y))}
    if loss_kind == "cross_entropy" and model.has_head:
        sm = softmax_predict(model.logits(model.embed(test_x)).data)
        report["softmax_accuracy"] = float(np.mean(sm.label == test_y))
        report["test_accuracy"] = report["softmax_accuracy"]
    else:
        report["test_accuracy"] = report["knn_accuracy"]
    return report


def cmd_eval(checkpoint_path, config_path, seed=None, out=None) -> dict:
    raw = load_config(config_path)
    ckpt = load_checkpoint(checkpoint_path)
    model = checkpoint_to_model(ckpt)
    dataset = generate(dataset_spec(raw))
    if dataset.features.shape[1] != model.spec.input_dim:
        raise TransferIncompatibleError(
            f"checkpoint expects {model.spec.input_dim}-dimensional inputs, dataset has {dataset.features.shape[1]}")
    cfg_seed = experiment_config(raw).seed if seed is None else seed
    pools = split_ssl(dataset, labels_per_class(raw), raw.get("test_fraction", 0.2), seed=cfg_seed)
    report = evaluate(model, ckpt.metadata.get("loss", "triplet"), pools.labeled_x, pools.labeled_y,
                      pools.test_x, pools.test_y)
    print(json.dumps(report, indent=2))
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "eval.json").write_text(json.dumps(report, indent=2))
    return report


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selflearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("pretrain", help="train an encoder on the source dataset and save a checkpoint")
    pre.add_argument("--config", required=True)
    pre.add_argument("--seed", type=int)
    pre.add_argument("--out")

    st = sub.add_parser("selftrain", help="run self-learning and write results.csv/manifest.json")
    st.add_argument("--config", required=True)
    st.add_argument("--init", help="'random' or a checkpoint path")
    st.add_argument("--seed", type=int)
    st.add_argument("--out", default="out")

    sw = sub.add_parser("sweep", help="repeat selftrain over seeds and aggregate mean ± std")
    sw.add_argument("--config", required=True)
    sw.add_argument("--seeds", type=int, default=3)
    sw.add_argument("--seed", type=int, default=0, help="first seed")
    sw.add_argument("--same-seed", action="store_true", help="reuse the first seed for every run")
    sw.add_argument("--out", default="sweep")

    ev = sub.add_parser("eval", help="test accuracy of a checkpoint on a dataset config")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--config", required=True)
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "pretrain":
            cmd_pretrain(args.config, seed=args.seed, out=args.out)
        elif args.command == "selftrain":
            cmd_selftrain(args.config, init=args.init, seed=args.seed, out=args.out)
        elif args.command == "sweep":
            cmd_sweep(args.config, args.seeds, out=args.out, base_seed=args.seed, same_seed=args.same_seed)
        else:
            cmd_eval(args.checkpoint, args.config, seed=args.seed, out=args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SelfLearnError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
