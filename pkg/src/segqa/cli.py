"""Command-line entry point: ``segqa <command> [--config file.json] [flags]``.

Every command accepts ``--config`` (JSON object), ``--set key.path=value``
overrides (values parsed as JSON when possible) and ``--seed``. Errors are
printed as one JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import DatasetConfig, Dataset, generate_dataset
from .errors import ConfigError, SegQAError

log = logging.getLogger("segqa")

EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_CHECK_FAILED = 3


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {p} does not exist")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(p)) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object", str(p))
    return doc


def _apply_sets(cfg: dict, sets) -> dict:
    for item in sets or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key, raw = item.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError("cannot descend into a non-object", key)
        node[parts[-1]] = val
    return cfg


def _override(cfg: dict, **kw) -> dict:
    for k, v in kw.items():
        if v is not None:
            cfg[k] = v
    return cfg


def _section(doc: dict, name: str) -> dict:
    """Accept either a bare config or one nested under ``name``."""
    sub = doc.get(name, doc if name not in doc else None)
    return dict(sub) if isinstance(sub, dict) else {}


def _train_config(args, doc: dict, task: str | None) -> "TrainConfig":
    from .train import TrainConfig

    cfg = _section(doc, "train")
    _override(cfg, task=task, epochs=args.epochs, seed=args.seed, dataset=args.dataset, out_dir=args.out,
              variant=getattr(args, "variant", None),
              pretrained_encoder=getattr(args, "pretrained_encoder", None),
              base_lr=getattr(args, "lr", None))
    if getattr(args, "splits", None):
        cfg["splits"] = [int(x) for x in args.splits.split(",")]
    if cfg.get("pretrained_encoder") and not Path(cfg["pretrained_encoder"]).exists():
        raise FileNotFoundError(f"pretrained encoder checkpoint {cfg['pretrained_encoder']} does not exist")
    return TrainConfig.from_dict(cfg)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, doc):
    cfg = _section(doc, "dataset")
    _override(cfg, seed=args.seed)
    config = DatasetConfig.from_dict(cfg)
    n_ph = args.phantoms if args.phantoms is not None else doc.get("phantoms", 2)
    n_pt = args.perturbations if args.perturbations is not None else doc.get("perturbations", 3)
    out = args.out or doc.get("out") or "dataset"
    manifest = generate_dataset(int(n_ph), int(n_pt), config, out)
    summary = {"out": str(out), "samples": len(manifest["samples"]), "failures": len(manifest["failures"])}
    print(json.dumps(summary))
    return 0


def _train_common(args, doc, task):
    from .train import train

    config = _train_config(args, doc, task)
    if config.out_dir is None:
        config.out_dir = f"run_{config.task}"
    res = train(config)
    print(json.dumps({"checkpoint": res.checkpoint, "best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss,
                      "log": str(Path(config.out_dir) / "train_log.jsonl")}))
    return 0


def cmd_pretrain(args, doc):
    return _train_common(args, doc, args.task)


def cmd_train(args, doc):
    return _train_common(args, doc, args.task)


def _split_ids(header: dict, ds: Dataset, split: str):
    if split == "all":
        return ds.sample_ids
    splits = header.get("extra", {}).get("splits")
    if not splits:
        raise ConfigError("checkpoint records no splits; use --split all", "eval.split")
    return splits[split]


def cmd_eval(args, doc):
    from .model import load_model
    from .train import evaluate

    ckpt = args.checkpoint or doc.get("checkpoint")
    if not ckpt or not Path(ckpt).exists():
        raise FileNotFoundError(f"checkpoint {ckpt} does not exist")
    model, header = load_model(ckpt, return_header=True)
    ds = Dataset(args.dataset or doc.get("dataset") or header["config"].get("dataset", ""))
    ids = _split_ids(header, ds, args.split)
    rep = evaluate(model, ds, ids, split=args.split, seed=args.seed or 0)
    text, js = rep.to_text(), rep.to_json()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(js)
        (out / "report.txt").write_text(text)
    print(text)
    return 0


def cmd_export_mesh(args, doc):
    from .autodiff import no_grad
    from .export import export_colored_mesh
    from .model import GraphIndex, load_model

    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} does not exist")
    model = load_model(args.checkpoint).eval()
    if model.config.variant not in ("full", "cnn_mlp", "gnn_mlp"):
        raise ConfigError("export-mesh needs a regression or classification checkpoint", "export.checkpoint")
    sample = Dataset(args.dataset).sample(args.sample)
    with no_grad():
        out = model(sample.subvolumes, GraphIndex(sample.edges, sample.node_count), args.seed or 0).data
    if model.config.mode == "classification":
        pred = np.argmax(out, axis=1)
        colors = export_colored_mesh(sample, pred, args.out, truth=True if args.truth else None)
        wrong = int(np.all(colors == 0, axis=1).sum())
        print(json.dumps({"out": args.out, "nodes": sample.node_count, "black_nodes": wrong}))
    else:
        export_colored_mesh(sample, out.astype(np.float64), args.out)
        print(json.dumps({"out": args.out, "nodes": sample.node_count}))
    return 0


def cmd_ablate(args, doc):
    from .train import ablation_text, run_ablation_suite

    config = _train_config(args, doc, args.task)
    ds = Dataset(config.dataset) if config.dataset else None
    if ds is None:
        raise ConfigError("ablate needs --dataset", "train.dataset")
    pre = dict(p.split("=", 1) for p in (args.pretrained or []))
    for label, path in pre.items():
        if not Path(path).exists():
            raise FileNotFoundError(f"pretrained checkpoint {path} ({label}) does not exist")
    out = args.out or "ablation"
    config.out_dir = None
    report = run_ablation_suite(config, ds, pretrained=pre, out_dir=out)
    print(ablation_text(report))
    return 0


def cmd_grad_check(args, doc):
    from .gradsuite import TOLERANCE, gradient_check_suite

    res = gradient_check_suite(args.seed or 0)
    worst = max(res.values())
    for k, v in res.items():
        print(f"{k:<26}{v:.2e}  {'ok' if v < TOLERANCE else 'FAIL'}")
    print(f"max relative error {worst:.2e} (tolerance {TOLERANCE:g})")
    return 0 if worst < TOLERANCE else EXIT_CHECK_FAILED


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="segqa", description="Segmentation error estimation on surface-mesh graphs.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--phantoms", type=int)
    g.add_argument("--perturbations", type=int)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_data)

    def training_flags(sp):
        sp.add_argument("--dataset")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--splits", help="train,val,test counts")
        sp.add_argument("--out")

    pt = sub.add_parser("pretrain", parents=[common], help="train a pretext network")
    pt.add_argument("--task", choices=("vertnorm", "recon", "maskrecon"), default="vertnorm")
    training_flags(pt)
    pt.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", parents=[common], help="train the error estimator")
    t.add_argument("--task", choices=("regression", "classification"))
    t.add_argument("--variant", choices=("full", "cnn_mlp", "gnn_mlp"))
    t.add_argument("--pretrained-encoder", dest="pretrained_encoder")
    training_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--dataset")
    e.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-mesh", parents=[common], help="write a coloured PLY of one sample's predictions")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--sample", type=int, required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--truth", action="store_true", help="colour misclassified nodes black")
    x.set_defaults(func=cmd_export_mesh)

    a = sub.add_parser("ablate", parents=[common], help="train and compare the model variants")
    a.add_argument("--task", choices=("regression", "classification"), default="classification")
    a.add_argument("--pretrained", action="append", metavar="LABEL=CKPT")
    training_flags(a)
    a.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    gc.set_defaults(func=cmd_grad_check)
    return p


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = _apply_sets(_load_config(args.config), args.set)
        return args.func(args, doc)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), EXIT_CONFIG, key_path=exc.key_path)
    except (SegQAError, FileNotFoundError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)


if __name__ == "__main__":
    sys.exit(main())
