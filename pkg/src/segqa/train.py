"""Training loops, metrics and the ablation suite.

One graph is one optimisation step. Main tasks use AdamW, pretext tasks
Adadelta; the learning rate follows a per-epoch cosine schedule and the
checkpoint with the lowest validation loss is kept.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    Adadelta,
    AdamW,
    Tensor,
    cosine_lr,
    cosine_similarity_loss,
    cross_entropy,
    l1,
    no_grad,
    smooth_l1,
)
from .dataset import CLASS_NAMES, Dataset, Sample, mask_subvolumes, split_dataset
from .errors import ConfigError, SegQAError, ShapeMismatch
from .model import (
    MAIN_VARIANTS,
    PRETEXT_VARIANTS,
    GraphIndex,
    ModelConfig,
    build_model,
    load_model,
    save_model,
    transfer_encoder_weights,
)

log = logging.getLogger(__name__)

TASKS = ("regression", "classification", "vertnorm", "recon", "maskrecon")
MAIN_TASKS = ("regression", "classification")
# protocol values of the original study, echoed into every log header
PROTOCOL = {"epochs": 100, "lr": 1e-3, "weight_decay": 1e-3, "optimizer_main": "AdamW", "optimizer_pretext": "Adadelta"}
REFERENCE_RESULTS = {"regression_mae_mm": 0.04182, "regression_mse": 0.00429, "classification_accuracy_pct": 79.53, "classification_f1": 0.6943}
LOW_RECALL = 0.1


@dataclass
class TrainConfig:
    task: str = "regression"
    variant: str = "full"
    epochs: int = 100
    base_lr: float = 1e-3
    min_lr: float = 0.0
    weight_decay: float = 1e-3
    # Adadelta's lr multiplier; 1.0 is the plain method
    pretext_lr: float = 1.0
    optimizer: str = "auto"
    seed: int = 0
    dataset: str | None = None
    # either [train, val, test] counts or {"train": ids, "val": ids, "test": ids}
    splits: list | dict | None = None
    pretrained_encoder: str | None = None
    mask_ratio: float = 0.5
    out_dir: str | None = None
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}", "train.task")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1", "train.epochs")
        if self.optimizer not in ("auto", "adamw", "adadelta"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "train.optimizer")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ConfigError("mask_ratio must lie in [0, 1]", "train.mask_ratio")
        pretext = self.task in PRETEXT_VARIANTS
        if pretext and self.variant != self.task:
            self.variant = self.task
        if not pretext and self.variant not in MAIN_VARIANTS:
            raise ConfigError(f"variant {self.variant!r} cannot be trained on {self.task}", "train.variant")

    def model_config(self) -> ModelConfig:
        d = dict(self.model)
        d["variant"] = self.variant
        d["mode"] = self.task if self.task in MAIN_TASKS else "regression"
        d.setdefault("seed", self.seed)
        try:
            return ModelConfig.from_dict(d)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], "train." + exc.key_path) from None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = sorted(set(d) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown}", "train")
        return cls(**d)


# ---------------------------------------------------------------- losses


def regression_targets(sample: Sample, sd_scale: float) -> tuple[np.ndarray, int]:
    """SD labels in mm clamped to ``+-sd_scale``, and the number clamped."""
    sd = sample.sd_mm()
    clamped = int(np.count_nonzero(np.abs(sd) > sd_scale))
    return np.clip(sd, -sd_scale, sd_scale), clamped


def sample_loss(model, sample: Sample, task: str, seed: int, mask_ratio: float = 0.5, graph: GraphIndex | None = None):
    """Loss tensor and raw predictions for one graph. Uses the model's current train/eval flag."""
    try:
        if task in MAIN_TASKS:
            if model.config.mode != task:
                raise ShapeMismatch(f"model mode {model.config.mode!r} does not match task {task!r}")
            g = graph if graph is not None else GraphIndex(sample.edges, sample.node_count)
            out = model(sample.subvolumes, g, seed)
            if task == "regression":
                target, _ = regression_targets(sample, model.config.head.sd_scale)
                return smooth_l1(out, target), out
            return cross_entropy(out, sample.class_labels), out
        if task == "vertnorm":
            out = model(sample.subvolumes)
            return cosine_similarity_loss(out, sample.normals), out
        if task == "recon":
            out = model(sample.subvolumes)
            return l1(out, sample.subvolumes[:, None]), out
        masked, _ = mask_subvolumes(sample.subvolumes, mask_ratio, seed)
        out = model(masked)
        return l1(out, sample.subvolumes[:, None]), out
    except SegQAError as exc:
        sid = sample.meta.get("sample_id", "?")
        exc.args = (f"sample {sid}: {exc.args[0] if exc.args else ''}",) + exc.args[1:]
        raise


def step_seed(seed: int, epoch: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, step]).generate_state(1)[0])


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: object
    best_epoch: int
    best_val_loss: float
    history: list[dict]
    header: dict
    checkpoint: str | None = None


def _resolve_splits(config: TrainConfig, dataset: Dataset | None, splits) -> dict[str, list[int]]:
    splits = splits if splits is not None else config.splits
    if isinstance(splits, dict):
        return {k: [int(i) for i in splits.get(k, [])] for k in ("train", "val", "test")}
    if dataset is None:
        raise ConfigError("a dataset is needed to derive splits", "train.dataset")
    if splits is None:
        n = len(dataset)
        n_val = max(1, n // 8)
        n_test = max(1, n // 4)
        splits = [n - n_val - n_test, n_val, n_test]
    return split_dataset(dataset.manifest, splits, config.seed)


def _samples(dataset, ids, data):
    if data is not None:
        return [data[i] for i in ids]
    return dataset.samples(ids)


def make_optimizer(config: TrainConfig, model):
    kind = config.optimizer
    if kind == "auto":
        kind = "adamw" if config.task in MAIN_TASKS else "adadelta"
    params = model.named_parameters()
    if kind == "adamw":
        return AdamW(params, lr=config.base_lr, weight_decay=config.weight_decay)
    return Adadelta(params, lr=config.pretext_lr)


def _mean_loss(model, samples, config: TrainConfig, graphs) -> float:
    model.eval()
    total = 0.0
    with no_grad():
        for s, g in zip(samples, graphs):
            loss, _ = sample_loss(model, s, config.task, config.seed, config.mask_ratio, g)
            total += float(loss.data)
    return total / max(len(samples), 1)


def train(config: TrainConfig | dict, dataset: Dataset | None = None, splits=None, samples: dict | None = None,
          model=None) -> TrainResult:
    """Train one model; returns the best-validation model and the epoch log.

    ``samples`` optionally supplies in-memory :class:`Sample` objects keyed by id
    instead of reading ``dataset``. When ``config.out_dir`` is set the best
    checkpoint (``best.ckpt``) and the line-delimited log (``train_log.jsonl``)
    are written there.
    """
    if isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    if dataset is None and samples is None:
        if config.dataset is None:
            raise ConfigError("no dataset given", "train.dataset")
        dataset = Dataset(config.dataset)
    if samples is not None and splits is None and config.splits is None:
        ids = sorted(samples)
        splits = {"train": ids, "val": ids, "test": []}
    parts = _resolve_splits(config, dataset, splits)
    if not parts["train"]:
        raise ConfigError("training split is empty", "train.splits")
    train_set = _samples(dataset, parts["train"], samples)
    val_ids = parts["val"] or parts["train"]
    if not parts["val"]:
        log.warning("empty validation split; selecting the checkpoint on training loss")
    val_set = _samples(dataset, val_ids, samples)
    train_graphs = [GraphIndex(s.edges, s.node_count) for s in train_set]
    val_graphs = [GraphIndex(s.edges, s.node_count) for s in val_set]

    if model is None:
        model = build_model(config.model_config())
    if config.pretrained_encoder:
        transfer_encoder_weights(config.pretrained_encoder, model)
    opt = make_optimizer(config, model)
    base_lr = opt.lr

    clamp_rate = None
    if config.task == "regression":
        scale = model.config.head.sd_scale
        n_clamped = sum(regression_targets(s, scale)[1] for s in train_set)
        clamp_rate = n_clamped / max(sum(s.node_count for s in train_set), 1)
    nf = model.config.nodeformer
    header = {
        "type": "header",
        "protocol": PROTOCOL,
        "config": config.to_dict(),
        "model": model.config.to_dict(),
        "optimizer": type(opt).__name__,
        "splits": {k: len(v) for k, v in parts.items()},
        "label_clamp_rate": clamp_rate,
        "provenance": list(model.provenance),
    }

    out_dir = Path(config.out_dir) if config.out_dir else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = open(out_dir / "train_log.jsonl", "w")
        log_file.write(json.dumps(header) + "\n")

    history: list[dict] = []
    best = (np.inf, 0, None)
    order_rng = np.random.default_rng([config.seed, 17])
    try:
        for epoch in range(1, config.epochs + 1):
            lr = cosine_lr(epoch - 1, base_lr, config.epochs, config.min_lr)
            opt.lr = lr
            if nf.gumbel_temperature_final is not None and hasattr(model, "set_temperature"):
                frac = (epoch - 1) / max(config.epochs - 1, 1)
                model.set_temperature(nf.gumbel_temperature + frac * (nf.gumbel_temperature_final - nf.gumbel_temperature))
            model.train()
            total = 0.0
            for step, i in enumerate(order_rng.permutation(len(train_set))):
                opt.zero_grad()
                loss, _ = sample_loss(model, train_set[i], config.task, step_seed(config.seed, epoch, step),
                                      config.mask_ratio, train_graphs[i])
                loss.backward()
                opt.step()
                total += float(loss.data)
            train_loss = total / len(train_set)
            val_loss = _mean_loss(model, val_set, config, val_graphs)
            improved = val_loss < best[0]
            if improved:
                best = (val_loss, epoch, model.state_dict())
                if out_dir is not None:
                    save_model(model, out_dir / "best.ckpt", opt, extra={"epoch": epoch, "val_loss": val_loss,
                                                                           "task": config.task, "splits": parts})
            rec = {"type": "epoch", "epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss, "best": improved}
            history.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, lr, train_loss, val_loss)
    finally:
        if log_file is not None:
            log_file.close()

    model.load_state_dict(best[2])
    model.eval()
    ckpt = str(out_dir / "best.ckpt") if out_dir is not None else None
    return TrainResult(model, best[1], float(best[0]), history, header, ckpt)


def read_log(path) -> tuple[dict, list[dict]]:
    lines = [json.loads(x) for x in Path(path).read_text().splitlines() if x.strip()]
    return lines[0], lines[1:]


# ---------------------------------------------------------------- metrics


def regression_metrics(pred, target) -> dict:
    pred = np.asarray(pred, np.float64)
    target = np.asarray(target, np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction/target shape mismatch: {pred.shape} vs {target.shape}")
    d = pred - target
    return {"mae": float(np.mean(np.abs(d))), "mse": float(np.mean(d * d))}


def confusion_matrix(true, pred, n_classes: int = len(CLASS_NAMES)) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, np.int64).reshape(-1)
    pred = np.asarray(pred, np.int64).reshape(-1)
    if true.shape != pred.shape:
        raise ShapeMismatch(f"label/prediction length mismatch: {true.shape} vs {pred.shape}")
    cm = np.zeros((n_classes, n_classes), np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def classification_metrics(cm: np.ndarray) -> dict:
    """Per-class, macro and micro precision/recall/F1 plus accuracy (percent). Undefined ratios are 0."""
    cm = np.asarray(cm, np.float64)
    tp = np.diag(cm)
    pred_tot = cm.sum(axis=0)
    true_tot = cm.sum(axis=1)
    precision = np.divide(tp, pred_tot, out=np.zeros_like(tp), where=pred_tot > 0)
    recall = np.divide(tp, true_tot, out=np.zeros_like(tp), where=true_tot > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    total = cm.sum()
    acc = float(tp.sum() / total) if total else 0.0
    return {
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "support": true_tot.astype(int).tolist(),
        "macro": {"precision": float(precision.mean()), "recall": float(recall.mean()), "f1": float(f1.mean())},
        # single-label micro averages all collapse to accuracy
        "micro": {"precision": acc, "recall": acc, "f1": acc},
        "accuracy": 100.0 * acc,
    }


@dataclass
class EvalReport:
    task: str
    variant: str
    split: str
    n_samples: int
    n_nodes: int
    loss: float
    mae: float | None = None
    mse: float | None = None
    confusion: list | None = None
    per_class: dict | None = None
    macro: dict | None = None
    micro: dict | None = None
    accuracy: float | None = None
    baseline: dict = field(default_factory=dict)
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def metrics_key(self) -> dict:
        """Everything except wall-clock time, for reproducibility comparisons."""
        d = self.to_dict()
        d.pop("runtime_s")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"task {self.task}  variant {self.variant}  split {self.split}",
                 f"samples {self.n_samples}  nodes {self.n_nodes}  loss {self.loss:.6f}  runtime {self.runtime_s:.2f}s"]
        if self.mae is not None:
            lines.append(f"MAE {self.mae:.5f} mm  MSE {self.mse:.6f} mm^2")
        if self.confusion is not None:
            lines.append(f"accuracy {self.accuracy:.2f}%  (macro-averaged P/R/F1 below)")
            m = self.macro
            lines.append(f"macro  P {m['precision']:.4f}  R {m['recall']:.4f}  F1 {m['f1']:.4f}")
            lines.append("class      P       R      F1  support")
            pc = self.per_class
            for i, name in enumerate(CLASS_NAMES):
                flag = "  low recall" if pc["support"][i] and pc["recall"][i] < LOW_RECALL else ""
                lines.append(f"  {name}   {pc['precision'][i]:.4f}  {pc['recall'][i]:.4f}  {pc['f1'][i]:.4f}  {pc['support'][i]:7d}{flag}")
            lines.append("confusion (rows true, cols predicted): " + " ".join(CLASS_NAMES))
            for name, row in zip(CLASS_NAMES, self.confusion):
                lines.append(f"  {name} " + " ".join(f"{v:7d}" for v in row))
        for k, v in self.baseline.items():
            lines.append(f"baseline {k}: {v:.5f}" if isinstance(v, float) else f"baseline {k}: {v}")
        return "\n".join(lines)


def evaluate(model_or_checkpoint, dataset: Dataset | None = None, ids=None, samples: dict | None = None,
             task: str | None = None, split: str = "test", seed: int = 0, mask_ratio: float = 0.5) -> EvalReport:
    """Node-level metrics pooled over the given samples (eval mode)."""
    t0 = time.perf_counter()
    model = model_or_checkpoint
    if isinstance(model_or_checkpoint, (str, Path)):
        model = load_model(model_or_checkpoint)
    task = task or (model.config.mode if model.config.variant in MAIN_VARIANTS else model.config.variant)
    if model.config.variant in MAIN_VARIANTS and task != model.config.mode:
        raise ConfigError(f"checkpoint is a {model.config.mode} model, not {task}", "eval.task")
    if model.config.variant in PRETEXT_VARIANTS and task != model.config.variant:
        raise ConfigError(f"checkpoint is a {model.config.variant} model, not {task}", "eval.task")
    if ids is None:
        ids = sorted(samples) if samples is not None else dataset.sample_ids
    ids = list(ids)
    if not ids:
        raise ConfigError(f"split {split!r} is empty", "eval.split")
    data = _samples(dataset, ids, samples)
    model.eval()
    losses, preds, targets = [], [], []
    with no_grad():
        for s in data:
            loss, out = sample_loss(model, s, task, seed, mask_ratio)
            losses.append(float(loss.data))
            if task == "regression":
                preds.append(out.data.astype(np.float64))
                targets.append(s.sd_mm())
            elif task == "classification":
                preds.append(np.argmax(out.data, axis=1))
                targets.append(s.class_labels.astype(np.int64))
    rep = EvalReport(task, model.config.variant, split, len(data), int(sum(s.node_count for s in data)),
                     float(np.mean(losses)))
    if task == "regression":
        p, t = np.concatenate(preds), np.concatenate(targets)
        m = regression_metrics(p, t)
        rep.mae, rep.mse = m["mae"], m["mse"]
        rep.baseline = {"predict_zero_mae": float(np.mean(np.abs(t))), "predict_zero_mse": float(np.mean(t * t))}
    elif task == "classification":
        p, t = np.concatenate(preds), np.concatenate(targets)
        cm = confusion_matrix(t, p)
        m = classification_metrics(cm)
        rep.confusion = cm.tolist()
        rep.per_class = {k: m[k] for k in ("precision", "recall", "f1", "support")}
        rep.macro, rep.micro, rep.accuracy = m["macro"], m["micro"], m["accuracy"]
        counts = np.bincount(t, minlength=len(CLASS_NAMES))
        rep.baseline = {"majority_class": CLASS_NAMES[int(counts.argmax())],
                        "majority_accuracy": float(100.0 * counts.max() / counts.sum())}
    rep.runtime_s = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------- ablations


def run_ablation_suite(config: TrainConfig | dict, dataset: Dataset | None = None, splits=None,
                       samples: dict | None = None, variants=MAIN_VARIANTS, pretrained: dict | None = None,
                       out_dir=None) -> dict:
    """Train and evaluate each variant on the same splits; one report row per run.

    ``pretrained`` maps a row label to a pretext checkpoint used to initialise
    the full model's encoder. A failing run is recorded and the suite goes on.
    """
    if isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    parts = _resolve_splits(config, dataset, splits) if samples is None or splits is not None or config.splits else None
    if parts is None:
        ids = sorted(samples)
        parts = {"train": ids, "val": ids, "test": ids}
    runs = [(v, v, None) for v in variants]
    runs += [(f"full+{label}", "full", path) for label, path in (pretrained or {}).items()]
    rows, reports = [], {}
    for label, variant, enc in runs:
        cfg = TrainConfig.from_dict(dict(config.to_dict(), variant=variant, pretrained_encoder=enc,
                                         out_dir=str(Path(out_dir) / label) if out_dir else None))
        try:
            res = train(cfg, dataset, parts, samples)
            rep = evaluate(res.model, dataset, parts["test"] or parts["val"], samples, cfg.task, "test", cfg.seed)
        except Exception as exc:  # noqa: BLE001 - the suite reports and continues
            log.error("ablation run %s failed: %s", label, exc)
            rows.append({"run": label, "variant": variant, "error": f"{type(exc).__name__}: {exc}"})
            continue
        reports[label] = rep.to_dict()
        row = {"run": label, "variant": variant, "best_epoch": res.best_epoch, "loss": rep.loss}
        if rep.task == "classification":
            row.update(accuracy=rep.accuracy, precision=rep.macro["precision"], recall=rep.macro["recall"],
                       f1=rep.macro["f1"], recall_per_class=dict(zip(CLASS_NAMES, rep.per_class["recall"])),
                       low_recall_classes=[c for c, r, n in zip(CLASS_NAMES, rep.per_class["recall"], rep.per_class["support"])
                                           if n and r < LOW_RECALL])
        else:
            row.update(mae=rep.mae, mse=rep.mse)
        rows.append(row)
    report = {"task": config.task, "averaging": "macro", "rows": rows, "reports": reports,
              "reference": REFERENCE_RESULTS, "splits": {k: len(v) for k, v in parts.items()}}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(json.dumps(report, indent=2))
        (out / "ablation.txt").write_text(ablation_text(report))
    return report


def ablation_text(report: dict) -> str:
    lines = [f"ablation ({report['task']}, {report['averaging']}-averaged P/R/F1)"]
    if report["task"] == "classification":
        lines.append(f"{'run':<22}{'acc%':>8}{'P':>8}{'R':>8}{'F1':>8}  low-recall classes")
        for r in report["rows"]:
            if "error" in r:
                lines.append(f"{r['run']:<22}  failed: {r['error']}")
                continue
            lines.append(f"{r['run']:<22}{r['accuracy']:8.2f}{r['precision']:8.4f}{r['recall']:8.4f}{r['f1']:8.4f}  "
                         + (",".join(r["low_recall_classes"]) or "-"))
        for label, rep in report["reports"].items():
            lines.append(f"confusion {label} (rows true, cols predicted):")
            lines += ["  " + " ".join(f"{v:7d}" for v in row) for row in rep["confusion"]]
    else:
        lines.append(f"{'run':<22}{'MAE':>10}{'MSE':>10}")
        for r in report["rows"]:
            if "error" in r:
                lines.append(f"{r['run']:<22}  failed: {r['error']}")
                continue
            lines.append(f"{r['run']:<22}{r['mae']:10.5f}{r['mse']:10.6f}")
    ref = report["reference"]
    lines.append(f"reference (original study, real data): MAE {ref['regression_mae_mm']} mm, "
                 f"accuracy {ref['classification_accuracy_pct']}%")
    return "\n".join(lines)
