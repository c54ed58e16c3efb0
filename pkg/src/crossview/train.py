"""Training loop, evaluation and model selection.

Every stochastic choice (shuffle order, augmentation, dropout) comes from a
stream keyed by ``(seed, purpose, epoch, ...)``. A run resumed from an
epoch-boundary checkpoint therefore replays exactly the same steps as an
uninterrupted run.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import AugmentParams, DatasetContainer, LabelState, apply_transform, class_weights, sample_transform
from .errors import ConfigError, MetricUndefinedError, NumericError
from .losses import masked_multitask_ce, weighted_bce
from .metrics import auc_roc
from .models import Model, ModelSpec, build, logits_to_prediction
from .optim import OptimState, adam_step, lr_at
from .tensor import Tensor, getitem, no_grad, reshape

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "task", "metric", "value")


@dataclass
class TrainResult:
    rows: list[tuple]
    selected: dict[str, dict]  # task -> {"epoch", "val_auc", "test_auc"}
    final_epoch: int
    run_dir: Path | None = None
    history: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# batches and evaluation
# ---------------------------------------------------------------------------


def augment_views(views: np.ndarray, ids: np.ndarray, params: AugmentParams, seed: int, epoch: int) -> np.ndarray:
    """Independently augment both views of each sample with a per-(epoch, sample) stream."""
    out = np.empty_like(views)
    h, w = views.shape[-2:]
    for i, sid in enumerate(ids):
        rng = rngmod.stream(seed, "augment", epoch, int(sid))
        for v in range(views.shape[1]):
            out[i, v] = apply_transform(views[i, v], sample_transform((h, w), params, rng))
    return out


def compute_loss(spec: ModelSpec, logits: Tensor, states: np.ndarray, cw: np.ndarray) -> Tensor:
    if spec.head == "binary":
        known = np.nonzero((states[:, 0] == LabelState.POS) | (states[:, 0] == LabelState.NEG))[0]
        if len(known) == 0:
            raise MetricUndefinedError("batch has no labelled samples")
        z = logits if len(known) == len(states) else getitem(logits, known)
        labels = (states[known, 0] == LabelState.POS).astype(np.float64)
        return weighted_bce(z, labels, cw)
    return masked_multitask_ce(reshape(logits, (logits.shape[0], spec.task_count, 3)), states)


def predict_logits(model: Model, views: np.ndarray, batch_size: int) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for lo in range(0, len(views), batch_size):
            out.append(model(views[lo : lo + batch_size], training=False).data)
    if not out:
        return np.zeros((0, model.spec.outputs))
    return np.concatenate(out)


def task_aucs(spec: ModelSpec, logits: np.ndarray, states: np.ndarray, tasks: list[str]) -> dict[str, float]:
    """Per-task AUC over samples labelled pos/neg; tasks lacking a class are left out."""
    scores = logits_to_prediction(spec, logits).scores
    result = {}
    for t, task in enumerate(tasks):
        mask = (states[:, t] == LabelState.POS) | (states[:, t] == LabelState.NEG)
        try:
            result[task] = auc_roc(scores[mask, t], states[mask, t] == LabelState.POS)
        except MetricUndefinedError:
            continue
    if len(tasks) > 1 and result:
        result["overall"] = float(np.mean([result[t] for t in tasks if t in result]))
    return result


def evaluate(model: Model, ds: DatasetContainer, batch_size: int) -> dict[str, float]:
    logits = predict_logits(model, ds.views, batch_size)
    aucs = task_aucs(model.spec, logits, ds.states, ds.tasks)
    if not aucs:
        raise MetricUndefinedError("no task has both classes in this split")
    return aucs


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------


def format_rows(rows: list[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for epoch, split, task, metric, value in rows:
        w.writerow([epoch, split, task, metric, repr(float(value))])
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _state(model: Model) -> dict[str, np.ndarray]:
    return {k: np.array(v) for k, v in model.state_dict().items()}


def _checkpoint(model: Model, optim: OptimState, epoch: int, cfg: RunConfig, rows, selection) -> Checkpoint:
    config = cfg.to_dict()
    config["train"]["resume"] = None  # a resumed run writes the same bytes as an uninterrupted one
    return Checkpoint(
        model_spec=model.spec.to_dict(),
        state=_state(model),
        optim=optim,
        epoch=epoch,
        config=config,
        extra={"metrics": [list(r) for r in rows], "selection": selection},
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Model:
    spec = ModelSpec.from_dict(ckpt.model_spec)
    model = build(spec, 0)
    model.load_state_dict(ckpt.state)
    return model


def train(
    model: Model,
    train_ds: DatasetContainer,
    cfg: RunConfig,
    val_ds: DatasetContainer | None = None,
    test_ds: DatasetContainer | None = None,
    run_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> TrainResult:
    """Train ``model`` per ``cfg`` and return per-epoch metrics plus the selected epochs.

    With ``run_dir`` set, writes ``metrics.csv`` after every epoch, ``final.ckpt``
    at the end, ``epoch_NNN.ckpt`` every ``train.checkpoint_every`` epochs and,
    under per-task-best selection, ``best_<task>.ckpt``.
    """
    sched, tcfg, seed = cfg.schedule, cfg.train, cfg.seed
    spec = model.spec
    if len(train_ds) < 2:
        raise ConfigError("training split needs at least 2 samples")
    if tcfg.selection == "per-task-best" and val_ds is None:
        raise ConfigError("per-task-best selection needs a validation split")
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)

    cw = class_weights(train_ds.binary_labels(0)) if (spec.head == "binary" and tcfg.class_weighting) else np.ones(2)
    optim = OptimState()
    rows: list[tuple] = []
    selection: dict[str, dict] = {}
    start_epoch = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.model_spec != spec.to_dict():
            raise ConfigError(f"checkpoint {resume} was trained with a different model spec")
        model.load_state_dict(ckpt.state)
        optim = ckpt.optim or OptimState()
        start_epoch = ckpt.epoch
        rows = [tuple(r) for r in ckpt.extra.get("metrics", [])]
        selection = ckpt.extra.get("selection", {})

    n = len(train_ds)
    steps = max(1, n // tcfg.batch_size)
    params = list(model.named_parameters())
    for epoch in range(start_epoch, sched.epochs):
        order = rngmod.stream(seed, "shuffle", epoch).permutation(n)
        losses = []
        lr = 0.0
        for step, idx in enumerate(np.array_split(order, steps)):
            lr = lr_at(epoch + step / steps, sched)
            views = train_ds.views[idx]
            if tcfg.augment:
                views = augment_views(views, train_ds.ids[idx], cfg.augment, seed, epoch)
            logits = model(views, training=True, rng=rngmod.stream(seed, "dropout", epoch, step))
            loss = compute_loss(spec, logits, train_ds.states[idx], cw)
            if not math.isfinite(loss.item()):
                raise NumericError(f"non-finite loss {loss.item()} at epoch {epoch}, step {step}")
            model.zero_grad()
            loss.backward()
            adam_step(params, optim, lr, tcfg.weight_decay, tcfg.grad_clip)
            losses.append(loss.item())
        e = epoch + 1
        rows.append((e, "train", "all", "loss", float(np.mean(losses))))
        rows.append((e, "train", "all", "lr", lr))
        val_auc = evaluate(model, val_ds, tcfg.eval_batch_size) if val_ds is not None else {}
        test_auc = evaluate(model, test_ds, tcfg.eval_batch_size) if test_ds is not None else {}
        rows += [(e, "val", t, "auc", v) for t, v in val_auc.items()]
        rows += [(e, "test", t, "auc", v) for t, v in test_auc.items()]
        log.info("epoch %d loss %.4f val %s test %s", e, np.mean(losses), val_auc, test_auc)

        if tcfg.selection == "per-task-best":
            for task, v in val_auc.items():
                if task == "overall":
                    continue
                if task not in selection or v > selection[task]["val_auc"]:
                    selection[task] = {"epoch": e, "val_auc": v, "test_auc": test_auc.get(task)}
                    if run_dir is not None:
                        save_checkpoint(run_dir / f"best_{task}.ckpt", _checkpoint(model, optim, e, cfg, rows, selection))
        else:
            selection = {
                task: {"epoch": e, "val_auc": val_auc.get(task), "test_auc": test_auc.get(task)}
                for task in (val_auc or test_auc or {t: None for t in train_ds.tasks})
                if task != "overall"
            }
        if run_dir is not None:
            (run_dir / "metrics.csv").write_text(format_rows(rows))
            if tcfg.checkpoint_every and e % tcfg.checkpoint_every == 0:
                save_checkpoint(run_dir / f"epoch_{e:03d}.ckpt", _checkpoint(model, optim, e, cfg, rows, selection))

    if run_dir is not None:
        save_checkpoint(run_dir / "final.ckpt", _checkpoint(model, optim, sched.epochs, cfg, rows, selection))
        (run_dir / "metrics.csv").write_text(format_rows(rows))
    return TrainResult(rows, selection, sched.epochs, run_dir)
