"""Losses, optimizers, the training loop, evaluation metrics and subject-disjoint folds."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np

from .autodiff import Graph, Node, set_precision
from .config import ModelConfig, TrainConfig
from .data import FeatureMapSequence, group_by_length, stack_frames
from .model import GraphOutputs, InterpreterNetwork

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_node(g: Graph, nodes: GraphOutputs, labels: np.ndarray, task: str) -> Node:
    """Batch-mean loss: squared error for regression, softmax cross-entropy otherwise."""
    if task == "regression":
        return g.squared_error(nodes.output, g.const(np.asarray(labels, dtype=np.float64)))
    classes = np.asarray(labels)
    if not np.all(classes == np.round(classes)):
        raise ValueError("classification labels must be integer class ids")
    return g.softmax_cross_entropy(nodes.output, classes.astype(np.int64))


def loss_value(pred: np.ndarray, labels, task: str) -> float:
    """Loss of an already-computed prediction (regression values or class probabilities)."""
    labels = np.atleast_1d(np.asarray(labels))
    pred = np.asarray(pred, dtype=np.float64)
    if task == "regression":
        return float(np.mean((np.atleast_1d(pred) - labels) ** 2))
    probs = np.atleast_2d(pred)
    ids = labels.astype(np.int64)
    if ids.min() < 0 or ids.max() >= probs.shape[1]:
        raise ValueError(f"class id out of range [0, {probs.shape[1]})")
    return float(-np.mean(np.log(probs[np.arange(len(ids)), ids])))


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr)
    return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: InterpreterNetwork
    losses: list[float]


def _batches(data: Sequence[FeatureMapSequence], batch_size: int, rng: np.random.Generator,
             min_batch: int) -> list[list[int]]:
    out = []
    for _, idx in sorted(group_by_length(data).items()):
        idx = list(rng.permutation(idx))
        chunks = [idx[k:k + batch_size] for k in range(0, len(idx), batch_size)]
        if len(chunks) > 1 and len(chunks[-1]) < min_batch:
            chunks[-2].extend(chunks.pop())
        out.extend(chunks)
    order = rng.permutation(len(out))
    return [out[k] for k in order]


def train_step(model: InterpreterNetwork, frames: np.ndarray, labels: np.ndarray, optimizer,
               rng: np.random.Generator, grad_clip: float = 0.0) -> float:
    g = Graph()
    nodes = model.build(g, frames, training=True, rng=rng)
    loss = loss_node(g, nodes, labels, model.config.task)
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(g.forward(loss))
    if not np.isfinite(value):
        raise TrainingDiverged(f"loss became {value}")
    grads = g.backward(loss)
    for p in nodes.pending:
        p.apply(g)
    params = dict(model.parameters())
    if grad_clip > 0:
        norm = np.sqrt(sum(float(np.sum(gr * gr)) for gr in grads.values()))
        if norm > grad_clip:
            grads = {k: v * (grad_clip / norm) for k, v in grads.items()}
    optimizer.step(params, grads)
    return value


def train(data: Sequence[FeatureMapSequence], model_cfg: ModelConfig, cfg: TrainConfig,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Mini-batch training; deterministic for a given ``cfg.seed``.

    Regression output bias starts at the mean training label so that raw-year
    targets do not spend the first epochs just shifting the output.
    """
    if not data:
        raise ValueError("no training data")
    set_precision(cfg.precision)
    labels = np.array([s.label for s in data], dtype=np.float64)
    if not np.all(np.isfinite(labels)):
        raise ValueError("training data contains unlabeled or non-finite labels")
    rng = np.random.default_rng(cfg.seed)
    model = InterpreterNetwork(model_cfg, seed=cfg.seed)
    if model_cfg.task == "regression":
        model.output.bias[...] = labels.mean()
    min_batch = 2 if model_cfg.estimator_hidden else 1
    if len(data) < min_batch:
        raise ValueError("batch normalization needs at least two training sequences")
    optimizer = make_optimizer(cfg)
    losses = []
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for idx in _batches(data, cfg.batch_size, rng, min_batch):
            frames = stack_frames(data, idx)
            batch_loss = train_step(model, frames, labels[idx], optimizer, rng, cfg.grad_clip)
            total += batch_loss * len(idx)
            count += len(idx)
        losses.append(total / count)
        if progress is not None:
            progress(epoch, losses[-1])
        log.debug("epoch %d loss %.6g", epoch, losses[-1])
    return TrainResult(model, losses)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    task: str
    n_test: int
    predictions: list[float]
    targets: list[float]
    residuals: list[float]
    mae: float | None = None
    accuracy: float | None = None
    fold: int | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.task == "regression":
            d.pop("accuracy")
        else:
            d.pop("mae")
        return d


def mean_absolute_error(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.abs(p - t).sum() / p.size)


def predict_all(model: InterpreterNetwork, data: Sequence[FeatureMapSequence],
                batch_size: int = 256) -> tuple[np.ndarray, np.ndarray | None]:
    """Inference over ``data`` in original order: ``(y, importance)``."""
    n = len(data)
    ys: list = [None] * n
    lams: list = [None] * n
    for _, idx in group_by_length(data).items():
        for k in range(0, len(idx), batch_size):
            chunk = idx[k:k + batch_size]
            pred = model.predict(stack_frames(data, chunk))
            for j, i in enumerate(chunk):
                ys[i] = pred.y[j]
                lams[i] = None if pred.importance is None else pred.importance[j]
    lam = None if lams[0] is None else np.stack(lams)
    return np.stack(ys), lam


def evaluate(model: InterpreterNetwork, data: Sequence[FeatureMapSequence],
             fold: int | None = None) -> EvalReport:
    """MAE (regression) or argmax accuracy (classification); parameters untouched."""
    if not data:
        raise ValueError("no evaluation data")
    task = model.config.task
    y, _ = predict_all(model, data)
    targets = np.array([s.label for s in data], dtype=np.float64)
    if task == "regression":
        resid = y - targets
        return EvalReport(task, len(data), y.tolist(), targets.tolist(), resid.tolist(),
                          mae=mean_absolute_error(y, targets), fold=fold)
    cls = y.argmax(axis=1)
    correct = (cls == targets.astype(np.int64))
    return EvalReport(task, len(data), cls.astype(float).tolist(), targets.tolist(),
                      (~correct).astype(float).tolist(), accuracy=float(correct.mean()), fold=fold)


# ---------------------------------------------------------------------------
# subject-disjoint folds
# ---------------------------------------------------------------------------


@dataclass
class FoldSplit:
    folds: list[list[Hashable]]
    fold_of: dict[Hashable, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.fold_of:
            self.fold_of = {s: k for k, fold in enumerate(self.folds) for s in fold}

    @property
    def k(self) -> int:
        return len(self.folds)

    def rounds(self, subject_ids: Sequence[Hashable]):
        """Yield ``(fold, train_indices, test_indices)`` over item-level subject ids."""
        for k in range(self.k):
            test = [i for i, s in enumerate(subject_ids) if self.fold_of[s] == k]
            train = [i for i, s in enumerate(subject_ids) if self.fold_of[s] != k]
            yield k, train, test

    def audit(self, subject_ids: Sequence[Hashable]) -> int:
        """Count subjects that appear in both train and test of some round."""
        violations = 0
        seen = [s for fold in self.folds for s in fold]
        violations += len(seen) - len(set(seen))
        for _, train, test in self.rounds(subject_ids):
            violations += len({subject_ids[i] for i in train} & {subject_ids[i] for i in test})
        return violations


def kfold(subjects: Sequence[Hashable], k: int, seed: int = 0) -> FoldSplit:
    """Assign distinct subjects to ``k`` folds whose sizes differ by at most one."""
    distinct = sorted(set(subjects), key=str)
    if k < 2:
        raise ValueError("need at least two folds")
    if len(distinct) < k:
        raise ValueError(f"{len(distinct)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(distinct))
    folds: list[list[Hashable]] = [[] for _ in range(k)]
    for rank, i in enumerate(order):
        folds[rank % k].append(distinct[i])
    return FoldSplit(folds)


@dataclass
class FoldResult:
    fold: int
    report: EvalReport
    losses: list[float]
    model: InterpreterNetwork | None = None


def _run_fold(args) -> FoldResult:
    data, model_cfg, train_cfg, fold, train_idx, test_idx = args
    result = train([data[i] for i in train_idx], model_cfg, train_cfg)
    report = evaluate(result.model, [data[i] for i in test_idx], fold=fold)
    return FoldResult(fold, report, result.losses, result.model)


def cross_validate(data: Sequence[FeatureMapSequence], model_cfg: ModelConfig, train_cfg: TrainConfig,
                   k: int = 10, fold_seed: int = 0, jobs: int = 1) -> tuple[FoldSplit, list[FoldResult]]:
    subjects = [s.subject_id for s in data]
    split = kfold(subjects, k, fold_seed)
    tasks = [(list(data), model_cfg, train_cfg, f, tr, te) for f, tr, te in split.rounds(subjects)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, tasks))
    else:
        results = [_run_fold(t) for t in tasks]
    return split, results


def pooled_summary(results: Sequence[FoldResult]) -> dict:
    """Pooled metric over every test prediction plus the per-fold mean."""
    task = results[0].report.task
    preds = np.concatenate([r.report.predictions for r in results])
    targets = np.concatenate([r.report.targets for r in results])
    out = {"task": task, "folds": len(results), "n_test": int(preds.size)}
    if task == "regression":
        out["pooled_mae"] = mean_absolute_error(preds, targets)
        out["mean_fold_mae"] = float(np.mean([r.report.mae for r in results]))
    else:
        out["pooled_accuracy"] = float(np.mean(preds == targets))
        out["mean_fold_accuracy"] = float(np.mean([r.report.accuracy for r in results]))
    return out
