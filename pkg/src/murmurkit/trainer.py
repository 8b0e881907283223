"""Cross-validated training of FunnelCNN and sensitivity/specificity/accuracy metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import FoldPlan, LabeledDataset
from .errors import ConfigError, ConfigMismatch, EmptyEvalSet, NonFiniteLoss
from .funnelcnn import FunnelModel, ModelConfig, build, cross_entropy, predict

log = logging.getLogger(__name__)

ADAM = "adam"
SGD = "sgd"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in (ADAM, SGD):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.lr, self.mu = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, v in zip(params, grads, self.vel):
            v *= self.mu
            v -= self.lr * g
            p += v


def make_optimizer(params, tcfg: TrainConfig):
    if tcfg.optimizer == ADAM:
        return Adam(params, tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps)
    return SGDMomentum(params, tcfg.learning_rate, tcfg.momentum)


# -- metrics -----------------------------------------------------------------

def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Rows are ground truth, columns predictions."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _ratio(num, den) -> float:
    return 100.0 * num / den if den else 0.0


def one_vs_rest(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class sensitivity and specificity (percent), each class vs the rest."""
    total = cm.sum()
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    tn = total - tp - fn - fp
    sens = np.array([_ratio(a, a + b) for a, b in zip(tp, fn)])
    spec = np.array([_ratio(a, a + b) for a, b in zip(tn, fp)])
    return sens, spec


@dataclass
class MetricsReport:
    sensitivity: float
    specificity: float
    accuracy: float
    confusion: np.ndarray
    per_fold: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "per_fold": [m.to_dict() for m in self.per_fold],
        }


def default_positive_class(class_names) -> int:
    """Index of ``murmur`` when present, else class 1."""
    names = [str(n).lower() for n in class_names or ()]
    return names.index("murmur") if "murmur" in names else 1


def metrics_from_confusion(cm: np.ndarray, positive: int = 1) -> MetricsReport:
    """Binary: sensitivity/specificity w.r.t. ``positive``. Multiclass: macro one-vs-rest."""
    n = int(cm.sum())
    if n == 0:
        raise EmptyEvalSet("no samples to evaluate")
    sens, spec = one_vs_rest(cm)
    if cm.shape[0] == 2:
        s, p = float(sens[positive]), float(spec[positive])
    else:
        s, p = float(np.mean(sens)), float(np.mean(spec))
    return MetricsReport(s, p, 100.0 * float(np.trace(cm)) / n, cm)


def evaluate(m: FunnelModel, features, labels, positive: int | None = None,
             class_names=None) -> MetricsReport:
    """Segment-level metrics of ``m`` on ``features`` (``(N, D)`` or ``(N, H, W, C)``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise EmptyEvalSet("no samples to evaluate")
    x = np.asarray(features, dtype=np.float64).reshape((labels.size,) + m.cfg.input_shape)
    pred = predict(m, x)
    if positive is None:
        positive = default_positive_class(class_names)
    return metrics_from_confusion(confusion_matrix(labels, pred, m.cfg.num_classes), positive)


def confusion_csv(cm: np.ndarray, class_names) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred"] + list(class_names))
    for name, row in zip(class_names, cm):
        w.writerow([name] + [int(v) for v in row])
    return buf.getvalue()


# -- training ------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    train_loss: list
    val_loss: list
    train_acc: list
    val_acc: list
    metrics: MetricsReport

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("fold", "train_loss", "val_loss", "train_acc", "val_acc")}
        d["metrics"] = self.metrics.to_dict()
        return d


@dataclass
class TrainReport:
    folds: list
    metrics: MetricsReport
    model_config: ModelConfig
    train_config: TrainConfig
    class_names: tuple
    wall_clock_s: float = 0.0
    models: list = field(default_factory=list, repr=False)

    @property
    def best_fold(self) -> int:
        accs = [f.metrics.accuracy for f in self.folds]
        return int(np.argmax(accs))

    def to_dict(self) -> dict:
        """Serializable view; wall-clock time and model weights are left out so
        identical seeds give identical bytes."""
        return {
            "seed": self.train_config.seed,
            "class_names": list(self.class_names),
            "model_config": self.model_config.to_dict(),
            "train_config": asdict(self.train_config),
            "metrics": self.metrics.to_dict(),
            "best_fold": self.best_fold,
            "folds": [f.to_dict() for f in self.folds],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _check_features(ds: LabeledDataset, mcfg: ModelConfig) -> np.ndarray:
    if ds.features.shape[1] != int(np.prod(mcfg.input_shape)):
        raise ConfigMismatch(
            f"feature dimension {ds.features.shape[1]} does not match input shape {mcfg.input_shape}"
        )
    if ds.n_classes != mcfg.num_classes:
        raise ConfigMismatch(f"dataset has {ds.n_classes} classes, model expects {mcfg.num_classes}")
    return ds.features.reshape((len(ds),) + mcfg.input_shape)


def train_model(x, y, val_x, val_y, mcfg: ModelConfig, tcfg: TrainConfig, seed: int, fold: int = 0):
    """Train a fresh model; returns ``(model, curves)``."""
    model = build(mcfg, seed)
    params = model.tensors()
    opt = make_optimizer(params, tcfg)
    rng = np.random.default_rng(seed)
    curves = {"train_loss": [], "val_loss": [], "train_acc": [], "val_acc": []}
    n = y.size
    for epoch in range(tcfg.epochs):
        order = rng.permutation(n)
        tot_loss, correct = 0.0, 0
        for start in range(0, n, tcfg.batch_size):
            bi = order[start : start + tcfg.batch_size]
            loss, grads = model.loss_and_grads(x[bi], y[bi])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"fold {fold}, epoch {epoch + 1}: loss became {loss}")
            logits = model._cache["logits"]
            correct += int(np.sum(_logit_classes(logits, mcfg) == y[bi]))
            tot_loss += loss * bi.size
            opt.step(params, grads)
        curves["train_loss"].append(tot_loss / n)
        curves["train_acc"].append(100.0 * correct / n)
        if val_y is not None and val_y.size:
            z, _ = model.logits(val_x)
            vloss, _ = cross_entropy(z, val_y, mcfg.head)
            curves["val_loss"].append(vloss)
            curves["val_acc"].append(100.0 * float(np.mean(_logit_classes(z, mcfg) == val_y)))
        log.debug("fold %d epoch %d train_loss %.4f", fold, epoch + 1, curves["train_loss"][-1])
    model._cache = None
    return model, curves


def _logit_classes(z, mcfg: ModelConfig):
    if mcfg.head == "sigmoid":
        return (z[:, 0] >= 0).astype(np.int64)
    return np.argmax(z, axis=1)


def train_cv(ds: LabeledDataset, plan: FoldPlan, mcfg: ModelConfig, tcfg: TrainConfig = TrainConfig(),
             positive: int | None = None) -> TrainReport:
    """Train one fresh model per fold (seed ``tcfg.seed + fold``) and validate on the held-out fold."""
    if plan.assignments.shape != ds.labels.shape:
        raise ConfigMismatch("fold plan does not match the dataset")
    x = _check_features(ds, mcfg)
    y = ds.labels
    if positive is None:
        positive = default_positive_class(ds.class_names)
    t0 = time.perf_counter()
    folds, models = [], []
    for i, (tr, va) in enumerate(plan):
        model, curves = train_model(x[tr], y[tr], x[va], y[va], mcfg, tcfg, tcfg.seed + i, fold=i)
        cm = confusion_matrix(y[va], predict(model, x[va]), mcfg.num_classes)
        metrics = metrics_from_confusion(cm, positive)
        folds.append(FoldResult(i, metrics=metrics, **curves))
        models.append(model)
        log.info("fold %d/%d: acc %.2f%% sens %.2f%% spec %.2f%%",
                 i + 1, plan.k, metrics.accuracy, metrics.sensitivity, metrics.specificity)
    per_fold = [f.metrics for f in folds]
    mean = MetricsReport(
        sensitivity=float(np.mean([m.sensitivity for m in per_fold])),
        specificity=float(np.mean([m.specificity for m in per_fold])),
        accuracy=float(np.mean([m.accuracy for m in per_fold])),
        confusion=sum(m.confusion for m in per_fold),
        per_fold=per_fold,
    )
    return TrainReport(folds, mean, mcfg, tcfg, ds.class_names, time.perf_counter() - t0, models)
