"""Score models, Adam training loops, and the procedural baselines.

A joint score model maps features to C+1 scores: class scores then a
deferral score. Surrogate trainers optimize one of the losses in
:mod:`deferlab.surrogates`; after every epoch the validation system
accuracy at threshold 0 is computed, and the best epoch's snapshot is the
returned model (ties go to the earlier epoch). Two-stage baselines train a
classifier first and derive their deferral rule from auxiliary models or
confidence thresholds.

Deferral semantics per method, all expressed as ``defer iff
rejection_score(x) >= tau``:

* ``rs``, ``ce``, ``ova``: score is the deferral head minus the class max;
* ``rs2``, ``moe``: score is the deferral head alone;
* ``confidence``: predicted human-correctness probability minus the
  classifier's max softmax probability;
* ``selective``: negated max softmax probability (tau = -threshold);
* ``triage``: an auxiliary model's logit for "human beats classifier".
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import DeferDataset
from .surrogates import LOSSES

__all__ = [
    "ScoreModel",
    "TrainConfig",
    "TrainedSystem",
    "TrainingDiverged",
    "train_surrogate",
    "search_alpha",
    "fit_tau",
    "train_compare_confidence",
    "train_selective_prediction",
    "train_differentiable_triage",
    "train_method",
    "METHODS",
]


class TrainingDiverged(RuntimeError):
    """Raised when a training loss stops being finite."""


@dataclass
class ScoreModel:
    """A linear or one-hidden-layer ReLU scoring function with flat params."""

    arch: str  # "linear" | "one_hidden"
    input_dim: int
    output_dim: int
    hidden_units: int = 0
    params: np.ndarray = field(default=None, repr=False)

    @classmethod
    def initialize(cls, arch, input_dim, output_dim, hidden_units, rng) -> "ScoreModel":
        """Symmetric-uniform init scaled by 1/sqrt(fan_in), layer by layer."""
        if arch == "linear":
            bound = 1.0 / np.sqrt(input_dim)
            params = rng.uniform(-bound, bound, size=(input_dim + 1) * output_dim)
        elif arch == "one_hidden":
            if hidden_units < 1:
                raise ValueError("one_hidden needs hidden_units >= 1")
            b1 = 1.0 / np.sqrt(input_dim)
            b2 = 1.0 / np.sqrt(hidden_units)
            params = np.concatenate([
                rng.uniform(-b1, b1, size=(input_dim + 1) * hidden_units),
                rng.uniform(-b2, b2, size=(hidden_units + 1) * output_dim),
            ])
        else:
            raise ValueError(f"unknown architecture {arch!r}")
        return cls(arch, input_dim, output_dim, hidden_units, params)

    def _unpack(self):
        d, out, h = self.input_dim, self.output_dim, self.hidden_units
        p = self.params
        if self.arch == "linear":
            w = p[: d * out].reshape(out, d)
            b = p[d * out :]
            return w, b
        n1 = d * h
        w1 = p[:n1].reshape(h, d)
        b1 = p[n1 : n1 + h]
        n2 = n1 + h
        w2 = p[n2 : n2 + h * out].reshape(out, h)
        b2 = p[n2 + h * out :]
        return w1, b1, w2, b2

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.arch == "linear":
            w, b = self._unpack()
            return x @ w.T + b
        w1, b1, w2, b2 = self._unpack()
        hidden = np.maximum(0.0, x @ w1.T + b1)
        return hidden @ w2.T + b2

    def backward(self, x: np.ndarray, dscores: np.ndarray) -> np.ndarray:
        """Gradient of sum(dscores * scores) in the flat parameters."""
        if self.arch == "linear":
            dw = dscores.T @ x
            db = dscores.sum(axis=0)
            return np.concatenate([dw.ravel(), db])
        w1, b1, w2, b2 = self._unpack()
        z1 = x @ w1.T + b1
        a1 = np.maximum(0.0, z1)
        dw2 = dscores.T @ a1
        db2 = dscores.sum(axis=0)
        da1 = dscores @ w2
        dz1 = da1 * (z1 > 0)
        dw1 = dz1.T @ x
        db1 = dz1.sum(axis=0)
        return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.arch, self.input_dim, self.output_dim,
                          self.hidden_units, self.params.copy())


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and search knobs shared by all trainers."""

    loss: str = "rs"
    epochs: int = 300
    batch_size: int = 0  # 0 means full batch
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    alpha: Optional[float] = None
    alpha_grid: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    val_fraction: float = 0.1
    hidden_units: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.alpha is not None and not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


@dataclass
class TrainedSystem:
    """A trained deferral system: model(s), threshold, and decision rule."""

    model: ScoreModel
    num_classes: int
    tau: float = 0.0
    aux_model: Optional[ScoreModel] = None
    method: str = "rs"
    score_kind: str = "gap"
    alpha: Optional[float] = None
    best_val_accuracy: Optional[float] = None
    best_epoch: Optional[int] = None
    min_train_error: Optional[float] = None  # lowest train system error seen

    def classifier_scores(self, x) -> np.ndarray:
        scores = self.model.forward(x)
        return scores[:, : self.num_classes]

    def classifier_labels(self, x) -> np.ndarray:
        return np.argmax(self.classifier_scores(x), axis=1).astype(np.int64)

    def rejection_scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.score_kind == "gap":
            scores = self.model.forward(x)
            return scores[:, -1] - scores[:, : self.num_classes].max(axis=1)
        if self.score_kind == "defer_head":
            return self.model.forward(x)[:, -1]
        if self.score_kind == "confidence":
            p_h = _sigmoid(self.aux_model.forward(x)[:, 0])
            return p_h - _softmax(self.classifier_scores(x)).max(axis=1)
        if self.score_kind == "selective":
            return -_softmax(self.classifier_scores(x)).max(axis=1)
        if self.score_kind == "triage":
            return self.aux_model.forward(x)[:, 0]
        raise ValueError(f"unknown score kind {self.score_kind!r}")

    def decide(self, x):
        """(deferred, classifier_labels) at this system's threshold."""
        return self.rejection_scores(x) >= self.tau, self.classifier_labels(x)

    def with_tau(self, tau: float) -> "TrainedSystem":
        return replace(self, tau=float(tau))


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def system_accuracy(deferred, clf_labels, dataset: DeferDataset) -> float:
    """Empirical accuracy of the combined system decisions on a dataset."""
    correct = np.where(np.asarray(deferred), dataset.human_correct,
                       np.asarray(clf_labels) == dataset.labels)
    return float(np.mean(correct))


class _Adam:
    def __init__(self, size, config: TrainConfig):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.cfg = config

    def step(self, params, grad):
        c = self.cfg
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad * grad
        mh = self.m / (1 - c.beta1**self.t)
        vh = self.v / (1 - c.beta2**self.t)
        return params - c.learning_rate * mh / (np.sqrt(vh) + c.eps)


def _run_training(model: ScoreModel, dataset: DeferDataset, config: TrainConfig,
                  loss_fn, val_metric, rng, train_metric=None):
    """Generic epoch loop: minibatch Adam plus best-epoch snapshotting.

    ``loss_fn(scores, idx) -> (values, score_grads)`` evaluates the training
    loss on a batch given row indices; ``val_metric(model) -> float`` scores
    a snapshot after each epoch (higher is better). ``train_metric`` is an
    optional per-epoch diagnostic whose maximum is also returned.
    """
    n = dataset.n
    x = dataset.features
    adam = _Adam(model.params.size, config)
    batch = n if config.batch_size in (0, None) else min(config.batch_size, n)
    best_metric = -np.inf
    best_train_metric = -np.inf
    best_params = model.params.copy()
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = np.arange(n) if batch == n else rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            scores = model.forward(x[idx])
            if not np.all(np.isfinite(scores)):
                raise TrainingDiverged(f"non-finite scores at epoch {epoch}")
            vals, grads = loss_fn(scores, idx)
            mean_loss = float(np.mean(vals))
            if not np.isfinite(mean_loss):
                raise TrainingDiverged(
                    f"non-finite loss {mean_loss!r} at epoch {epoch}"
                )
            pgrad = model.backward(x[idx], grads / len(idx))
            model.params = adam.step(model.params, pgrad)
            if not np.all(np.isfinite(model.params)):
                raise TrainingDiverged(f"non-finite parameters at epoch {epoch}")
        metric = val_metric(model)
        if metric > best_metric:
            best_metric = metric
            best_params = model.params.copy()
            best_epoch = epoch
        if train_metric is not None:
            best_train_metric = max(best_train_metric, train_metric(model))
    model.params = best_params
    return best_metric, best_epoch, best_train_metric


def train_surrogate(dataset: DeferDataset, val_dataset: DeferDataset,
                    config: TrainConfig) -> TrainedSystem:
    """Train a joint C+1-head model on the configured surrogate loss.

    Tracks validation system accuracy at tau = 0 after every epoch and
    returns the best epoch's snapshot (ties resolve to the earliest epoch).
    """
    if config.loss not in LOSSES:
        raise ValueError(f"unknown loss id {config.loss!r}")
    if dataset.d != val_dataset.d or dataset.num_classes != val_dataset.num_classes:
        raise ValueError("train and validation datasets must share d and C")
    c = dataset.num_classes
    rng = np.random.default_rng(config.seed)
    arch = "one_hidden" if config.hidden_units > 0 else "linear"
    model = ScoreModel.initialize(arch, dataset.d, c + 1, config.hidden_units, rng)
    batch_loss = LOSSES[config.loss]
    y = dataset.labels
    hc = dataset.human_correct
    score_kind = "defer_head" if config.loss in ("rs2", "moe") else "gap"

    def loss_fn(scores, idx):
        return batch_loss(scores, y[idx], hc[idx], config.alpha)

    def _system_acc(m, ds):
        scores = m.forward(ds.features)
        labels = np.argmax(scores[:, :c], axis=1)
        if score_kind == "gap":
            defer = scores[:, -1] - scores[:, :c].max(axis=1) >= 0.0
        else:
            defer = scores[:, -1] >= 0.0
        return system_accuracy(defer, labels, ds)

    best_acc, best_epoch, best_train = _run_training(
        model, dataset, config, loss_fn, lambda m: _system_acc(m, val_dataset), rng,
        train_metric=lambda m: _system_acc(m, dataset),
    )
    return TrainedSystem(
        model=model, num_classes=c, tau=0.0, method=config.loss,
        score_kind=score_kind, alpha=config.alpha, best_val_accuracy=best_acc,
        best_epoch=best_epoch, min_train_error=1.0 - best_train,
    )


def search_alpha(dataset: DeferDataset, val_dataset: DeferDataset,
                 config: TrainConfig) -> TrainedSystem:
    """Train one system per alpha in the grid; keep the best validation
    system accuracy, ties resolving to the smaller alpha."""
    grid = sorted(config.alpha_grid)
    if not grid:
        raise ValueError("alpha_grid must be nonempty")
    best = None
    lowest_train = None
    for alpha in grid:
        system = train_surrogate(dataset, val_dataset, replace(config, alpha=alpha))
        if lowest_train is None or system.min_train_error < lowest_train:
            lowest_train = system.min_train_error
        if best is None or system.best_val_accuracy > best.best_val_accuracy:
            best = system
    # the search procedure's reached-train-error spans every alpha run
    return replace(best, min_train_error=lowest_train)


def _threshold_candidates(scores: np.ndarray) -> np.ndarray:
    """Midpoints of sorted distinct scores plus -inf/+inf sentinels."""
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0 if distinct.size > 1 else np.empty(0)
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _line_search_threshold(scores, human_correct, clf_correct) -> float:
    """Threshold on rejection scores maximizing system accuracy.

    Ties pick the candidate closest to zero, then the smaller one.
    """
    best = None  # maximize (accuracy, -|tau|, -tau) lexicographically
    best_tau = 0.0
    for tau in _threshold_candidates(np.asarray(scores, dtype=float)):
        acc = float(np.mean(np.where(scores >= tau, human_correct, clf_correct)))
        key = (acc, -abs(tau), -tau)
        if best is None or key > best:
            best = key
            best_tau = float(tau)
    return best_tau


def fit_tau(system: TrainedSystem, val_dataset: DeferDataset) -> float:
    """Line-search the rejection threshold on a validation set.

    Candidates are midpoints of the sorted distinct rejection scores plus
    -inf (defer everything) and +inf (never defer) sentinels.
    """
    if val_dataset.n < 1:
        raise ValueError("validation set must be nonempty")
    scores = system.rejection_scores(val_dataset.features)
    clf_ok = system.classifier_labels(val_dataset.features) == val_dataset.labels
    return _line_search_threshold(scores, val_dataset.human_correct, clf_ok)


# ---------------------------------------------------------------------------
# plain classifier / auxiliary heads used by the two-stage baselines
# ---------------------------------------------------------------------------


def _ce_batch(scores, y):
    z = scores - scores.max(axis=1, keepdims=True)
    logq = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(len(y))
    vals = -logq[rows, y]
    grads = np.exp(logq)
    grads[rows, y] -= 1.0
    return vals, grads


def _logistic_batch(logits, targets01):
    z = logits[:, 0]
    t = targets01.astype(float)
    vals = np.where(z > 0, z + np.log1p(np.exp(-z)), np.log1p(np.exp(z))) - t * z
    grads = (_sigmoid(z) - t)[:, None]
    return vals, grads


def _train_classifier(dataset, val_dataset, config):
    """Cross-entropy classifier head; tracks validation class accuracy."""
    rng = np.random.default_rng(config.seed)
    arch = "one_hidden" if config.hidden_units > 0 else "linear"
    model = ScoreModel.initialize(arch, dataset.d, dataset.num_classes,
                                  config.hidden_units, rng)
    y = dataset.labels

    def loss_fn(scores, idx):
        return _ce_batch(scores, y[idx])

    def val_metric(m):
        pred = np.argmax(m.forward(val_dataset.features), axis=1)
        return float(np.mean(pred == val_dataset.labels))

    _run_training(model, dataset, config, loss_fn, val_metric, rng)
    return model


def _train_binary_head(dataset, targets01, val_dataset, val_targets01, config, seed_shift=1):
    """Single-logit head with logistic loss; tracks validation accuracy."""
    rng = np.random.default_rng(config.seed + seed_shift)
    arch = "one_hidden" if config.hidden_units > 0 else "linear"
    model = ScoreModel.initialize(arch, dataset.d, 1, config.hidden_units, rng)

    def loss_fn(scores, idx):
        return _logistic_batch(scores, targets01[idx])

    def val_metric(m):
        pred = m.forward(val_dataset.features)[:, 0] >= 0
        return float(np.mean(pred == val_targets01))

    _run_training(model, dataset, config, loss_fn, val_metric, rng)
    return model


def train_compare_confidence(dataset, val_dataset, config: TrainConfig) -> TrainedSystem:
    """Classifier on all data plus a human-correctness model; defer when the
    predicted human-correctness probability beats the classifier's max
    softmax probability."""
    clf = _train_classifier(dataset, val_dataset, config)
    hum = _train_binary_head(
        dataset, dataset.human_correct, val_dataset, val_dataset.human_correct, config
    )
    system = TrainedSystem(model=clf, num_classes=dataset.num_classes, tau=0.0,
                           aux_model=hum, method="confidence", score_kind="confidence")
    defer, labels = system.decide(val_dataset.features)
    return replace(system, best_val_accuracy=system_accuracy(defer, labels, val_dataset))


def train_selective_prediction(dataset, val_dataset, config: TrainConfig) -> TrainedSystem:
    """Classifier on all data; defer when its confidence falls below a
    threshold line-searched on the validation set."""
    clf = _train_classifier(dataset, val_dataset, config)
    system = TrainedSystem(model=clf, num_classes=dataset.num_classes, tau=0.0,
                           method="selective", score_kind="selective")
    tau = fit_tau(system, val_dataset)
    system = system.with_tau(tau)
    defer, labels = system.decide(val_dataset.features)
    return replace(system, best_val_accuracy=system_accuracy(defer, labels, val_dataset))


def train_differentiable_triage(dataset, val_dataset, config: TrainConfig) -> TrainedSystem:
    """Two-stage triage: each epoch updates the classifier only on points
    where its current 0-1 loss is no worse than the human's, then fits a
    rejector to predict which of the two errs less per point (ties keep the
    classifier)."""
    rng = np.random.default_rng(config.seed)
    arch = "one_hidden" if config.hidden_units > 0 else "linear"
    model = ScoreModel.initialize(arch, dataset.d, dataset.num_classes,
                                  config.hidden_units, rng)
    y = dataset.labels
    hum01 = (~dataset.human_correct).astype(float)

    def loss_fn(scores, idx):
        vals, grads = _ce_batch(scores, y[idx])
        clf01 = (np.argmax(scores, axis=1) != y[idx]).astype(float)
        keep = (clf01 <= hum01[idx]).astype(float)
        return vals * keep, grads * keep[:, None]

    def val_metric(m):
        pred = np.argmax(m.forward(val_dataset.features), axis=1)
        return float(np.mean(pred == val_dataset.labels))

    _run_training(model, dataset, config, loss_fn, val_metric, rng)

    pred = np.argmax(model.forward(dataset.features), axis=1)
    clf01 = (pred != y).astype(float)
    defer_target = hum01 < clf01  # ties mean do not defer
    val_pred = np.argmax(model.forward(val_dataset.features), axis=1)
    val_target = (~val_dataset.human_correct).astype(float) < (val_pred != val_dataset.labels)
    rejector = _train_binary_head(dataset, defer_target, val_dataset, val_target, config)
    system = TrainedSystem(model=model, num_classes=dataset.num_classes, tau=0.0,
                           aux_model=rejector, method="triage", score_kind="triage")
    defer, labels = system.decide(val_dataset.features)
    return replace(system, best_val_accuracy=system_accuracy(defer, labels, val_dataset))


METHODS = ("rs", "rs2", "ce", "ova", "moe", "confidence", "selective", "triage")


def train_method(method: str, dataset, val_dataset, config: TrainConfig) -> TrainedSystem:
    """Dispatch a method id to its trainer, with alpha search where the
    method calls for it. Methods: rs, rs2, ce, ova, moe, confidence,
    selective, triage."""
    if method in ("rs", "ce"):
        if config.alpha is not None:
            grid = (config.alpha,)
        elif method == "ce" and tuple(config.alpha_grid) == TrainConfig().alpha_grid:
            grid = (0.0, 0.1, 0.5, 1.0)  # the usual tuning grid for this surrogate
        else:
            grid = tuple(config.alpha_grid)
        return search_alpha(dataset, val_dataset,
                            replace(config, loss=method, alpha_grid=grid))
    if method in ("rs2", "ova", "moe"):
        return train_surrogate(dataset, val_dataset, replace(config, loss=method))
    if method == "confidence":
        return train_compare_confidence(dataset, val_dataset, config)
    if method == "selective":
        return train_selective_prediction(dataset, val_dataset, config)
    if method == "triage":
        return train_differentiable_triage(dataset, val_dataset, config)
    raise ValueError(f"unknown method id {method!r}")
