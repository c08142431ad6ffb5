"""Data model and exact 0-1 semantics for human-AI deferral systems.

A deferral system pairs a classifier with a rejector. On each input the
rejector decides who produces the final label: the classifier, or the human
whose prediction was recorded alongside the ground truth. The system loss is
the plain 0-1 error of whoever ended up predicting.

Conventions used throughout the package:

* features are augmented with a constant-1 bias coordinate appended LAST,
  so weight vectors have length d+1 and the final entry is the bias;
* a rejector defers exactly when ``R . x_tilde >= 0`` (ties defer);
* a binary classifier predicts 1 exactly when ``M . x_tilde > 0``;
* multiclass argmax ties break toward the lowest class id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "DeferDataset",
    "HalfspacePair",
    "Prediction",
    "augment",
    "predict_halfspace",
    "pair_decisions",
    "system_loss_01",
    "halfspace_system_loss",
    "save_dataset_csv",
    "load_dataset_csv",
]


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DeferDataset:
    """Features, ground-truth labels, and human predictions for one task.

    features : (n, d) float array, caller-scaled
    labels, human_preds : (n,) integer arrays with values in [0, num_classes)
    num_classes : C >= 2
    """

    features: np.ndarray
    labels: np.ndarray
    human_preds: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.features, dtype=float))
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        n, d = x.shape
        if n < 1 or d < 1:
            raise ValueError("need n >= 1 samples and d >= 1 features")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or Inf")
        y = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        h = np.ascontiguousarray(np.asarray(self.human_preds, dtype=np.int64))
        if y.shape != (n,) or h.shape != (n,):
            raise ValueError("labels and human_preds must have shape (n,)")
        c = int(self.num_classes)
        if c < 2:
            raise ValueError("num_classes must be >= 2")
        for name, v in (("labels", y), ("human_preds", h)):
            if v.min() < 0 or v.max() >= c:
                raise ValueError(f"{name} must lie in [0, {c})")
        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "human_preds", _readonly(h))
        object.__setattr__(self, "num_classes", c)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def human_correct(self) -> np.ndarray:
        """Boolean mask of points where the recorded human prediction is right."""
        return self.human_preds == self.labels

    def subset(self, idx) -> "DeferDataset":
        """Row subset with the same number of classes."""
        idx = np.asarray(idx)
        return DeferDataset(
            self.features[idx], self.labels[idx], self.human_preds[idx], self.num_classes
        )


@dataclass(frozen=True)
class HalfspacePair:
    """A classifier/rejector weight pair acting on bias-augmented features.

    For binary tasks ``classifier_weights`` is a single length d+1 vector and
    the label is 1 iff its activation is positive. For multiclass it is a
    (C, d+1) matrix and the label is the argmax row. ``rejector_weights`` is
    always one length d+1 vector; the pair defers iff its activation is >= 0.
    """

    classifier_weights: np.ndarray
    rejector_weights: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.classifier_weights, dtype=float))
        r = np.ascontiguousarray(np.asarray(self.rejector_weights, dtype=float))
        if m.ndim not in (1, 2):
            raise ValueError("classifier_weights must be 1-D (binary) or 2-D (multiclass)")
        if m.ndim == 2 and m.shape[0] < 2:
            raise ValueError("multiclass classifier needs at least 2 weight rows")
        if r.ndim != 1:
            raise ValueError("rejector_weights must be 1-D")
        if m.shape[-1] != r.shape[0]:
            raise ValueError("classifier and rejector dimensions differ")
        if m.shape[-1] < 2:
            raise ValueError("weights must include a bias entry (length d+1 >= 2)")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(r))):
            raise ValueError("weights contain NaN or Inf")
        object.__setattr__(self, "classifier_weights", _readonly(m))
        object.__setattr__(self, "rejector_weights", _readonly(r))

    @property
    def dim(self) -> int:
        """Raw feature dimension d (weights have length d+1)."""
        return self.rejector_weights.shape[0] - 1

    @property
    def is_multiclass(self) -> bool:
        return self.classifier_weights.ndim == 2


@dataclass(frozen=True)
class Prediction:
    """Outcome of running a halfspace pair on one input.

    ``final_label`` equals the human prediction when deferred (None if no
    human prediction was supplied), otherwise the classifier label.
    """

    final_label: Optional[int]
    deferred: bool
    classifier_label: int
    rejection_score: float


def augment(x) -> np.ndarray:
    """Append the constant-1 bias coordinate to a vector or a stack of rows."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate([x, [1.0]])
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _classifier_labels(weights: np.ndarray, xt: np.ndarray) -> np.ndarray:
    if weights.ndim == 1:
        return (xt @ weights > 0.0).astype(np.int64)
    # np.argmax already breaks ties toward the lowest class id
    return np.argmax(xt @ weights.T, axis=1).astype(np.int64)


def pair_decisions(pair: HalfspacePair, features: np.ndarray):
    """Vectorized decisions of a pair on an (n, d) feature matrix.

    Returns ``(deferred, classifier_labels, rejection_scores)`` arrays.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != pair.dim:
        raise ValueError(f"expected (n, {pair.dim}) features")
    xt = augment(features)
    scores = xt @ pair.rejector_weights
    return scores >= 0.0, _classifier_labels(pair.classifier_weights, xt), scores


def predict_halfspace(pair: HalfspacePair, x, human_pred: Optional[int] = None) -> Prediction:
    """Run a halfspace pair on a single raw feature vector.

    Defers iff the rejector activation on the bias-augmented input is >= 0.
    The classifier label is the sign test for binary weights and the
    lowest-index argmax for multiclass weights.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != pair.dim:
        raise ValueError(f"expected a feature vector of dimension {pair.dim}")
    xt = augment(x)
    score = float(xt @ pair.rejector_weights)
    label = int(_classifier_labels(pair.classifier_weights, xt[None, :])[0])
    deferred = score >= 0.0
    final = (int(human_pred) if human_pred is not None else None) if deferred else label
    return Prediction(
        final_label=final, deferred=deferred, classifier_label=label, rejection_score=score
    )


def system_loss_01(dataset: DeferDataset, deferred, classifier_labels) -> float:
    """Exact empirical 0-1 loss of the human-AI system.

    Each point contributes 1/n when it is deferred and the human is wrong,
    or kept and the supplied classifier label is wrong.
    """
    deferred = np.asarray(deferred, dtype=bool)
    labels = np.asarray(classifier_labels, dtype=np.int64)
    if deferred.shape != (dataset.n,) or labels.shape != (dataset.n,):
        raise ValueError("decisions must have one entry per dataset point")
    human_err = dataset.human_preds != dataset.labels
    clf_err = labels != dataset.labels
    errs = np.where(deferred, human_err, clf_err)
    return float(np.count_nonzero(errs)) / dataset.n


def halfspace_system_loss(pair: HalfspacePair, dataset: DeferDataset) -> float:
    """0-1 system loss of a halfspace pair on a dataset."""
    deferred, labels, _ = pair_decisions(pair, dataset.features)
    return system_loss_01(dataset, deferred, labels)


# ---------------------------------------------------------------------------
# Dataset CSV interchange: header x0,...,x{d-1},y,h, one row per sample.
# ---------------------------------------------------------------------------


def save_dataset_csv(dataset: DeferDataset, path) -> None:
    """Write a dataset as CSV with header ``x0,...,x{d-1},y,h``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(dataset.d)] + ["y", "h"])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            writer.writerow(row + [int(dataset.labels[i]), int(dataset.human_preds[i])])


def load_dataset_csv(path, num_classes: Optional[int] = None) -> DeferDataset:
    """Load a dataset CSV, rejecting non-finite feature values.

    ``num_classes`` defaults to one more than the largest label or human
    prediction in the file. Parse failures report the offending line number.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: empty file") from None
        d = len(header) - 2
        expected = [f"x{j}" for j in range(d)] + ["y", "h"]
        if d < 1 or header != expected:
            raise ValueError(f"{path}: line 1: bad header, expected x0,...,x{{d-1}},y,h")
        feats, ys, hs = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ValueError(f"{path}: line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                x = [float(v) for v in row[:d]]
                y = int(row[d])
                h = int(row[d + 1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: unparseable value") from None
            if not all(np.isfinite(x)):
                raise ValueError(f"{path}: line {lineno}: non-finite feature value")
            feats.append(x)
            ys.append(y)
            hs.append(h)
    if not feats:
        raise ValueError(f"{path}: no data rows")
    ys = np.asarray(ys)
    hs = np.asarray(hs)
    if num_classes is None:
        num_classes = max(2, int(max(ys.max(), hs.max())) + 1)
    return DeferDataset(np.asarray(feats), ys, hs, num_classes)
