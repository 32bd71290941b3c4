"""Attempt-type classifier: accomplice / bona fide / criminal posteriors.

The classifier is an RBF-kernel SVM over the cosine similarity between the
document and live embeddings, with fold-fitted pairwise sigmoid calibration
so it emits a proper probability triple. Those probabilities weight the two
detector scores during fusion.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field

import numpy as np
from sklearn.svm import SVC

from .manifest import AttemptLabel
from .nets import ModelError

PROB_TOL = 1e-9

# Feature modes: the default scalar cosine, or cosine plus the raw
# embedding difference (optional, off by default).
FEATURE_MODES = ("cosine", "cosine_diff")


@dataclass(frozen=True)
class AttemptProbabilities:
    """Posterior triple (accomplice, bona fide, criminal); sums to 1."""

    p_accomplice: float
    p_bona_fide: float
    p_criminal: float

    def __post_init__(self):
        vals = (self.p_accomplice, self.p_bona_fide, self.p_criminal)
        if any(not np.isfinite(v) or v < -PROB_TOL or v > 1.0 + PROB_TOL for v in vals):
            raise ModelError(f"probabilities out of range: {vals}")
        if abs(sum(vals) - 1.0) > PROB_TOL:
            raise ModelError(f"probabilities do not sum to 1: {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_accomplice, self.p_bona_fide, self.p_criminal])

    def argmax_label(self) -> AttemptLabel:
        order = (AttemptLabel.ACCOMPLICE, AttemptLabel.BONA_FIDE,
                 AttemptLabel.CRIMINAL)
        return order[int(np.argmax(self.as_array()))]

    @classmethod
    def one_hot(cls, label: AttemptLabel) -> "AttemptProbabilities":
        return cls(
            p_accomplice=1.0 if label is AttemptLabel.ACCOMPLICE else 0.0,
            p_bona_fide=1.0 if label is AttemptLabel.BONA_FIDE else 0.0,
            p_criminal=1.0 if label is AttemptLabel.CRIMINAL else 0.0,
        )


@dataclass
class ACHyperparams:
    c: float = 1.0
    gamma: float | str = "scale"
    class_weighting: bool = False
    features: str = "cosine"

    def __post_init__(self):
        if self.features not in FEATURE_MODES:
            raise ModelError(f"unknown AC feature mode {self.features!r}")


class ACModel:
    """Trained three-class attempt classifier with calibrated posteriors."""

    input_spec = "cosine similarity scalar"

    def __init__(self, svc: SVC, feature_mode: str, seed: int):
        self.svc = svc
        self.feature_mode = feature_mode
        self.seed = seed
        self._columns = {label: i for i, label in enumerate(svc.classes_)}

    def to_bytes(self) -> bytes:
        return pickle.dumps({"svc": self.svc, "feature_mode": self.feature_mode,
                             "seed": self.seed})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ACModel":
        state = pickle.loads(blob)
        return cls(svc=state["svc"], feature_mode=state["feature_mode"],
                   seed=state["seed"])


def _feature_matrix(model_mode: str, cosines: np.ndarray,
                    diffs: np.ndarray | None) -> np.ndarray:
    cosines = np.asarray(cosines, dtype=np.float64).reshape(-1, 1)
    if model_mode == "cosine":
        return cosines
    if diffs is None:
        raise ModelError("feature mode 'cosine_diff' needs difference vectors")
    return np.concatenate([cosines, np.asarray(diffs, dtype=np.float64)], axis=1)


def train_ac(cosines, labels, hyperparams: ACHyperparams | None = None,
             seed: int = 0, diffs=None) -> ACModel:
    """Fit the attempt classifier on (cosine, label) training pairs.

    Every class must be present. Training is deterministic for a given seed
    (the probability calibration's internal folds are seeded).
    """
    hp = hyperparams or ACHyperparams()
    labels = np.asarray([
        label.value if isinstance(label, AttemptLabel) else str(label)
        for label in labels
    ])
    present = set(labels)
    missing = {l.value for l in AttemptLabel} - present
    if missing:
        raise ModelError(f"training data missing class(es): {sorted(missing)}")
    x = _feature_matrix(hp.features, cosines, diffs)
    if x.shape[0] != labels.shape[0]:
        raise ModelError("cosines and labels length mismatch")
    svc = SVC(
        kernel="rbf",
        C=hp.c,
        gamma=hp.gamma,
        probability=True,
        class_weight="balanced" if hp.class_weighting else None,
        random_state=seed,
    )
    svc.fit(x, labels)
    return ACModel(svc=svc, feature_mode=hp.features, seed=seed)


def classify_attempt(model: ACModel, cosine: float,
                     diff=None) -> AttemptProbabilities:
    """Posterior triple for one attempt given its cosine similarity."""
    if not np.isfinite(cosine) or abs(cosine) > 1.0 + PROB_TOL:
        raise ModelError(f"cosine similarity out of [-1, 1]: {cosine}")
    cosine = float(np.clip(cosine, -1.0, 1.0))
    x = _feature_matrix(model.feature_mode, np.array([cosine]),
                        None if diff is None else np.asarray(diff)[None, :])
    row = model.svc.predict_proba(x)[0]
    by_label = {label: float(row[i]) for label, i in model._columns.items()}
    return AttemptProbabilities(
        p_accomplice=by_label[AttemptLabel.ACCOMPLICE.value],
        p_bona_fide=by_label[AttemptLabel.BONA_FIDE.value],
        p_criminal=by_label[AttemptLabel.CRIMINAL.value],
    )


def classification_report(model: ACModel, cosines, labels,
                          diffs=None) -> dict:
    """Confusion matrix, accuracy, and macro F1 over labelled attempts."""
    order = [AttemptLabel.ACCOMPLICE.value, AttemptLabel.BONA_FIDE.value,
             AttemptLabel.CRIMINAL.value]
    x = _feature_matrix(model.feature_mode, np.asarray(cosines), diffs)
    predicted = model.svc.predict(x)
    truth = np.asarray([
        label.value if isinstance(label, AttemptLabel) else str(label)
        for label in labels
    ])
    idx = {name: i for i, name in enumerate(order)}
    confusion = np.zeros((3, 3), dtype=int)
    for t, p in zip(truth, predicted):
        confusion[idx[t], idx[p]] += 1
    accuracy = float(np.trace(confusion) / max(confusion.sum(), 1))
    f1s = []
    for i in range(3):
        tp = confusion[i, i]
        fp = confusion[:, i].sum() - tp
        fn = confusion[i, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return {
        "labels": order,
        "confusion": confusion.tolist(),
        "accuracy": accuracy,
        "f1_macro": float(np.mean(f1s)),
    }
