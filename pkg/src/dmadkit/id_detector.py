"""Identity-difference morph detector.

Scores a pair from the signed difference of the two identity embeddings
(document minus live, no normalization) through an RBF-kernel SVM with
calibrated probability output. Higher scores mean "more likely morphed".
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass

import numpy as np
from sklearn.svm import SVC

from .embeddings import Embedding, raw_diff
from .nets import ModelError


@dataclass
class IdHyperparams:
    c: float = 1.0
    gamma: float | str = "scale"


class IdModel:
    """Trained binary morph scorer over embedding differences."""

    def __init__(self, svc: SVC, dimension: int, seed: int):
        self.svc = svc
        self.dimension = dimension
        self.seed = seed
        self._morph_col = int(np.flatnonzero(svc.classes_ == 1)[0])

    def to_bytes(self) -> bytes:
        return pickle.dumps({"svc": self.svc, "dimension": self.dimension,
                             "seed": self.seed})

    @classmethod
    def from_bytes(cls, blob: bytes) -> "IdModel":
        state = pickle.loads(blob)
        return cls(svc=state["svc"], dimension=state["dimension"],
                   seed=state["seed"])


def train_id(doc_embeddings, live_embeddings, is_morph,
             hyperparams: IdHyperparams | None = None, seed: int = 0) -> IdModel:
    """Fit the detector on difference vectors (document minus live)."""
    hp = hyperparams or IdHyperparams()
    docs = np.asarray(doc_embeddings, dtype=np.float64)
    lives = np.asarray(live_embeddings, dtype=np.float64)
    y = np.asarray(is_morph).astype(int)
    if docs.shape != lives.shape or docs.ndim != 2:
        raise ModelError(
            f"document/live embedding shapes differ: {docs.shape} vs {lives.shape}")
    if docs.shape[0] != y.shape[0]:
        raise ModelError("embeddings and labels length mismatch")
    if len(np.unique(y)) < 2:
        raise ModelError("training data must contain both morph and bona fide pairs")
    svc = SVC(kernel="rbf", C=hp.c, gamma=hp.gamma, probability=True,
              random_state=seed)
    svc.fit(docs - lives, y)
    return IdModel(svc=svc, dimension=docs.shape[1], seed=seed)


def score_id(model: IdModel, doc_emb: Embedding, live_emb: Embedding) -> float:
    """Morph probability in [0, 1] for one pair."""
    diff = raw_diff(doc_emb, live_emb)
    return score_id_diff(model, diff)


def score_id_diff(model: IdModel, diff: np.ndarray) -> float:
    diff = np.asarray(diff, dtype=np.float64)
    if diff.shape != (model.dimension,):
        raise ModelError(
            f"difference vector has shape {diff.shape}, expected ({model.dimension},)")
    return float(model.svc.predict_proba(diff[None, :])[0, model._morph_col])
