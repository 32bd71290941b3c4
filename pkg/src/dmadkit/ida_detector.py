"""Identity+artifact morph detector.

Combines the per-vector min-max normalized embedding difference, the cosine
similarity, and a document-only artifact feature into one vector scored by a
small feed-forward network (hidden layers 250/125/64, ReLU, sigmoid output).
The artifact feature comes from a pluggable extractor:

* ``PassthroughExtractor`` returns pre-computed artifact vectors (the
  synthetic-benchmark path);
* ``ImageAdapterExtractor`` wraps a frozen pretrained image network exposed
  as a callable (the full-scale path);
* ``TrainableConvExtractor`` is a tiny convolutional network for small
  images, fine-tuned jointly with the head by plain SGD.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embeddings import EmbeddingCache, FaceCrop, FeatureVector
from .nets import (Adam, EarlyStopper, FeedForwardNet, ModelError, PlainSGD,
                   TinyConvNet)


class ArtifactExtractor(ABC):
    """Extracts a fixed-dimension artifact feature from a document source."""

    extractor_id: str
    output_dim: int
    trainable: bool = False

    @abstractmethod
    def extract(self, doc) -> np.ndarray:
        ...

    def extract_batch(self, docs) -> np.ndarray:
        return np.stack([self.extract(d) for d in docs])


class PassthroughExtractor(ArtifactExtractor):
    """Returns synthetic artifact vectors verbatim.

    Accepts either a 1-D vector or a cache reference string (resolved
    against the configured cache under this extractor's id).
    """

    def __init__(self, output_dim: int, cache: EmbeddingCache | None = None,
                 extractor_id: str = "passthrough"):
        self.extractor_id = extractor_id
        self.output_dim = output_dim
        self.trainable = False
        self._cache = cache

    def extract(self, doc) -> np.ndarray:
        if isinstance(doc, str):
            if self._cache is None:
                raise ModelError("passthrough extractor has no cache to resolve refs")
            vec = self._cache.get(self.extractor_id, doc)
            if vec is None:
                raise ModelError(f"no artifact vector stored for ref {doc!r}")
        elif isinstance(doc, FaceCrop) or (
                isinstance(doc, np.ndarray) and doc.ndim != 1):
            raise ModelError(
                "passthrough extractor expects a vector, got image data")
        else:
            vec = np.asarray(doc, dtype=np.float64)
        if vec.shape != (self.output_dim,):
            raise ModelError(
                f"artifact vector has shape {vec.shape}, expected ({self.output_dim},)")
        return vec


class ImageAdapterExtractor(ArtifactExtractor):
    """Adapter for a frozen pretrained image network (callable pixels->vector)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], output_dim: int,
                 extractor_id: str = "image-adapter"):
        self.extractor_id = extractor_id
        self.output_dim = output_dim
        self.trainable = False
        self._fn = fn

    def extract(self, doc) -> np.ndarray:
        pixels = _require_image(doc, self.extractor_id)
        vec = np.asarray(self._fn(pixels), dtype=np.float64)
        if vec.shape != (self.output_dim,):
            raise ModelError(
                f"adapter returned shape {vec.shape}, expected ({self.output_dim},)")
        return vec


class TrainableConvExtractor(ArtifactExtractor):
    """Small convolutional extractor for tiny document crops."""

    def __init__(self, output_dim: int, seed: int = 0,
                 extractor_id: str = "tiny-conv"):
        self.extractor_id = extractor_id
        self.output_dim = output_dim
        self.trainable = True
        self.net = TinyConvNet(out_dim=output_dim, seed=seed)

    def extract(self, doc) -> np.ndarray:
        pixels = _require_image(doc, self.extractor_id)
        return self.net.forward(pixels[None])[0]

    def extract_batch(self, docs) -> np.ndarray:
        pixels = np.stack([_require_image(d, self.extractor_id) for d in docs])
        return self.net.forward(pixels)


def _require_image(doc, extractor_id: str) -> np.ndarray:
    if isinstance(doc, FaceCrop):
        return np.asarray(doc.pixels)
    arr = np.asarray(doc)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ModelError(
            f"extractor {extractor_id!r} expects an HxWx3 image, "
            f"got array of shape {arr.shape}")
    return arr


def extract_artifact_features(extractor: ArtifactExtractor, doc) -> np.ndarray:
    """Artifact feature for one document source (vector, ref, or crop)."""
    return extractor.extract(doc)


@dataclass
class IdAHyperparams:
    hidden: tuple[int, ...] = (250, 125, 64)
    learning_rate: float = 1e-5
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 1e-4
    extractor_learning_rate: float = 1e-3


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    stopped_epoch: int = -1
    best_epoch: int = -1


class IdAModel:
    """Trained identity+artifact scorer (head plus optional extractor)."""

    def __init__(self, net: FeedForwardNet, extractor: ArtifactExtractor | None,
                 input_dim: int, seed: int, log: TrainingLog | None = None):
        self.net = net
        self.extractor = extractor
        self.input_dim = input_dim
        self.seed = seed
        self.log = log or TrainingLog()

    @property
    def architecture_hash(self) -> str:
        return self.net.architecture_hash()


def _as_matrix(features, input_dim: int | None = None) -> np.ndarray:
    rows = []
    for f in features:
        rows.append(f.as_array() if isinstance(f, FeatureVector) else np.asarray(f))
    x = np.asarray(rows, dtype=np.float64)
    if input_dim is not None and x.shape[1] != input_dim:
        raise ModelError(f"feature length {x.shape[1]} != expected {input_dim}")
    return x


def train_ida(features, is_morph, hyperparams: IdAHyperparams | None = None,
              seed: int = 0, val_features=None, val_is_morph=None,
              extractor: ArtifactExtractor | None = None,
              train_docs=None, val_docs=None) -> IdAModel:
    """Train the scorer head (and fine-tune a trainable extractor).

    ``features`` are full concatenated vectors, or — when a trainable
    extractor plus ``train_docs`` are given — the identity parts only
    (difference + cosine), with artifact features recomputed per batch so
    extractor gradients flow. Early stopping monitors validation loss
    (training loss when no validation set is given).
    """
    hp = hyperparams or IdAHyperparams()
    y = np.asarray(is_morph).astype(np.float64)
    if len(np.unique(y)) < 2:
        raise ModelError("training data must contain both morph and bona fide pairs")

    joint = extractor is not None and extractor.trainable and train_docs is not None
    if joint:
        ident = _as_matrix(features)
        input_dim = ident.shape[1] + extractor.output_dim
    else:
        x = _as_matrix(features)
        input_dim = x.shape[1]
    if y.shape[0] != (ident.shape[0] if joint else x.shape[0]):
        raise ModelError("features and labels length mismatch")

    net = FeedForwardNet(input_dim=input_dim, hidden=tuple(hp.hidden), seed=seed)
    adam = Adam(net.weights + net.biases, lr=hp.learning_rate)
    sgd = PlainSGD(lr=hp.extractor_learning_rate) if joint else None
    stopper = EarlyStopper(patience=hp.patience, min_delta=hp.min_delta)
    log = TrainingLog()
    rng = np.random.default_rng(seed)

    def full_matrix(identity_rows, docs):
        arts = extractor.extract_batch(docs)
        return np.concatenate([identity_rows, arts], axis=1)

    if val_features is not None:
        if joint:
            val_ident = _as_matrix(val_features)
            val_y = np.asarray(val_is_morph).astype(np.float64)
        else:
            val_x = _as_matrix(val_features, input_dim)
            val_y = np.asarray(val_is_morph).astype(np.float64)

    best_snapshot = None
    best_extractor = None
    n = y.shape[0]
    for epoch in range(hp.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, hp.batch_size):
            idx = order[start:start + hp.batch_size]
            if joint:
                pixels = np.stack([
                    _require_image(train_docs[i], extractor.extractor_id)
                    for i in idx])
                arts = extractor.net.forward(pixels, keep=True)
                batch_x = np.concatenate([ident[idx], arts], axis=1)
            else:
                batch_x = x[idx]
            loss, w_grads, b_grads, input_grad = net.loss_and_grads(batch_x, y[idx])
            if not np.isfinite(loss):
                raise ModelError(f"non-finite loss at epoch {epoch}")
            adam.step(net.weights + net.biases, w_grads + b_grads)
            if joint:
                gart = input_grad[:, -extractor.output_dim:]
                conv_grads = extractor.net.backward(gart)
                sgd.step(extractor.net.params(), conv_grads)
            epoch_loss += loss * len(idx)
        log.train_loss.append(epoch_loss / n)

        if val_features is not None:
            vx = full_matrix(val_ident, val_docs) if joint else val_x
            monitored = _bce(net, vx, val_y)
            log.val_loss.append(monitored)
        else:
            monitored = log.train_loss[-1]
        stop = stopper.update(epoch, monitored)
        if stopper.wait == 0:
            best_snapshot = net.snapshot()
            if joint:
                best_extractor = {k: v.copy()
                                  for k, v in extractor.net.named_tensors().items()}
        if stop:
            log.stopped_epoch = epoch
            break
    log.best_epoch = stopper.best_epoch
    if best_snapshot is not None:
        net.restore(best_snapshot)
        if joint and best_extractor is not None:
            extractor.net.load_tensors(best_extractor)
    return IdAModel(net=net, extractor=extractor, input_dim=input_dim,
                    seed=seed, log=log)


def _bce(net: FeedForwardNet, x: np.ndarray, y: np.ndarray) -> float:
    from .nets import bce_from_logits
    return bce_from_logits(np.atleast_1d(net.logits(x)), y)


def score_ida(model: IdAModel, features) -> float:
    """Morph probability strictly inside (0, 1) for one feature vector."""
    vec = features.as_array() if isinstance(features, FeatureVector) \
        else np.asarray(features, dtype=np.float64)
    if vec.shape != (model.input_dim,):
        raise ModelError(
            f"feature vector has shape {vec.shape}, expected ({model.input_dim},)")
    return float(model.net.predict(vec))


def score_ida_batch(model: IdAModel, feature_matrix: np.ndarray) -> np.ndarray:
    x = np.asarray(feature_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ModelError(
            f"feature matrix has shape {x.shape}, expected (*, {model.input_dim})")
    return model.net.predict(x)
