"""Embedding providers, the on-disk embedding cache, and feature combination.

Identity embeddings are fixed-dimension real vectors produced by a named
provider (a face-recognition backbone, or the synthetic store). All feature
combination used by the detector modules lives here: cosine similarity,
signed difference, per-vector min-max normalized difference, and the
ordered concatenation fed to the identity+artifact scorer.
"""

from __future__ import annotations

import json
import os
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .manifest import EMB_REF_PREFIX, AttemptPair


class EmbeddingError(Exception):
    """Raised for invalid embedding inputs (dimension, norm, finiteness)."""


class ProviderError(Exception):
    """Raised when an embedding provider cannot produce a vector."""


class NoFaceError(Exception):
    """Raised when the face-crop stage finds no face."""


@dataclass(frozen=True)
class Embedding:
    """A face-identity vector tagged with the provider that produced it."""

    values: np.ndarray
    provider_id: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise EmbeddingError(f"embedding must be 1-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise EmbeddingError("embedding has non-finite components")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class FaceCrop:
    """A face-detector crop (H x W x 3, 8-bit) with its source reference."""

    pixels: np.ndarray
    source_ref: str

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
            raise EmbeddingError(f"crop must be nonempty HxWx3, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)


# ---------------------------------------------------------------------------
# Face detection / cropping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Detection:
    box: tuple[int, int, int, int]  # x, y, w, h
    confidence: float


class FaceDetector(ABC):
    """Detector contract; implementations wrap an external face detector."""

    @abstractmethod
    def detect(self, image: np.ndarray) -> list[Detection]:
        ...


def crop_face(image: np.ndarray, source_ref: str,
              detector: FaceDetector | None = None) -> FaceCrop:
    """Crop the highest-confidence face, or pass through pre-cropped input.

    With ``detector=None`` the image is treated as already cropped and is
    returned unchanged.
    """
    image = np.asarray(image)
    if detector is None:
        return FaceCrop(pixels=image, source_ref=source_ref)
    detections = detector.detect(image)
    if not detections:
        raise NoFaceError(f"no face found in {source_ref!r}")
    best = max(detections, key=lambda d: d.confidence)
    x, y, w, h = best.box
    return FaceCrop(pixels=image[y:y + h, x:x + w], source_ref=source_ref)


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class EmbeddingProvider(ABC):
    """Produces identity embeddings of a fixed dimension.

    Deterministic providers must return the identical vector for the same
    crop on every call.
    """

    provider_id: str
    dimension: int
    deterministic: bool = True

    @abstractmethod
    def embed(self, crop: FaceCrop) -> np.ndarray:
        ...


class CallableProvider(EmbeddingProvider):
    """Adapter for an arbitrary backbone exposed as ``crop pixels -> vector``."""

    def __init__(self, provider_id: str, dimension: int,
                 fn: Callable[[np.ndarray], np.ndarray],
                 deterministic: bool = True):
        self.provider_id = provider_id
        self.dimension = dimension
        self.deterministic = deterministic
        self._fn = fn

    def embed(self, crop: FaceCrop) -> np.ndarray:
        try:
            vec = np.asarray(self._fn(crop.pixels), dtype=np.float64)
        except Exception as exc:
            raise ProviderError(f"provider {self.provider_id!r} failed: {exc}") from exc
        if vec.ndim != 1 or vec.shape[0] != self.dimension:
            raise ProviderError(
                f"provider {self.provider_id!r} returned shape {vec.shape}, "
                f"expected ({self.dimension},)"
            )
        return vec


class SyntheticProvider(EmbeddingProvider):
    """Cache-only provider for synthetic benchmarks: refs must be pre-stored."""

    def __init__(self, cache: "EmbeddingCache", dimension: int,
                 provider_id: str = "synthetic"):
        self.provider_id = provider_id
        self.dimension = dimension
        self.deterministic = True
        self._cache = cache

    def embed(self, crop: FaceCrop) -> np.ndarray:
        raise ProviderError(
            f"synthetic provider has no stored vector for {crop.source_ref!r}"
        )


# ---------------------------------------------------------------------------
# Cache: index.json + packed little-endian float32 vectors
# ---------------------------------------------------------------------------

class EmbeddingCache:
    """Disk-backed vector store keyed by (provider_id, source_ref).

    Layout: ``index.json`` mapping ``provider::ref`` to (byte offset, count)
    in ``vectors.bin``, which holds packed little-endian float32 values.
    Reads are safe from concurrent threads; writes are serialized and the
    index rewrite is atomic (temp file + rename).
    """

    INDEX_NAME = "index.json"
    DATA_NAME = "vectors.bin"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index_path = self.directory / self.INDEX_NAME
        self._data_path = self.directory / self.DATA_NAME
        self._lock = threading.Lock()
        self._index: dict[str, tuple[int, int]] = {}
        if self._index_path.exists():
            raw = json.loads(self._index_path.read_text(encoding="utf-8"))
            self._index = {k: (v[0], v[1]) for k, v in raw.get("entries", {}).items()}

    @staticmethod
    def _key(provider_id: str, source_ref: str) -> str:
        return f"{provider_id}::{source_ref}"

    def __contains__(self, key: tuple[str, str]) -> bool:
        return self._key(*key) in self._index

    def __len__(self) -> int:
        return len(self._index)

    def get(self, provider_id: str, source_ref: str) -> np.ndarray | None:
        entry = self._index.get(self._key(provider_id, source_ref))
        if entry is None:
            return None
        offset, count = entry
        with open(self._data_path, "rb") as fh:
            fh.seek(offset)
            buf = fh.read(count * 4)
        return np.frombuffer(buf, dtype="<f4").astype(np.float64)

    def put(self, provider_id: str, source_ref: str, vector: np.ndarray) -> None:
        data = np.ascontiguousarray(vector, dtype="<f4").tobytes()
        with self._lock:
            with open(self._data_path, "ab") as fh:
                offset = fh.tell()
                fh.write(data)
            self._index[self._key(provider_id, source_ref)] = (offset, len(data) // 4)

    def put_many(self, provider_id: str,
                 items: dict[str, np.ndarray]) -> None:
        for ref, vec in items.items():
            self.put(provider_id, ref, vec)
        self.sync()

    def sync(self) -> None:
        """Atomically persist the index."""
        with self._lock:
            payload = {
                "format": 1,
                "dtype": "<f4",
                "entries": {k: list(v) for k, v in sorted(self._index.items())},
            }
            tmp = self._index_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(payload, indent=1, sort_keys=True),
                           encoding="utf-8")
            os.replace(tmp, self._index_path)


def get_embedding(provider: EmbeddingProvider, source: FaceCrop | str,
                  cache: EmbeddingCache | None) -> Embedding:
    """Fetch or compute an embedding, caching by (provider_id, source_ref).

    ``source`` may be a crop (computed via the provider on a miss) or a bare
    cache reference string (must already be stored).
    """
    ref = source if isinstance(source, str) else source.source_ref
    if cache is not None:
        stored = cache.get(provider.provider_id, ref)
        if stored is not None:
            if stored.shape[0] != provider.dimension:
                raise ProviderError(
                    f"cached vector for {ref!r} has dimension {stored.shape[0]}, "
                    f"pipeline expects {provider.dimension}"
                )
            return Embedding(values=stored, provider_id=provider.provider_id)
    if isinstance(source, str):
        raise ProviderError(
            f"no cached vector for ref {ref!r} under provider {provider.provider_id!r}"
        )
    vec = provider.embed(source)
    if vec.shape[0] != provider.dimension:
        raise ProviderError(
            f"provider {provider.provider_id!r} returned dimension {vec.shape[0]}, "
            f"declared {provider.dimension}"
        )
    if cache is not None:
        cache.put(provider.provider_id, ref, vec)
        cache.sync()
        return Embedding(values=cache.get(provider.provider_id, ref),
                         provider_id=provider.provider_id)
    return Embedding(values=vec, provider_id=provider.provider_id)


# ---------------------------------------------------------------------------
# Feature combination
# ---------------------------------------------------------------------------

def _check_comparable(a: Embedding, b: Embedding) -> None:
    if a.dimension != b.dimension:
        raise EmbeddingError(
            f"dimension mismatch: {a.dimension} vs {b.dimension}")
    if a.provider_id != b.provider_id:
        raise EmbeddingError(
            f"provider mismatch: {a.provider_id!r} vs {b.provider_id!r}")


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Cosine of the angle between two embeddings, in [-1, 1]."""
    _check_comparable(a, b)
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine similarity undefined for zero-norm input")
    return float(np.dot(a.values, b.values) / (na * nb))


def raw_diff(a: Embedding, b: Embedding) -> np.ndarray:
    """Signed difference a - b (document minus live by pipeline convention)."""
    _check_comparable(a, b)
    return a.values - b.values


def diff_minmax(a: Embedding, b: Embedding) -> np.ndarray:
    """Difference a - b rescaled per-vector so min -> 0 and max -> 1.

    A constant difference (including a == b) maps to all-zeros rather than
    dividing by zero, keeping the output classifier-safe at that limit.
    """
    d = raw_diff(a, b)
    lo = d.min()
    hi = d.max()
    if hi == lo:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


@dataclass(frozen=True)
class FeatureVector:
    """Ordered [normalized difference | cosine | artifact] feature block.

    At identity dimension d and artifact dimension d_a the concatenated
    length is d + 1 + d_a (1025 at the full-scale d = d_a = 512).
    """

    diff_part: np.ndarray
    cosine_part: float
    artifact_part: np.ndarray

    @property
    def length(self) -> int:
        return self.diff_part.shape[0] + 1 + self.artifact_part.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate(
            [self.diff_part, [self.cosine_part], self.artifact_part])

    @classmethod
    def from_array(cls, arr: np.ndarray, d: int, d_a: int) -> "FeatureVector":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[0] != d + 1 + d_a:
            raise EmbeddingError(
                f"feature length {arr.shape[0]} != {d} + 1 + {d_a}")
        return cls(diff_part=arr[:d], cosine_part=float(arr[d]),
                   artifact_part=arr[d + 1:])


def concat_features(diff: np.ndarray, cosine: float,
                    artifact: np.ndarray) -> FeatureVector:
    """Assemble the identity+artifact feature vector from its three parts."""
    diff = np.asarray(diff, dtype=np.float64)
    artifact = np.asarray(artifact, dtype=np.float64)
    if diff.ndim != 1 or artifact.ndim != 1:
        raise EmbeddingError("feature parts must be 1-D vectors")
    if not np.all(np.isfinite(diff)) or not np.isfinite(cosine) \
            or not np.all(np.isfinite(artifact)):
        raise EmbeddingError("feature parts must be finite")
    return FeatureVector(diff_part=diff, cosine_part=float(cosine),
                         artifact_part=artifact)


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an HxWx3 uint8 array."""
    from PIL import Image  # deferred: only image-backed manifests need it

    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise EmbeddingError(f"cannot decode image {path}: {exc}") from exc


def is_embedding_ref(ref: str) -> bool:
    return ref.startswith(EMB_REF_PREFIX)


def strip_embedding_ref(ref: str) -> str:
    return ref[len(EMB_REF_PREFIX):] if is_embedding_ref(ref) else ref
