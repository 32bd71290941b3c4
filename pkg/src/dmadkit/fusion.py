"""Score fusion and the end-to-end per-pair pipeline.

Two fusion rules combine the attempt-type posteriors with the two detector
scores:

* weighted (default): the final score is the probability-weighted sum of
  the module outputs. Under the default routing the identity score serves
  both the bona fide and criminal probability mass,
  ``S = p_acc * s_ida + (p_bf + p_crim) * s_id``; the alternative routing
  sends the bona fide mass to the identity+artifact module instead.
* selection: the module whose attempt probability is highest wins outright;
  ties go to the identity module.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .attempt_classifier import (ACModel, AttemptProbabilities,
                                 classify_attempt)
from .embeddings import (Embedding, EmbeddingCache, EmbeddingProvider,
                         FaceDetector, concat_features, cosine_similarity,
                         crop_face, diff_minmax, get_embedding,
                         is_embedding_ref, load_image, raw_diff,
                         strip_embedding_ref)
from .id_detector import IdModel, score_id_diff
from .ida_detector import ArtifactExtractor, IdAModel, score_ida
from .manifest import AttemptLabel, AttemptPair
from .nets import ModelError

SCORE_TOL = 1e-9


class FusionMode(str, Enum):
    WEIGHTED = "weighted"
    SELECTION = "selection"


class BonaFideRoute(str, Enum):
    ID = "id"    # bona fide probability mass weights the identity score
    IDA = "ida"  # bona fide probability mass weights the identity+artifact score


@dataclass(frozen=True)
class ModuleScores:
    s_ida: float
    s_id: float

    def __post_init__(self):
        for name, v in (("s_ida", self.s_ida), ("s_id", self.s_id)):
            if not np.isfinite(v) or v < -SCORE_TOL or v > 1.0 + SCORE_TOL:
                raise ModelError(f"{name} out of [0, 1]: {v}")


@dataclass(frozen=True)
class MADResult:
    """Everything needed to recompute one pair's fused morph score."""

    pair_ref: tuple[str, str]
    probabilities: AttemptProbabilities
    module_scores: ModuleScores
    fused_score: float
    fusion_mode: FusionMode
    routing: BonaFideRoute
    cosine: float


def fuse_weighted(p: AttemptProbabilities, scores: ModuleScores,
                  routing: BonaFideRoute = BonaFideRoute.ID) -> float:
    """Probability-weighted sum of the module scores."""
    if routing is BonaFideRoute.ID:
        return (p.p_accomplice * scores.s_ida
                + p.p_bona_fide * scores.s_id
                + p.p_criminal * scores.s_id)
    return (p.p_accomplice * scores.s_ida
            + p.p_bona_fide * scores.s_ida
            + p.p_criminal * scores.s_id)


def fuse_selection(p: AttemptProbabilities, scores: ModuleScores) -> float:
    """Score of the module with the highest attempt probability.

    The identity+artifact score is selected only when the accomplice
    probability is the strict maximum; ties fall to the identity score.
    """
    if p.p_accomplice > max(p.p_bona_fide, p.p_criminal):
        return scores.s_ida
    return scores.s_id


class Pipeline:
    """Trained detector stack plus the embedding/artifact resolution plumbing."""

    def __init__(self, ac: ACModel, id_model: IdModel, ida: IdAModel,
                 provider: EmbeddingProvider, cache: EmbeddingCache | None,
                 artifact_extractor: ArtifactExtractor,
                 fusion_mode: FusionMode = FusionMode.WEIGHTED,
                 routing: BonaFideRoute = BonaFideRoute.ID,
                 detector: FaceDetector | None = None,
                 seed: int = 0):
        self.ac = ac
        self.id_model = id_model
        self.ida = ida
        self.provider = provider
        self.cache = cache
        self.artifact_extractor = artifact_extractor
        self.fusion_mode = fusion_mode
        self.routing = routing
        self.detector = detector
        self.seed = seed

    # -- resolution -----------------------------------------------------------

    def resolve_embedding(self, ref: str) -> Embedding:
        if is_embedding_ref(ref):
            return get_embedding(self.provider, strip_embedding_ref(ref), self.cache)
        image = load_image(ref)
        crop = crop_face(image, source_ref=ref, detector=self.detector)
        return get_embedding(self.provider, crop, self.cache)

    def resolve_artifact(self, ref: str) -> np.ndarray:
        if is_embedding_ref(ref):
            return self.artifact_extractor.extract(strip_embedding_ref(ref))
        image = load_image(ref)
        crop = crop_face(image, source_ref=ref, detector=self.detector)
        return self.artifact_extractor.extract(crop)

    def can_resolve(self, ref: str) -> bool:
        if is_embedding_ref(ref):
            return self.cache is not None and \
                (self.provider.provider_id, strip_embedding_ref(ref)) in self.cache
        from pathlib import Path
        return Path(ref).exists()

    # -- scoring --------------------------------------------------------------

    def score_attempt(self, pair: AttemptPair,
                      probabilities: AttemptProbabilities | None = None) -> MADResult:
        """Score one attempt end to end.

        ``probabilities`` overrides the attempt classifier's output (used by
        the oracle ablation that substitutes one-hot ground truth).
        """
        doc = self.resolve_embedding(pair.document_ref)
        live = self.resolve_embedding(pair.live_ref)
        cos = cosine_similarity(doc, live)
        cos = float(np.clip(cos, -1.0, 1.0))
        if probabilities is None:
            diff = raw_diff(doc, live) if self.ac.feature_mode == "cosine_diff" else None
            probabilities = classify_attempt(self.ac, cos, diff=diff)
        s_id = score_id_diff(self.id_model, raw_diff(doc, live))
        artifact = self.resolve_artifact(pair.document_ref)
        features = concat_features(diff_minmax(doc, live), cos, artifact)
        s_ida = score_ida(self.ida, features)
        scores = ModuleScores(s_ida=s_ida, s_id=s_id)
        if self.fusion_mode is FusionMode.WEIGHTED:
            fused = fuse_weighted(probabilities, scores, self.routing)
        else:
            fused = fuse_selection(probabilities, scores)
        return MADResult(
            pair_ref=(pair.document_ref, pair.live_ref),
            probabilities=probabilities,
            module_scores=scores,
            fused_score=fused,
            fusion_mode=self.fusion_mode,
            routing=self.routing,
            cosine=cos,
        )

    def score_pairs(self, pairs: list[AttemptPair], jobs: int = 1,
                    oracle_labels: bool = False) -> list[MADResult]:
        """Score pairs, optionally across a thread pool; order is preserved."""
        def one(pair: AttemptPair) -> MADResult:
            probs = AttemptProbabilities.one_hot(pair.label) if oracle_labels else None
            return self.score_attempt(pair, probabilities=probs)

        if jobs <= 1 or len(pairs) < 2:
            return [one(p) for p in pairs]
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, pairs))
