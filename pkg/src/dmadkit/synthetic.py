"""Synthetic embedding-space benchmark generator.

Identities are i.i.d. directions on the unit sphere. A morphed document is a
renormalized convex combination of two identities (the mixing weight alpha
is the criminal side's share, so at alpha = 0.3 the morph leans toward the
accomplice); live captures are sphere-noise perturbations of the true
identity. Every morphed document yields one criminal and one accomplice
attempt. A separate artifact channel — a fixed seeded direction scaled by
``artifact_strength``, plus unit noise — is attached to morphed documents
only, making morphs detectable from the document side alone.

This is a deliberate idealization of image-domain morphing: its purpose is
pipeline verification at desk scale with no face data, not biometric
realism.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import Embedding, EmbeddingCache
from .manifest import (AttemptLabel, AttemptPair, DatasetManifest, MorphMeta,
                       save_manifest)

log = logging.getLogger(__name__)

IDENTITY_PROVIDER_ID = "synthetic"
ARTIFACT_PROVIDER_ID = "passthrough"
MORPH_ALGORITHM_TAG = "embed-convex"

SPLIT_NAMES = ("train", "validation", "test")
SPLIT_FRACTIONS = (0.5, 0.25, 0.25)


class SyntheticError(Exception):
    """Raised for invalid generator configuration or inputs."""


@dataclass(frozen=True)
class SyntheticConfig:
    n_identities: int = 200
    d: int = 64
    d_a: int = 64
    alpha_set: tuple[float, ...] = (0.3, 0.5)
    live_noise_sigma: float = 0.5
    artifact_strength: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.n_identities < 4:
            raise SyntheticError("need at least 4 identities to form pairs")
        if self.d < 2:
            raise SyntheticError("embedding dimension must be >= 2")
        if self.d_a < 1:
            raise SyntheticError("artifact dimension must be >= 1")
        if self.live_noise_sigma < 0 or self.artifact_strength < 0:
            raise SyntheticError("noise and artifact scales must be >= 0")
        if not self.alpha_set:
            raise SyntheticError("alpha_set must not be empty")
        for a in self.alpha_set:
            if not 0.0 < a < 1.0:
                raise SyntheticError(f"alpha must lie in (0, 1), got {a}")


@dataclass(frozen=True)
class SyntheticAttempt:
    doc_embedding: Embedding
    live_embedding: Embedding
    doc_artifact: np.ndarray
    label: AttemptLabel
    alpha: float | None


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _sphere_noise(rng: np.random.Generator, d: int) -> np.ndarray:
    return _unit(rng.standard_normal(d))


def gen_identities(config: SyntheticConfig) -> np.ndarray:
    """I.i.d. unit-norm identity directions, (n_identities, d), seeded."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    out = rng.standard_normal((config.n_identities, config.d))
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _perturb(e: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    # noise is always drawn so the rng stream does not depend on sigma
    return _unit(e + sigma * _sphere_noise(rng, e.shape[0]))


def _artifact(config: SyntheticConfig, pattern: np.ndarray, morphed: bool,
              rng: np.random.Generator) -> np.ndarray:
    noise = _sphere_noise(rng, config.d_a)
    if morphed:
        return config.artifact_strength * pattern + noise
    return noise


def gen_attempt(identities, alpha: float | None, kind: AttemptLabel,
                config: SyntheticConfig, rng: np.random.Generator,
                pattern: np.ndarray | None = None) -> SyntheticAttempt:
    """Generate one attempt.

    For bona fide attempts ``identities`` is a single identity vector; for
    morph attempts it is the (accomplice, criminal) pair and ``alpha`` is
    the criminal-side weight of the morphed document.
    """
    if pattern is None:
        pattern = np.zeros(config.d_a)
    sigma = config.live_noise_sigma
    if kind is AttemptLabel.BONA_FIDE:
        e = np.asarray(identities, dtype=np.float64)
        doc = _perturb(e, sigma, rng)
        live = _perturb(e, sigma, rng)
        art = _artifact(config, pattern, morphed=False, rng=rng)
        alpha_used = None
    else:
        e_acc, e_crim = (np.asarray(v, dtype=np.float64) for v in identities)
        if np.array_equal(e_acc, e_crim):
            raise SyntheticError("morph requires two distinct identities")
        if alpha is None:
            raise SyntheticError("morph attempt needs an alpha")
        morph = alpha * e_crim + (1.0 - alpha) * e_acc
        doc = _perturb(morph, sigma, rng)
        target = e_crim if kind is AttemptLabel.CRIMINAL else e_acc
        live = _perturb(target, sigma, rng)
        art = _artifact(config, pattern, morphed=True, rng=rng)
        alpha_used = alpha
    return SyntheticAttempt(
        doc_embedding=Embedding(values=doc, provider_id=IDENTITY_PROVIDER_ID),
        live_embedding=Embedding(values=live, provider_id=IDENTITY_PROVIDER_ID),
        doc_artifact=art,
        label=kind,
        alpha=alpha_used,
    )


@dataclass
class SyntheticBenchmark:
    """Manifests plus the vector store backing their embedding refs."""

    config: SyntheticConfig
    manifests: dict[str, DatasetManifest]
    vectors: dict[tuple[str, str], np.ndarray]  # (provider_id, ref) -> vector
    stats: dict

    def ref_exists(self, ref: str) -> bool:
        from .manifest import EMB_REF_PREFIX
        bare = ref[len(EMB_REF_PREFIX):] if ref.startswith(EMB_REF_PREFIX) else ref
        return (IDENTITY_PROVIDER_ID, bare) in self.vectors

    def populate_cache(self, cache: EmbeddingCache) -> None:
        for (provider_id, ref), vec in self.vectors.items():
            cache.put(provider_id, ref, vec)
        cache.sync()

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write manifests, embedding cache, and summary statistics."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths: dict[str, Path] = {}
        for name, manifest in self.manifests.items():
            path = out_dir / f"{name}.jsonl"
            save_manifest(manifest, path)
            paths[name] = path
        cache = EmbeddingCache(out_dir / "cache")
        self.populate_cache(cache)
        paths["cache"] = out_dir / "cache"
        stats_path = out_dir / "stats.json"
        stats_path.write_text(json.dumps(self.stats, indent=2, sort_keys=True),
                              encoding="utf-8")
        paths["stats"] = stats_path
        return paths


def _f32(v: np.ndarray) -> np.ndarray:
    # Vectors are stored as float32; round at creation so in-memory use and
    # cache round-trips are bit-identical.
    return np.asarray(v, dtype=np.float32).astype(np.float64)


def gen_benchmark(config: SyntheticConfig) -> SyntheticBenchmark:
    """Generate subject-disjoint train/validation/test manifests.

    Each split pairs its identities round-robin; every (pair, alpha) yields
    one morphed document with both a criminal and an accomplice attempt,
    and every subject contributes one bona fide attempt.
    """
    root_ss = np.random.SeedSequence(config.seed)
    split_ss = root_ss.spawn(len(SPLIT_NAMES) + 1)
    identities = gen_identities(config)
    layout_rng = np.random.default_rng(split_ss[0])
    pattern = _sphere_noise(layout_rng, config.d_a)
    perm = layout_rng.permutation(config.n_identities)
    n_train = int(round(config.n_identities * SPLIT_FRACTIONS[0]))
    n_val = int(round(config.n_identities * SPLIT_FRACTIONS[1]))
    split_subjects = {
        "train": perm[:n_train],
        "validation": perm[n_train:n_train + n_val],
        "test": perm[n_train + n_val:],
    }
    for name, subjects in split_subjects.items():
        if len(subjects) < 4:
            raise SyntheticError(
                f"split {name!r} has {len(subjects)} identities; "
                "n_identities too small for disjoint splits")

    manifests: dict[str, DatasetManifest] = {}
    vectors: dict[tuple[str, str], np.ndarray] = {}
    stats: dict = {"splits": {}, "config": _config_dict(config)}
    morph_counter = 0

    for split_idx, name in enumerate(SPLIT_NAMES):
        rng = np.random.default_rng(split_ss[split_idx + 1])
        subjects = split_subjects[name]
        entries: list[AttemptPair] = []
        cosines: dict[str, list[float]] = {label.value: [] for label in AttemptLabel}

        def store(ref: str, attempt: SyntheticAttempt) -> None:
            vectors[(IDENTITY_PROVIDER_ID, f"{ref}:doc")] = \
                _f32(attempt.doc_embedding.values)
            vectors[(IDENTITY_PROVIDER_ID, f"{ref}:live")] = \
                _f32(attempt.live_embedding.values)
            vectors[(ARTIFACT_PROVIDER_ID, f"{ref}:doc")] = _f32(attempt.doc_artifact)

        for subject in subjects:
            attempt = gen_attempt(identities[subject], None,
                                  AttemptLabel.BONA_FIDE, config, rng, pattern)
            ref = f"bf{subject:05d}"
            store(ref, attempt)
            entries.append(AttemptPair(
                document_ref=f"emb:{ref}:doc",
                live_ref=f"emb:{ref}:live",
                label=AttemptLabel.BONA_FIDE,
            ))
            cosines["bonafide"].append(_cos(vectors, ref))

        order = rng.permutation(subjects)
        pairs = [(order[i], order[(i + 1) % len(order)]) for i in range(len(order))]
        for acc_subject, crim_subject in pairs:
            for alpha in config.alpha_set:
                morph_counter += 1
                meta = MorphMeta(
                    algorithm=MORPH_ALGORITHM_TAG,
                    alpha=alpha,
                    subject_ids=(f"s{acc_subject:05d}", f"s{crim_subject:05d}"),
                )
                pair_ids = (identities[acc_subject], identities[crim_subject])
                doc_rng_state = rng  # one doc per (pair, alpha), shared below
                crim_attempt = gen_attempt(pair_ids, alpha, AttemptLabel.CRIMINAL,
                                           config, doc_rng_state, pattern)
                # the accomplice attempt reuses the same morphed document and
                # artifact vector; only its live capture is fresh
                acc_live = _perturb(identities[acc_subject],
                                    config.live_noise_sigma, rng)
                mref = f"m{morph_counter:05d}"
                vectors[(IDENTITY_PROVIDER_ID, f"{mref}:doc")] = \
                    _f32(crim_attempt.doc_embedding.values)
                vectors[(ARTIFACT_PROVIDER_ID, f"{mref}:doc")] = \
                    _f32(crim_attempt.doc_artifact)
                vectors[(IDENTITY_PROVIDER_ID, f"{mref}:crim:live")] = \
                    _f32(crim_attempt.live_embedding.values)
                vectors[(IDENTITY_PROVIDER_ID, f"{mref}:acc:live")] = _f32(acc_live)
                entries.append(AttemptPair(
                    document_ref=f"emb:{mref}:doc",
                    live_ref=f"emb:{mref}:crim:live",
                    label=AttemptLabel.CRIMINAL,
                    morph_meta=meta,
                ))
                entries.append(AttemptPair(
                    document_ref=f"emb:{mref}:doc",
                    live_ref=f"emb:{mref}:acc:live",
                    label=AttemptLabel.ACCOMPLICE,
                    morph_meta=meta,
                ))
                doc = vectors[(IDENTITY_PROVIDER_ID, f"{mref}:doc")]
                for kind, live_ref in (("criminal", f"{mref}:crim:live"),
                                       ("accomplice", f"{mref}:acc:live")):
                    live = vectors[(IDENTITY_PROVIDER_ID, live_ref)]
                    cosines[kind].append(
                        float(np.dot(doc, live)
                              / (np.linalg.norm(doc) * np.linalg.norm(live))))

        manifests[name] = DatasetManifest(
            entries=entries,
            source_name=f"synthetic-{name}",
            split_tag=name,
            subject_disjoint=True,
        )
        stats["splits"][name] = {
            "n_subjects": int(len(subjects)),
            "n_attempts": len(entries),
            "label_counts": {
                label.value: sum(1 for e in entries if e.label is label)
                for label in AttemptLabel
            },
            "cosine_mean": {k: (float(np.mean(v)) if v else None)
                            for k, v in cosines.items()},
            "cosine_std": {k: (float(np.std(v)) if v else None)
                           for k, v in cosines.items()},
            "similarity_bins": _bin_stats(entries, cosines),
        }
    return SyntheticBenchmark(config=config, manifests=manifests,
                              vectors=vectors, stats=stats)


def _cos(vectors: dict, ref: str) -> float:
    doc = vectors[(IDENTITY_PROVIDER_ID, f"{ref}:doc")]
    live = vectors[(IDENTITY_PROVIDER_ID, f"{ref}:live")]
    return float(np.dot(doc, live) / (np.linalg.norm(doc) * np.linalg.norm(live)))


def _bin_stats(entries: list[AttemptPair], cosines: dict[str, list[float]],
               n_bins: int = 10) -> list[dict]:
    allc = [c for vals in cosines.values() for c in vals]
    if not allc:
        return []
    lo, hi = min(allc), max(allc)
    edges = np.linspace(lo, hi, n_bins + 1)
    rows = []
    for i in range(n_bins):
        left, right = edges[i], edges[i + 1]
        counts = {}
        for kind, vals in cosines.items():
            if i < n_bins - 1:
                counts[kind] = sum(1 for c in vals if left <= c < right)
            else:
                counts[kind] = sum(1 for c in vals if left <= c <= right)
        rows.append({"lo": float(left), "hi": float(right), **counts})
    return rows


def _config_dict(config: SyntheticConfig) -> dict:
    return {
        "n_identities": config.n_identities,
        "d": config.d,
        "d_a": config.d_a,
        "alpha_set": list(config.alpha_set),
        "live_noise_sigma": config.live_noise_sigma,
        "artifact_strength": config.artifact_strength,
        "seed": config.seed,
    }
