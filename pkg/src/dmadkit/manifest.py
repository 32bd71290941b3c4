"""Attempt manifests: domain types, validation, and scenario splitting.

A manifest row describes one verification attempt: a document reference, a
trusted live-capture reference, a label, and (for morphed documents) the
morph metadata. References are opaque strings; refs with an ``emb:`` prefix
resolve against an embedding cache, anything else is treated as an image
path.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

log = logging.getLogger(__name__)

EMB_REF_PREFIX = "emb:"


class ManifestError(Exception):
    """Raised for malformed or inconsistent manifest data."""


class AttemptLabel(str, Enum):
    BONA_FIDE = "bonafide"
    CRIMINAL = "criminal"
    ACCOMPLICE = "accomplice"

    @property
    def is_morph(self) -> bool:
        return self is not AttemptLabel.BONA_FIDE


class Scenario(str, Enum):
    ACCOMPLICE = "accomplice"
    CRIMINAL = "criminal"
    BOTH = "both"


@dataclass(frozen=True)
class MorphMeta:
    """Morph provenance: algorithm tag, criminal-side mixing weight, subjects.

    ``alpha`` is the weight of the criminal identity in the morph; at the
    typical alpha=0.3 the morphed document resembles the accomplice more.
    ``subject_ids`` is (accomplice_subject, criminal_subject).
    """

    algorithm: str
    alpha: float
    subject_ids: tuple[str, str]


@dataclass(frozen=True)
class AttemptPair:
    document_ref: str
    live_ref: str
    label: AttemptLabel
    morph_meta: MorphMeta | None = None

    @property
    def is_morph(self) -> bool:
        return self.label.is_morph


@dataclass
class DatasetManifest:
    entries: list[AttemptPair]
    source_name: str
    split_tag: str  # train | validation | test
    subject_disjoint: bool | None = None


@dataclass
class ValidatedManifest:
    """A manifest whose invariants have been checked, with per-label counts."""

    manifest: DatasetManifest
    label_counts: dict[AttemptLabel, int]

    @property
    def entries(self) -> list[AttemptPair]:
        return self.manifest.entries

    @property
    def source_name(self) -> str:
        return self.manifest.source_name

    @property
    def split_tag(self) -> str:
        return self.manifest.split_tag


@dataclass
class ScenarioSplit:
    scenario: Scenario
    pairs: list[AttemptPair]


def validate_manifest(
    manifest: DatasetManifest,
    ref_checker: Callable[[str], bool] | None = None,
) -> ValidatedManifest:
    """Check every entry against the manifest invariants.

    ``ref_checker`` optionally verifies that a reference is resolvable
    (e.g. present in an embedding cache or on disk); when omitted only
    structural invariants are checked.
    """
    counts = {label: 0 for label in AttemptLabel}
    seen: set[tuple[str, str]] = set()
    for i, pair in enumerate(manifest.entries):
        where = f"entry {i} ({pair.document_ref!r}, {pair.live_ref!r})"
        if not isinstance(pair.label, AttemptLabel):
            raise ManifestError(f"{where}: label required")
        if pair.is_morph:
            if pair.morph_meta is None:
                raise ManifestError(f"{where}: missing morph metadata")
            if not 0.0 <= pair.morph_meta.alpha <= 1.0:
                raise ManifestError(
                    f"{where}: alpha out of range: {pair.morph_meta.alpha}"
                )
        elif pair.morph_meta is not None:
            raise ManifestError(f"{where}: bona fide pair carries morph metadata")
        key = (pair.document_ref, pair.live_ref)
        if key in seen:
            raise ManifestError(f"{where}: duplicate (document_ref, live_ref)")
        seen.add(key)
        if ref_checker is not None:
            for ref in (pair.document_ref, pair.live_ref):
                if not ref_checker(ref):
                    raise ManifestError(f"{where}: unresolvable reference {ref!r}")
        counts[pair.label] += 1
    return ValidatedManifest(manifest=manifest, label_counts=counts)


def split_scenarios(validated: ValidatedManifest) -> dict[Scenario, ScenarioSplit]:
    """Partition a validated manifest into the three evaluation scenarios.

    The accomplice scenario holds bona fide + accomplice attempts, the
    criminal one bona fide + criminal attempts, and "both" is their union
    with each bona fide pair appearing once.
    """
    bona_fide = [p for p in validated.entries if p.label is AttemptLabel.BONA_FIDE]
    criminal = [p for p in validated.entries if p.label is AttemptLabel.CRIMINAL]
    accomplice = [p for p in validated.entries if p.label is AttemptLabel.ACCOMPLICE]
    splits = {
        Scenario.ACCOMPLICE: ScenarioSplit(Scenario.ACCOMPLICE, bona_fide + accomplice),
        Scenario.CRIMINAL: ScenarioSplit(Scenario.CRIMINAL, bona_fide + criminal),
        Scenario.BOTH: ScenarioSplit(Scenario.BOTH, bona_fide + criminal + accomplice),
    }
    for scenario, split in splits.items():
        morphs = sum(1 for p in split.pairs if p.is_morph)
        if not bona_fide or morphs == 0:
            log.warning(
                "scenario %s in %s is one-sided (bona fide=%d, morphs=%d)",
                scenario.value, validated.source_name, len(bona_fide), morphs,
            )
    return splits


def subjects_of(manifest: DatasetManifest) -> set[str]:
    """All subject ids referenced by morph metadata in a manifest."""
    out: set[str] = set()
    for pair in manifest.entries:
        if pair.morph_meta is not None:
            out.update(pair.morph_meta.subject_ids)
    return out


# ---------------------------------------------------------------------------
# File formats: CSV or JSON lines, one attempt per row.
# Columns/keys: document_ref, live_ref, label, morph_algorithm?, alpha?,
# subject_a? (accomplice), subject_b? (criminal).
# ---------------------------------------------------------------------------

_FIELDS = ("document_ref", "live_ref", "label",
           "morph_algorithm", "alpha", "subject_a", "subject_b")


def _pair_from_row(row: dict, where: str) -> AttemptPair:
    unknown = set(row) - set(_FIELDS)
    if unknown:
        raise ManifestError(f"{where}: unknown column(s) {sorted(unknown)}")
    try:
        doc = row["document_ref"]
        live = row["live_ref"]
        label_raw = row["label"]
    except KeyError as exc:
        raise ManifestError(f"{where}: missing required column {exc}") from None
    if not doc or not live:
        raise ManifestError(f"{where}: empty reference")
    try:
        label = AttemptLabel(label_raw)
    except ValueError:
        raise ManifestError(f"{where}: unknown label {label_raw!r}") from None
    meta = None
    has_meta = any(row.get(k) not in (None, "") for k in
                   ("morph_algorithm", "alpha", "subject_a", "subject_b"))
    if has_meta:
        try:
            alpha = float(row["alpha"])
        except (KeyError, TypeError, ValueError):
            raise ManifestError(f"{where}: morph row needs a numeric alpha") from None
        meta = MorphMeta(
            algorithm=str(row.get("morph_algorithm") or "unknown"),
            alpha=alpha,
            subject_ids=(str(row.get("subject_a") or ""), str(row.get("subject_b") or "")),
        )
    return AttemptPair(document_ref=doc, live_ref=live, label=label, morph_meta=meta)


def load_manifest(path: str | Path, split_tag: str = "test",
                  source_name: str | None = None) -> DatasetManifest:
    """Load a manifest from a ``.csv`` or ``.jsonl`` file."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    rows: list[dict] = []
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            for i, row in enumerate(csv.DictReader(fh)):
                rows.append({k: v for k, v in row.items() if v not in (None, "")})
    elif path.suffix == ".jsonl":
        with open(path, encoding="utf-8") as fh:
            for i, line in enumerate(fh):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}:{i + 1}: invalid JSON: {exc}") from None
    else:
        raise ManifestError(f"unsupported manifest format: {path.suffix!r}")
    entries = [_pair_from_row(row, f"{path.name}:{i + 1}") for i, row in enumerate(rows)]
    return DatasetManifest(
        entries=entries,
        source_name=source_name or path.stem,
        split_tag=split_tag,
    )


def _pair_to_row(pair: AttemptPair) -> dict:
    row: dict = {
        "document_ref": pair.document_ref,
        "live_ref": pair.live_ref,
        "label": pair.label.value,
    }
    if pair.morph_meta is not None:
        row["morph_algorithm"] = pair.morph_meta.algorithm
        row["alpha"] = pair.morph_meta.alpha
        row["subject_a"] = pair.morph_meta.subject_ids[0]
        row["subject_b"] = pair.morph_meta.subject_ids[1]
    return row


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as ``.csv`` or ``.jsonl`` (chosen by suffix)."""
    path = Path(path)
    rows = [_pair_to_row(p) for p in manifest.entries]
    if path.suffix == ".csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    elif path.suffix == ".jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    else:
        raise ManifestError(f"unsupported manifest format: {path.suffix!r}")
