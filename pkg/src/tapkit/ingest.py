"""Annotation/feature/results file I/O, fixed-length resizing and the
synthetic dataset generator that stands in for CNN feature extraction.

File formats:
  annotations  JSON  {"version": ..., "database": {vid: {"duration", "subset",
                      "annotations": [{"label", "segment": [s, e]}]}}}
  features     binary, magic "TAPF", u32 version=1, u32 T, u32 D, then T*D
               little-endian float32 row-major (CSV accepted for fixtures)
  results      JSON  {"version", "results": {vid: [{"segment", "score"(,"label")}]},
                      "external_data": {}}
  classification JSON {vid: [{"label", "score"}, ...]} sorted by score desc
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DatasetIndex,
    GroundTruthInstance,
    Proposal,
    ProposalSet,
    Source,
    Subset,
    TemporalInterval,
    VideoRecord,
)
from .errors import ConfigError, DataFormatError, PlacementError
from .util import rng_for, KEY_SYNTH

FEATURE_MAGIC = b"TAPF"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSequence:
    """T x D matrix of snippet-level feature vectors for one video."""

    video_id: str
    data: np.ndarray  # float32, shape (T, D), row per snippet

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataFormatError(
                f"feature sequence for {self.video_id} must be T x D with T, D >= 1, "
                f"got shape {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise DataFormatError(f"feature sequence for {self.video_id} has non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def num_snippets(self) -> int:
        return self.data.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic desk-scale dataset.

    Background snippets are N(0, sigma^2 I); every snippet whose center falls
    inside a ground-truth instance gets +mu added on the video's class
    coordinate (the first num_classes feature coordinates are reserved as
    class indicators). One class per video; instances never overlap.
    """

    num_videos: int = 250
    duration_range: tuple[float, float] = (40.0, 80.0)
    snippet_length: float = 1.0
    feature_dim: int = 16
    num_classes: int = 5
    instances_range: tuple[int, int] = (1, 3)
    instance_len_frac: tuple[float, float] = (0.05, 0.25)
    signal_strength: float = 2.0
    noise_sigma: float = 1.0
    val_fraction: float = 0.2
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 1:
            raise ConfigError("num_videos must be >= 1")
        if not (0.0 < self.duration_range[0] <= self.duration_range[1]):
            raise ConfigError(f"empty duration range {self.duration_range}")
        if self.snippet_length <= 0.0:
            raise ConfigError("snippet_length must be > 0")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.feature_dim < self.num_classes:
            raise ConfigError(
                f"feature_dim must be >= num_classes (class indicator directions), "
                f"got D={self.feature_dim} < {self.num_classes}"
            )
        if not (0 <= self.instances_range[0] <= self.instances_range[1]):
            raise ConfigError(f"empty instances range {self.instances_range}")
        if not (0.0 < self.instance_len_frac[0] <= self.instance_len_frac[1] < 1.0):
            raise ConfigError(f"bad instance length fractions {self.instance_len_frac}")
        if self.signal_strength <= 0.0 or self.noise_sigma <= 0.0:
            raise ConfigError("signal_strength and noise_sigma must be > 0")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError("val_fraction must be in [0, 1)")


# --------------------------------------------------------------------------
# annotations


def load_annotations(path: str | Path) -> DatasetIndex:
    """Parse an ActivityNet-style annotation file into a validated index."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse annotation file {path}: {exc}") from exc

    if not isinstance(raw, dict) or not isinstance(raw.get("database"), dict):
        raise DataFormatError(f"{path}: missing or malformed 'database' map")

    videos: dict[str, VideoRecord] = {}
    labels: set[str] = set()
    for vid, entry in raw["database"].items():
        if not isinstance(entry, dict):
            raise DataFormatError(f"{path}: database.{vid} is not an object")
        duration = entry.get("duration")
        if not isinstance(duration, (int, float)) or not duration > 0:
            raise DataFormatError(f"{path}: database.{vid}.duration must be a positive number")
        subset = entry.get("subset")
        try:
            subset = Subset(subset)
        except ValueError:
            raise DataFormatError(
                f"{path}: database.{vid}.subset must be training/validation/testing, got {subset!r}"
            ) from None
        instances = []
        for i, ann in enumerate(entry.get("annotations", [])):
            where = f"database.{vid}.annotations[{i}]"
            if not isinstance(ann, dict) or "label" not in ann or "segment" not in ann:
                raise DataFormatError(f"{path}: {where} needs 'label' and 'segment'")
            seg = ann["segment"]
            if (
                not isinstance(seg, (list, tuple))
                or len(seg) != 2
                or not all(isinstance(x, (int, float)) for x in seg)
            ):
                raise DataFormatError(f"{path}: {where}.segment must be a [start, end] pair")
            if not (float(seg[0]) < float(seg[1])):
                raise DataFormatError(
                    f"{path}: {where}.segment [{seg[0]}, {seg[1]}] is reversed or empty"
                )
            if float(seg[0]) < 0 or float(seg[1]) > float(duration):
                raise DataFormatError(
                    f"{path}: {where}.segment [{seg[0]}, {seg[1]}] outside [0, {duration}]"
                )
            label = str(ann["label"])
            labels.add(label)
            instances.append(
                GroundTruthInstance(label, TemporalInterval(float(seg[0]), float(seg[1])))
            )
        videos[vid] = VideoRecord(vid, float(duration), subset, tuple(instances))
    return DatasetIndex(videos=videos, label_set=tuple(sorted(labels)))


def save_annotations(index: DatasetIndex, path: str | Path) -> None:
    database = {}
    for vid in sorted(index.videos):
        rec = index.videos[vid]
        database[vid] = {
            "duration": rec.duration,
            "subset": rec.subset.value,
            "annotations": [
                {"label": inst.label, "segment": [inst.interval.start, inst.interval.end]}
                for inst in rec.instances
            ],
        }
    payload = {"version": "1.0", "database": database}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# --------------------------------------------------------------------------
# resize


def resize_linear(seq: FeatureSequence, length: int) -> FeatureSequence:
    """Resize to a fixed number of rows by endpoint-aligned linear interpolation.

    Output row j samples the input at position j*(T-1)/(L-1); the first and
    last rows are preserved exactly, and L == T is the identity.
    """
    if length < 1:
        raise DataFormatError(f"target length must be >= 1, got {length}")
    t = seq.num_snippets
    if t == 1:
        return FeatureSequence(seq.video_id, np.repeat(seq.data, length, axis=0))
    if length == 1:
        pos = np.array([(t - 1) / 2.0])
    else:
        pos = np.arange(length, dtype=np.float64) * (t - 1) / (length - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, t - 2)
    frac = pos - lo
    rows = seq.data.astype(np.float64)
    out = rows[lo] * (1.0 - frac)[:, None] + rows[lo + 1] * frac[:, None]
    return FeatureSequence(seq.video_id, out.astype(np.float32))


# --------------------------------------------------------------------------
# feature files


def save_features(seq: FeatureSequence, path: str | Path) -> None:
    t, d = seq.data.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    payload = seq.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, t, d))
        f.write(payload)


def load_features(path: str | Path, video_id: str | None = None) -> FeatureSequence:
    """Read a feature file; .csv paths are parsed as plain comma-separated rows."""
    path = Path(path)
    vid = video_id if video_id is not None else path.stem
    if path.suffix.lower() == ".csv":
        try:
            arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataFormatError(f"cannot parse CSV features {path}: {exc}") from exc
        return FeatureSequence(vid, arr.astype(np.float32))

    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a feature file")
    version, t, d = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise DataFormatError(f"{path}: unsupported feature file version {version}")
    expected = 16 + 4 * t * d
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: corrupt payload, header says T={t} D={d} "
            f"({expected} bytes) but file has {len(blob)}"
        )
    arr = np.frombuffer(blob, dtype="<f4", offset=16).reshape(t, d)
    if not np.isfinite(arr).all():
        raise DataFormatError(f"{path}: non-finite feature values")
    return FeatureSequence(vid, arr.copy())


# --------------------------------------------------------------------------
# results files


def write_results(
    proposal_sets: dict[str, ProposalSet],
    path: str | Path,
    labels: dict[str, list[str]] | None = None,
) -> None:
    """Write proposal results JSON; pass per-proposal labels for localization files."""
    results = {}
    for vid in sorted(proposal_sets):
        pset = proposal_sets[vid]
        entries = []
        for i, p in enumerate(pset):
            entry = {"segment": [p.interval.start, p.interval.end], "score": p.score}
            if labels is not None:
                entry["label"] = labels[vid][i]
            entries.append(entry)
        results[vid] = entries
    payload = {"version": "1.0", "results": results, "external_data": {}}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _parse_results(path: str | Path, want_labels: bool):
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse results file {path}: {exc}") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("results"), dict):
        raise DataFormatError(f"{path}: missing 'results' map")
    out = {}
    for vid, entries in raw["results"].items():
        if not isinstance(entries, list):
            raise DataFormatError(f"{path}: results.{vid} must be a list")
        parsed = []
        for i, entry in enumerate(entries):
            where = f"results.{vid}[{i}]"
            if not isinstance(entry, dict):
                raise DataFormatError(f"{path}: {where} is not an object")
            seg = entry.get("segment")
            if (
                not isinstance(seg, (list, tuple))
                or len(seg) != 2
                or not all(isinstance(x, (int, float)) for x in seg)
            ):
                raise DataFormatError(f"{path}: {where}.segment must be a [start, end] pair")
            score = entry.get("score")
            if not isinstance(score, (int, float)):
                raise DataFormatError(f"{path}: {where}.score must be a number")
            label = entry.get("label")
            if want_labels and not isinstance(label, str):
                raise DataFormatError(f"{path}: {where} has no 'label' (localization file)")
            parsed.append((float(seg[0]), float(seg[1]), float(score), label))
        out[vid] = parsed
    return out


def read_results(path: str | Path) -> dict[str, ProposalSet]:
    """Read a proposal results file (extra per-entry keys are tolerated)."""
    parsed = _parse_results(path, want_labels=False)
    out = {}
    for vid, entries in parsed.items():
        proposals = []
        for s, e, score, _label in entries:
            try:
                proposals.append(Proposal(TemporalInterval(s, e), score, Source.SSAD))
            except Exception as exc:
                raise DataFormatError(f"{path}: results.{vid}: {exc}") from exc
        out[vid] = ProposalSet(vid, tuple(proposals))
    return out


def read_localization(path: str | Path) -> dict[str, list[tuple[str, TemporalInterval, float]]]:
    """Read a localization results file; every entry must carry a label."""
    parsed = _parse_results(path, want_labels=True)
    out = {}
    for vid, entries in parsed.items():
        rows = []
        for s, e, score, label in entries:
            try:
                rows.append((label, TemporalInterval(s, e), score))
            except Exception as exc:
                raise DataFormatError(f"{path}: results.{vid}: {exc}") from exc
        out[vid] = rows
    return out


def write_localization(
    localization: dict[str, list[tuple[str, TemporalInterval, float]]], path: str | Path
) -> None:
    results = {}
    for vid in sorted(localization):
        results[vid] = [
            {"label": label, "segment": [iv.start, iv.end], "score": score}
            for label, iv, score in localization[vid]
        ]
    payload = {"version": "1.0", "results": results, "external_data": {}}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# --------------------------------------------------------------------------
# classification results


def read_classification(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Video-level classification results, confidence-sorted per video."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot parse classification file {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise DataFormatError(f"{path}: expected a video_id -> entries map")
    out = {}
    for vid, entries in raw.items():
        if not isinstance(entries, list):
            raise DataFormatError(f"{path}: {vid} must map to a list")
        rows = []
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or "label" not in entry or "score" not in entry:
                raise DataFormatError(f"{path}: {vid}[{i}] needs 'label' and 'score'")
            score = float(entry["score"])
            if not (0.0 <= score <= 1.0) or not math.isfinite(score):
                raise DataFormatError(f"{path}: {vid}[{i}].score must be in [0, 1]")
            rows.append((str(entry["label"]), score))
        rows.sort(key=lambda r: -r[1])
        out[vid] = rows
    return out


def write_classification(results: dict[str, list[tuple[str, float]]], path: str | Path) -> None:
    payload = {
        vid: [{"label": label, "score": score} for label, score in rows]
        for vid, rows in sorted(results.items())
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


# --------------------------------------------------------------------------
# synthetic data


def snippet_centers(num_snippets: int, duration: float) -> np.ndarray:
    """Center time of each snippet: (t + 0.5) / T of the duration."""
    return (np.arange(num_snippets) + 0.5) / num_snippets * duration


def _place_instances(
    rng: np.random.Generator, duration: float, count: int, frac_range: tuple[float, float]
) -> list[TemporalInterval]:
    placed: list[TemporalInterval] = []
    for _ in range(count):
        ok = False
        for _attempt in range(100):
            length = duration * rng.uniform(frac_range[0], frac_range[1])
            start = rng.uniform(0.0, duration - length)
            cand = TemporalInterval(start, start + length)
            if all(min(cand.end, p.end) <= max(cand.start, p.start) for p in placed):
                placed.append(cand)
                ok = True
                break
        if not ok:
            raise PlacementError(
                f"could not place {count} non-overlapping instances in a "
                f"{duration:.1f}s video after 100 attempts"
            )
    placed.sort(key=lambda iv: iv.start)
    return placed


def generate_synthetic(
    cfg: SynthConfig,
) -> tuple[DatasetIndex, dict[str, FeatureSequence], dict[str, list[tuple[str, float]]]]:
    """Build a seeded synthetic dataset.

    Returns the annotation index, per-video feature sequences, and oracle
    video-level classification results (each video's class, confidence 1.0).
    Deterministic given cfg.seed.
    """
    cfg.validate()
    rng = rng_for(cfg.seed, KEY_SYNTH)
    num_val = int(round(cfg.num_videos * cfg.val_fraction))
    num_train = cfg.num_videos - num_val

    videos: dict[str, VideoRecord] = {}
    features: dict[str, FeatureSequence] = {}
    classification: dict[str, list[tuple[str, float]]] = {}
    labels = tuple(f"class_{c}" for c in range(cfg.num_classes))

    for v in range(cfg.num_videos):
        vid = f"v{v:05d}"
        subset = Subset.TRAINING if v < num_train else Subset.VALIDATION
        duration = float(rng.uniform(*cfg.duration_range))
        t = int(math.ceil(duration / cfg.snippet_length))
        cls = int(rng.integers(0, cfg.num_classes))
        count = int(rng.integers(cfg.instances_range[0], cfg.instances_range[1] + 1))
        instances = _place_instances(rng, duration, count, cfg.instance_len_frac)

        data = rng.normal(0.0, cfg.noise_sigma, size=(t, cfg.feature_dim))
        centers = snippet_centers(t, duration)
        for iv in instances:
            inside = (centers >= iv.start) & (centers < iv.end)
            data[inside, cls] += cfg.signal_strength

        videos[vid] = VideoRecord(
            vid,
            duration,
            subset,
            tuple(GroundTruthInstance(labels[cls], iv) for iv in instances),
        )
        features[vid] = FeatureSequence(vid, data.astype(np.float32))
        if instances:
            classification[vid] = [(labels[cls], 1.0)]
        else:
            classification[vid] = []

    index = DatasetIndex(videos=videos, label_set=labels)
    return index, features, classification
