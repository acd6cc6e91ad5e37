"""Domain types, engine configuration, and detection-stream ingestion.

The engine is decoupled from any particular detector: it reads line-delimited
detection records plus a frame manifest, validates them, and applies the
portable-contact / oversize filters before anything downstream sees them.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, TextIO

import numpy as np


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration."""


class StreamOrderError(ValueError):
    """Raised when the detection stream violates frame ordering."""


class UnknownFrameError(KeyError):
    """Raised when a detection references a frame missing from the manifest."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned pixel box, origin top-left, x1 < x2 and y1 < y2."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        # canonicalize to float so serialized coordinates round-trip exactly
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v):
                raise ValueError(f"box coordinate not finite: {v!r}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect_ratio(self) -> float:
        return self.width / self.height

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


class ContactState(enum.Enum):
    SELF_CONTACT = "self_contact"
    OTHER_PEOPLE = "other_people"
    PORTABLE_OBJECT = "portable_object"
    STATIC_OBJECT = "static_object"


@dataclass(frozen=True)
class DetectionRecord:
    """One detected object in one frame, as handed to us by a detector."""

    detection_id: str
    frame_index: int
    timestamp_ms: int
    object_box: Box
    confidence: float
    contact_state: ContactState
    feature: np.ndarray
    hand_box: Box | None = None
    skin_ratio: float | None = None
    crop_ref: str | None = None
    track_hint: str | None = None

    def __post_init__(self) -> None:
        # Features are validated for shape/norm at ingestion; freeze the array
        # so cached similarity scores can never drift.
        self.feature.setflags(write=False)


@dataclass(frozen=True)
class FrameMeta:
    frame_index: int
    width: int
    height: int
    image_ref: str

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame {self.frame_index}: non-positive dimensions")


@dataclass(frozen=True)
class EngineConfig:
    """Tunable thresholds. Defaults are the engine's reference operating point."""

    feature_dim: int = 2048
    max_sim_threshold: float = 0.8
    median_sim_threshold: float = 0.7
    gate_aspect_ratio: float = 1.5
    gate_skin_ratio: float = 0.3
    gate_area_ratio: float = 1.5
    oversize_fraction: float = 0.5
    track_gate_iou: float = 0.3
    track_max_gap_frames: int = 3
    fps: float = 10.0
    retrial_growth_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        for name in ("max_sim_threshold", "median_sim_threshold"):
            v = getattr(self, name)
            if not -1.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [-1, 1], got {v}")
        if self.max_sim_threshold < self.median_sim_threshold:
            raise ConfigError("max_sim_threshold must be >= median_sim_threshold")
        for name in ("gate_aspect_ratio", "gate_area_ratio"):
            if getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 <= self.gate_skin_ratio <= 1.0:
            raise ConfigError("gate_skin_ratio must lie in [0, 1]")
        if not 0.0 < self.oversize_fraction <= 1.0:
            raise ConfigError("oversize_fraction must lie in (0, 1]")
        if not 0.0 <= self.track_gate_iou <= 1.0:
            raise ConfigError("track_gate_iou must lie in [0, 1]")
        if self.track_max_gap_frames < 0:
            raise ConfigError("track_max_gap_frames must be >= 0")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.retrial_growth_factor < 1.0:
            raise ConfigError("retrial_growth_factor must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | None = None) -> EngineConfig:
    """Load an EngineConfig from a JSON file; every key optional, unknown keys rejected."""
    if path is None:
        return EngineConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: expected an object at top level")
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"config {path}: unknown keys {unknown}")
    try:
        return EngineConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc


def config_hash(config: EngineConfig) -> str:
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# Ingestion


@dataclass(frozen=True)
class RecordError:
    """A rejected input record: which line, which record, and why."""

    line_number: int
    detection_id: str | None
    message: str


@dataclass
class IngestReport:
    """Per-record rejection log accumulated while a stream is consumed."""

    errors: list[RecordError] = field(default_factory=list)
    accepted: int = 0

    def reject(self, line_number: int, detection_id: str | None, message: str) -> None:
        self.errors.append(RecordError(line_number, detection_id, message))


def _parse_box(value, what: str) -> Box:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ValueError(f"{what} must be [x1, y1, x2, y2]")
    return Box(float(value[0]), float(value[1]), float(value[2]), float(value[3]))


def _parse_record(obj: dict, config: EngineConfig) -> DetectionRecord:
    if not isinstance(obj, dict):
        raise ValueError("record must be an object")

    def require(key, types):
        if key not in obj:
            raise ValueError(f"missing field {key!r}")
        v = obj[key]
        if not isinstance(v, types) or isinstance(v, bool):
            raise ValueError(f"field {key!r} has wrong type")
        return v

    detection_id = require("detection_id", str)
    frame_index = require("frame_index", int)
    if frame_index < 0:
        raise ValueError("frame_index must be non-negative")
    timestamp_ms = require("timestamp_ms", int)
    if timestamp_ms < 0:
        raise ValueError("timestamp_ms must be non-negative")
    confidence = float(require("confidence", (int, float)))
    if not 0.0 <= confidence <= 1.0:
        raise ValueError("confidence must lie in [0, 1]")
    state_raw = require("contact_state", str)
    try:
        contact_state = ContactState(state_raw)
    except ValueError:
        raise ValueError(f"unknown contact_state {state_raw!r}") from None
    object_box = _parse_box(require("object_box", (list, tuple)), "object_box")

    feat_raw = require("feature", (list, tuple))
    feature = np.asarray(feat_raw, dtype=np.float64)
    if feature.ndim != 1 or feature.shape[0] != config.feature_dim:
        raise ValueError(
            f"feature length {feature.shape[0] if feature.ndim == 1 else 'n/a'}"
            f" does not match configured dimension {config.feature_dim}"
        )
    if not np.all(np.isfinite(feature)):
        raise ValueError("feature contains non-finite values")
    if float(np.linalg.norm(feature)) <= 0.0:
        raise ValueError("feature has zero norm")

    hand_box = None
    if obj.get("hand_box") is not None:
        hand_box = _parse_box(obj["hand_box"], "hand_box")
    skin_ratio = obj.get("skin_ratio")
    if skin_ratio is not None:
        if not isinstance(skin_ratio, (int, float)) or isinstance(skin_ratio, bool):
            raise ValueError("skin_ratio must be a number")
        skin_ratio = float(skin_ratio)
        if not 0.0 <= skin_ratio <= 1.0:
            raise ValueError("skin_ratio must lie in [0, 1]")
    crop_ref = obj.get("crop_ref")
    if crop_ref is not None and not isinstance(crop_ref, str):
        raise ValueError("crop_ref must be a string")
    track_hint = obj.get("track_hint")
    if track_hint is not None and not isinstance(track_hint, str):
        raise ValueError("track_hint must be a string")

    return DetectionRecord(
        detection_id=detection_id,
        frame_index=frame_index,
        timestamp_ms=timestamp_ms,
        object_box=object_box,
        confidence=confidence,
        contact_state=contact_state,
        feature=feature,
        hand_box=hand_box,
        skin_ratio=skin_ratio,
        crop_ref=crop_ref,
        track_hint=track_hint,
    )


def record_from_dict(obj: dict, config: EngineConfig) -> DetectionRecord:
    """Parse one wire-format record dict (inverse of record_to_dict)."""
    return _parse_record(obj, config)


def ingest_stream(
    source: Iterable[str | dict],
    config: EngineConfig,
    report: IngestReport | None = None,
    on_error: Callable[[RecordError], None] | None = None,
) -> Iterator[DetectionRecord]:
    """Yield validated records from a stream of JSON lines (or parsed objects).

    Malformed records are rejected into `report` (and `on_error`, if given)
    without stopping the stream; well-formed records are always yielded.
    Frame-order violations and duplicate detection ids abort the whole stream
    with StreamOrderError since downstream state would be corrupt.
    """
    if report is None:
        report = IngestReport()
    seen_ids: set[str] = set()
    last_frame = -1
    for line_number, item in enumerate(source, start=1):
        if isinstance(item, str):
            stripped = item.strip()
            if not stripped:
                continue
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                err = RecordError(line_number, None, f"invalid JSON: {exc}")
                report.errors.append(err)
                if on_error:
                    on_error(err)
                continue
        else:
            obj = item
        try:
            rec = _parse_record(obj, config)
        except ValueError as exc:
            det_id = obj.get("detection_id") if isinstance(obj, dict) else None
            err = RecordError(line_number, det_id if isinstance(det_id, str) else None, str(exc))
            report.errors.append(err)
            if on_error:
                on_error(err)
            continue
        if rec.frame_index < last_frame:
            raise StreamOrderError(
                f"line {line_number}: frame_index {rec.frame_index} after {last_frame}"
            )
        if rec.detection_id in seen_ids:
            raise StreamOrderError(
                f"line {line_number}: duplicate detection_id {rec.detection_id!r}"
            )
        seen_ids.add(rec.detection_id)
        last_frame = rec.frame_index
        report.accepted += 1
        yield rec


def read_detections_file(
    path: str, config: EngineConfig, report: IngestReport | None = None
) -> Iterator[DetectionRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        yield from ingest_stream(fh, config, report=report)


def read_frames_file(path: str) -> dict[int, FrameMeta]:
    """Read the frame manifest: one FrameMeta JSON object per line."""
    frames: dict[int, FrameMeta] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                meta = FrameMeta(
                    frame_index=int(obj["frame_index"]),
                    width=int(obj["width"]),
                    height=int(obj["height"]),
                    image_ref=str(obj["image_ref"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_number}: bad frame record: {exc}") from exc
            if meta.frame_index in frames:
                raise ValueError(
                    f"{path}:{line_number}: duplicate frame_index {meta.frame_index}"
                )
            frames[meta.frame_index] = meta
    return frames


def write_frames_file(frames: Iterable[FrameMeta], fh: TextIO) -> None:
    for meta in sorted(frames, key=lambda m: m.frame_index):
        fh.write(
            json.dumps(
                {
                    "frame_index": meta.frame_index,
                    "width": meta.width,
                    "height": meta.height,
                    "image_ref": meta.image_ref,
                },
                separators=(", ", ": "),
            )
            + "\n"
        )


# --------------------------------------------------------------------------
# Detection filters


class DiscardReason(enum.Enum):
    NON_PORTABLE = "non_portable"
    OVERSIZED = "oversized"


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: DiscardReason | None = None


def filter_detection(
    rec: DetectionRecord, frame: FrameMeta, config: EngineConfig
) -> FilterDecision:
    """Keep a detection iff it is portable and neither box side strictly
    exceeds `oversize_fraction` of the corresponding frame dimension."""
    if rec.contact_state is not ContactState.PORTABLE_OBJECT:
        return FilterDecision(False, DiscardReason.NON_PORTABLE)
    if (
        rec.object_box.width > config.oversize_fraction * frame.width
        or rec.object_box.height > config.oversize_fraction * frame.height
    ):
        return FilterDecision(False, DiscardReason.OVERSIZED)
    return FilterDecision(True)


def filter_against_manifest(
    rec: DetectionRecord, frames: dict[int, FrameMeta], config: EngineConfig
) -> FilterDecision:
    try:
        frame = frames[rec.frame_index]
    except KeyError:
        raise UnknownFrameError(
            f"detection {rec.detection_id}: frame {rec.frame_index} not in manifest"
        ) from None
    return filter_detection(rec, frame, config)


def record_to_dict(rec: DetectionRecord) -> dict:
    """Wire-format dict for a record (JSON-line serialization)."""
    out: dict = {
        "detection_id": rec.detection_id,
        "frame_index": rec.frame_index,
        "timestamp_ms": rec.timestamp_ms,
        "object_box": rec.object_box.as_list(),
        "confidence": rec.confidence,
        "contact_state": rec.contact_state.value,
        "feature": [float(v) for v in rec.feature],
    }
    if rec.hand_box is not None:
        out["hand_box"] = rec.hand_box.as_list()
    if rec.skin_ratio is not None:
        out["skin_ratio"] = rec.skin_ratio
    if rec.crop_ref is not None:
        out["crop_ref"] = rec.crop_ref
    if rec.track_hint is not None:
        out["track_hint"] = rec.track_hint
    return out


def resolve_asset(root: str, ref: str) -> str:
    """Resolve a crop/image reference against an asset root, rejecting escape."""
    if os.path.isabs(ref):
        return ref
    joined = os.path.normpath(os.path.join(root, ref))
    root_abs = os.path.abspath(root)
    if os.path.commonpath([os.path.abspath(joined), root_abs]) != root_abs:
        raise ValueError(f"asset reference escapes session root: {ref!r}")
    return joined
