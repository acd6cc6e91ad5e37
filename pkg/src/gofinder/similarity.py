"""Appearance similarity and the first-person constraint gates.

A pair of detections is compared by the cosine of their feature vectors,
except that three cheap geometric/color cues can veto the comparison
outright: mismatched box aspect ratios, too much skin color in either crop,
and mismatched object-to-hand area ratios. A vetoed pair scores exactly 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .core import DetectionRecord, EngineConfig


class GateReason(enum.Enum):
    ASPECT_RATIO = "aspect_ratio"
    SKIN_COLOR = "skin_color"
    AREA_RATIO = "area_ratio"


@dataclass(frozen=True)
class GateReport:
    reasons: frozenset[GateReason]

    @property
    def gated(self) -> bool:
        return bool(self.reasons)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na <= 0.0 or nb <= 0.0:
        raise ValueError("cosine undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def median(values) -> float:
    values = list(values)
    if not values:
        raise ValueError("median of empty list")
    return float(np.median(values))


# Explicit-RGB skin classifier; pixel order: R, G, B.
def _skin_mask(pixels: np.ndarray) -> np.ndarray:
    p = pixels.astype(np.int16)
    r, g, b = p[..., 0], p[..., 1], p[..., 2]
    return (
        (r > 95)
        & (g > 40)
        & (b > 20)
        & (r > g)
        & (r > b)
        & (p.max(axis=-1) - p.min(axis=-1) > 15)
        & (np.abs(r - g) > 15)
    )


def skin_ratio(pixels: np.ndarray) -> float:
    """Fraction of pixels classified as skin by the fixed RGB rule."""
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise ValueError("empty pixel buffer")
    if pixels.shape[-1] != 3:
        raise ValueError(f"expected RGB pixels, got trailing dimension {pixels.shape[-1]}")
    mask = _skin_mask(pixels)
    return float(np.count_nonzero(mask)) / mask.size


def read_crop(path: str) -> np.ndarray:
    """Read a crop raster: ASCII header "W H\\n", then W*H*3 raw RGB bytes."""
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            ch = fh.read(1)
            if not ch:
                raise ValueError(f"{path}: truncated header")
            if ch == b"\n":
                break
            header += ch
        try:
            w_s, h_s = header.decode("ascii").split()
            w, h = int(w_s), int(h_s)
        except (UnicodeDecodeError, ValueError) as exc:
            raise ValueError(f"{path}: malformed header {bytes(header)!r}") from exc
        if w <= 0 or h <= 0:
            raise ValueError(f"{path}: non-positive dimensions {w}x{h}")
        data = fh.read(w * h * 3)
        if len(data) != w * h * 3:
            raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def write_crop(path: str, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("crop must be an HxWx3 array")
    h, w = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(pixels.tobytes())


class SkinRatioResolver:
    """Fills in missing skin ratios from crop rasters.

    Precomputed ratios on the record always win. When neither a ratio nor a
    readable crop is available the record is left as-is and a miss is
    counted; the skin gate then simply cannot trigger for that detection.
    """

    def __init__(self, asset_root: str | None = None):
        self.asset_root = asset_root
        self.misses = 0

    def resolve(self, rec: DetectionRecord) -> DetectionRecord:
        if rec.skin_ratio is not None:
            return rec
        if rec.crop_ref is None:
            self.misses += 1
            return rec
        path = rec.crop_ref
        if self.asset_root is not None:
            from .core import resolve_asset

            path = resolve_asset(self.asset_root, rec.crop_ref)
        ratio = skin_ratio(read_crop(path))
        return replace(rec, skin_ratio=ratio)


def _symmetric_ratio(x: float, y: float) -> float:
    return max(x / y, y / x)


def gate_pair(a: DetectionRecord, b: DetectionRecord, config: EngineConfig) -> GateReport:
    """Evaluate the three constraint gates for a pair. All comparisons strict."""
    reasons = set()
    if _symmetric_ratio(a.object_box.aspect_ratio, b.object_box.aspect_ratio) > config.gate_aspect_ratio:
        reasons.add(GateReason.ASPECT_RATIO)
    for rec in (a, b):
        if rec.skin_ratio is not None and rec.skin_ratio > config.gate_skin_ratio:
            reasons.add(GateReason.SKIN_COLOR)
            break
    if a.hand_box is not None and b.hand_box is not None:
        qa = a.object_box.area / a.hand_box.area
        qb = b.object_box.area / b.hand_box.area
        if _symmetric_ratio(qa, qb) > config.gate_area_ratio:
            reasons.add(GateReason.AREA_RATIO)
    return GateReport(frozenset(reasons))


def gated_similarity(a: DetectionRecord, b: DetectionRecord, config: EngineConfig) -> float:
    """Cosine similarity, forced to exactly 0 when any gate fires."""
    if gate_pair(a, b, config).gated:
        return 0.0
    return cosine(a.feature, b.feature)
