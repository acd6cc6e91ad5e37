"""Labeled synthetic detection streams and an offline clustering oracle.

The generator builds streams whose separation properties are guaranteed by
construction, not merely in expectation: per-instance base vectors at a
minimum pairwise angle, per-detection perturbations capped at a maximum
angle, disjoint spatial lanes so identity is never ambiguous to tracking,
and per-instance box aspect and object-to-hand area ratios held constant so
no constraint gate can fire within an instance.

The oracle ignores tracking and the retrial ledger entirely: it certifies
the max/median merge criterion by offline agglomeration over the full
session.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import Box, ContactState, DetectionRecord, EngineConfig, FrameMeta
from .metrics import GroundTruthLabeling, write_labels
from .similarity import gated_similarity, write_crop


class ScenarioError(ValueError):
    """Raised for invalid or infeasible scenario specifications."""


@dataclass(frozen=True)
class ScenarioSpec:
    instance_count: int = 4
    appearance_count: int = 2
    appearance_frames: tuple[int, int] = (4, 8)
    appearance_gap_frames: tuple[int, int] = (5, 20)
    feature_dim: int = 64
    intra_noise_deg: float = 10.0
    inter_min_angle_deg: float = 80.0
    occlusion_prob: float = 0.0
    occlusion_gap_frames: tuple[int, int] = (1, 10)
    frame_width: int = 640
    frame_height: int = 480
    fps: float = 10.0
    hand_area_ratio_range: tuple[float, float] = (1.0, 2.0)
    emit_crops: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.instance_count < 1:
            raise ScenarioError("instance_count must be >= 1")
        if self.appearance_count < 1:
            raise ScenarioError("appearance_count must be >= 1")
        for name in ("appearance_frames", "appearance_gap_frames", "occlusion_gap_frames"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ScenarioError(f"{name} must be a valid positive range")
        if self.feature_dim < 2:
            raise ScenarioError("feature_dim must be >= 2")
        if not 0.0 <= self.intra_noise_deg < 90.0:
            raise ScenarioError("intra_noise_deg must lie in [0, 90)")
        if not 0.0 < self.inter_min_angle_deg <= 120.0:
            raise ScenarioError("inter_min_angle_deg must lie in (0, 120]")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ScenarioError("occlusion_prob must lie in [0, 1]")
        if self.frame_width < 32 or self.frame_height < 32:
            raise ScenarioError("frame dimensions too small")
        if self.fps <= 0:
            raise ScenarioError("fps must be positive")
        lo, hi = self.hand_area_ratio_range
        if lo < 1.0 or hi < lo:
            raise ScenarioError("hand_area_ratio_range must satisfy 1 <= lo <= hi")


def load_scenario(path: str) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected an object at top level")
    known = {f.name for f in dataclasses.fields(ScenarioSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ScenarioError(f"{path}: unknown keys {unknown}")
    for key, value in raw.items():
        if isinstance(value, list):
            raw[key] = tuple(value)
    return ScenarioSpec(**raw)


def _base_vectors(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit base vectors with pairwise angle >= inter_min_angle_deg."""
    n, d = spec.instance_count, spec.feature_dim
    if spec.inter_min_angle_deg <= 90.0 and n <= d:
        # Orthonormal basis: pairwise angle exactly 90 degrees.
        gauss = rng.standard_normal((d, n))
        q, _ = np.linalg.qr(gauss)
        return q.T.copy()
    # Rejection sampling for the general case.
    max_cos = math.cos(math.radians(spec.inter_min_angle_deg))
    bases: list[np.ndarray] = []
    attempts = 0
    limit = 1000 * n
    while len(bases) < n:
        attempts += 1
        if attempts > limit:
            raise ScenarioError(
                f"cannot pack {n} vectors at >= {spec.inter_min_angle_deg} degrees"
                f" in dimension {d}"
            )
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        if all(float(np.dot(v, b)) <= max_cos + 1e-12 for b in bases):
            bases.append(v)
    return np.stack(bases)


def _perturb(base: np.ndarray, max_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate `base` by a random angle in [0, max_deg] toward a random
    orthogonal direction; the angular cap is exact."""
    if max_deg == 0.0:
        return base.copy()
    raw = rng.standard_normal(base.shape[0])
    orth = raw - np.dot(raw, base) * base
    norm = float(np.linalg.norm(orth))
    if norm < 1e-12:
        return base.copy()
    orth /= norm
    phi = math.radians(rng.uniform(0.0, max_deg))
    return math.cos(phi) * base + math.sin(phi) * orth


def _lane_grid(spec: ScenarioSpec) -> list[tuple[float, float, float, float]]:
    """Disjoint spatial cells, one per instance."""
    n = spec.instance_count
    gx = math.ceil(math.sqrt(n))
    gy = math.ceil(n / gx)
    cw = spec.frame_width / gx
    ch = spec.frame_height / gy
    cells = []
    for i in range(n):
        col, row = i % gx, i // gx
        cells.append((col * cw, row * ch, cw, ch))
    return cells


@dataclass
class GeneratedScenario:
    detections_path: str
    frames_path: str
    labels_path: str
    labeling: GroundTruthLabeling
    record_count: int
    frame_count: int


def generate(spec: ScenarioSpec, out_dir: str) -> GeneratedScenario:
    """Write a synthetic session (detections, frames, labels) to out_dir."""
    rng = np.random.default_rng(spec.seed)
    bases = _base_vectors(spec, rng)
    cells = _lane_grid(spec)

    records: list[dict] = []
    labels: dict[str, str] = {}
    max_frame = 0

    for inst in range(spec.instance_count):
        label = f"inst{inst:03d}"
        cx0, cy0, cw, ch = cells[inst]
        base_side = 0.35 * min(cw, ch)
        aspect = rng.uniform(0.8, 1.25)
        box_h = base_side
        box_w = aspect * base_side
        hand_q = rng.uniform(*spec.hand_area_ratio_range)
        hand_scale = 1.0 / math.sqrt(hand_q)
        skin = rng.uniform(0.0, 0.25)

        frame = int(rng.integers(0, 15))
        for app in range(spec.appearance_count):
            duration = int(rng.integers(spec.appearance_frames[0], spec.appearance_frames[1] + 1))
            offsets = list(range(duration))
            if duration >= 3 and rng.uniform() < spec.occlusion_prob:
                gap_start = int(rng.integers(1, duration - 1))
                gap_len = int(
                    rng.integers(spec.occlusion_gap_frames[0], spec.occlusion_gap_frames[1] + 1)
                )
                gap_len = min(gap_len, duration - 1 - gap_start)
                if gap_len >= 1:
                    offsets = [o for o in offsets if not gap_start <= o < gap_start + gap_len]

            # Smooth drift inside the lane; a fresh placement per appearance.
            margin = 0.05 * min(cw, ch)
            x_lo, x_hi = cx0 + margin, cx0 + cw - margin - box_w
            y_lo, y_hi = cy0 + margin, cy0 + ch - margin - box_h
            x = rng.uniform(x_lo, x_hi)
            y = rng.uniform(y_lo, y_hi)
            max_step = 0.02 * min(cw, ch)
            vx = rng.uniform(-max_step, max_step)
            vy = rng.uniform(-max_step, max_step)

            for off in offsets:
                f = frame + off
                max_frame = max(max_frame, f)
                px = min(max(x + vx * off, x_lo), x_hi)
                py = min(max(y + vy * off, y_lo), y_hi)
                obox = Box(px, py, px + box_w, py + box_h)
                hw, hh = box_w * hand_scale, box_h * hand_scale
                hx = px + (box_w - hw) / 2.0
                hy = py + (box_h - hh) / 2.0
                hbox = Box(hx, hy, hx + hw, hy + hh)
                det_id = f"d{inst:03d}a{app:02d}f{f:06d}"
                feature = _perturb(bases[inst], spec.intra_noise_deg, rng)
                rec = {
                    "detection_id": det_id,
                    "frame_index": f,
                    "timestamp_ms": round(f * 1000.0 / spec.fps),
                    "object_box": [obox.x1, obox.y1, obox.x2, obox.y2],
                    "confidence": round(rng.uniform(0.5, 1.0), 6),
                    "contact_state": ContactState.PORTABLE_OBJECT.value,
                    "feature": [float(v) for v in feature],
                    "hand_box": [hbox.x1, hbox.y1, hbox.x2, hbox.y2],
                    "skin_ratio": round(skin, 6),
                }
                if spec.emit_crops:
                    rec["crop_ref"] = f"crops/{det_id}.raw"
                records.append(rec)
                labels[det_id] = label

            gap = int(
                rng.integers(spec.appearance_gap_frames[0], spec.appearance_gap_frames[1] + 1)
            )
            frame += duration + gap

    records.sort(key=lambda r: (r["frame_index"], r["detection_id"]))

    os.makedirs(out_dir, exist_ok=True)
    detections_path = os.path.join(out_dir, "detections.jsonl")
    with open(detections_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(", ", ": ")) + "\n")

    frames_path = os.path.join(out_dir, "frames.jsonl")
    with open(frames_path, "w", encoding="utf-8") as fh:
        for f in range(max_frame + 1):
            meta = {
                "frame_index": f,
                "width": spec.frame_width,
                "height": spec.frame_height,
                "image_ref": f"frames/{f:06d}.png",
            }
            fh.write(json.dumps(meta, separators=(", ", ": ")) + "\n")

    if spec.emit_crops:
        crops_dir = os.path.join(out_dir, "crops")
        os.makedirs(crops_dir, exist_ok=True)
        palette = rng.integers(40, 216, size=(spec.instance_count, 3))
        for rec in records:
            inst = int(rec["detection_id"][1:4])
            pixels = np.tile(palette[inst].astype(np.uint8), (24, 24, 1))
            write_crop(os.path.join(crops_dir, f"{rec['detection_id']}.raw"), pixels)

    labeling = GroundTruthLabeling(labels, frozenset({f"inst{i:03d}" for i in range(spec.instance_count)}))
    labels_path = os.path.join(out_dir, "labels.txt")
    with open(labels_path, "w", encoding="utf-8") as fh:
        write_labels(labeling, fh)

    return GeneratedScenario(
        detections_path=detections_path,
        frames_path=frames_path,
        labels_path=labels_path,
        labeling=labeling,
        record_count=len(records),
        frame_count=max_frame + 1,
    )


def scenario_frames(spec: ScenarioSpec, frame_count: int) -> dict[int, FrameMeta]:
    return {
        f: FrameMeta(f, spec.frame_width, spec.frame_height, f"frames/{f:06d}.png")
        for f in range(frame_count)
    }


# --------------------------------------------------------------------------
# Offline oracle


def oracle_cluster(
    records: list[DetectionRecord], config: EngineConfig
) -> set[frozenset[str]]:
    """Offline agglomerative clustering under the max/median criterion.

    Starts from singletons and repeatedly merges the qualifying pair with
    the greatest matrix max (ties: greater median, then smallest group ids).
    Groups are keyed by their lexicographically smallest member id, so the
    result is independent of input order.
    """
    recs = list(records)
    n = len(recs)
    if n == 0:
        return set()
    order = sorted(range(n), key=lambda i: recs[i].detection_id)
    recs = [recs[i] for i in order]

    sim = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = gated_similarity(recs[i], recs[j], config)
            sim[i, j] = sim[j, i] = s

    groups: dict[str, list[int]] = {recs[i].detection_id: [i] for i in range(n)}

    def pair_stats(ga: str, gb: str) -> tuple[float, float]:
        block = sim[np.ix_(groups[ga], groups[gb])]
        return float(block.max()), float(np.median(block))

    # Only qualifying pairs are tracked; a pair's stats change only when one
    # of its groups merges, at which point it is recomputed anyway.
    qualifying: dict[tuple[str, str], tuple[float, float]] = {}
    keys = sorted(groups)
    for i, ga in enumerate(keys):
        for gb in keys[i + 1 :]:
            mx = float(sim[groups[ga][0], groups[gb][0]])
            if mx >= config.max_sim_threshold and mx >= config.median_sim_threshold:
                qualifying[(ga, gb)] = (mx, mx)

    while qualifying:
        best_key = None
        best_pair = None
        for (ga, gb), (mx, md) in qualifying.items():
            key = (-mx, -md, ga, gb)
            if best_key is None or key < best_key:
                best_key = key
                best_pair = (ga, gb)
        ga, gb = best_pair
        keep, gone = (ga, gb) if ga < gb else (gb, ga)
        groups[keep] = sorted(groups[keep] + groups[gone])
        del groups[gone]
        qualifying = {
            pair: stats
            for pair, stats in qualifying.items()
            if ga not in pair and gb not in pair
        }
        for other in groups:
            if other == keep:
                continue
            mx, md = pair_stats(keep, other)
            if mx >= config.max_sim_threshold and md >= config.median_sim_threshold:
                pair = (keep, other) if keep < other else (other, keep)
                qualifying[pair] = (mx, md)

    return {frozenset(recs[i].detection_id for i in idxs) for idxs in groups.values()}
