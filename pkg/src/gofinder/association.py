"""Stage 1: frame-wise tracking association.

Live tracks are carried forward by a pluggable predictor (the default is
plain box persistence with a short lifetime; an external tracker can inject
`track_hint` strings instead), matched to the frame's detections by IoU via
optimal assignment, and gated so distant leftovers fall through to Stage 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Box, DetectionRecord, EngineConfig


@dataclass
class Track:
    """A chain of per-frame detections sharing one identity hypothesis."""

    track_id: int
    member_detection_ids: list[str]
    last_box: Box
    last_frame_index: int
    cluster_id: int
    track_hint: str | None = None

    def extend(self, rec: DetectionRecord) -> None:
        if rec.frame_index <= self.last_frame_index:
            raise ValueError(
                f"track {self.track_id}: frame {rec.frame_index} does not advance"
                f" past {self.last_frame_index}"
            )
        self.member_detection_ids.append(rec.detection_id)
        self.last_box = rec.object_box
        self.last_frame_index = rec.frame_index
        if rec.track_hint is not None:
            self.track_hint = rec.track_hint


@dataclass
class AssignmentResult:
    matches: list[tuple[int, str, float]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[str] = field(default_factory=list)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def predict(track: Track, frame_index: int, config: EngineConfig) -> Box | None:
    """Persistence predictor: the last box survives a bounded frame gap."""
    if frame_index - track.last_frame_index <= config.track_max_gap_frames:
        return track.last_box
    return None


def solve_assignment(
    cost: np.ndarray, maximize: bool = False
) -> list[tuple[int, int]]:
    """Optimal (partial) assignment of rows to columns.

    The smaller dimension is fully assigned. Among equally optimal
    assignments the lexicographically smallest list of (row, col) pairs is
    returned, so results are deterministic and independent of solver
    internals.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        return []
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")

    rows, cols = cost.shape
    k = min(rows, cols)

    def solve_total(sub: np.ndarray) -> float:
        if sub.size == 0 or min(sub.shape) == 0:
            return 0.0
        ri, ci = linear_sum_assignment(sub, maximize=maximize)
        return float(sub[ri, ci].sum())

    optimum = solve_total(cost)
    tol = 1e-9 * max(1.0, abs(optimum))

    def achieves(total: float) -> bool:
        if maximize:
            return total >= optimum - tol
        return total <= optimum + tol

    # Fix pairs greedily in ascending (row, col) order; a candidate is kept
    # iff forcing it still completes to the optimal total. Rows skipped over
    # stay unassigned, which is only allowed while enough rows remain below.
    pairs: list[tuple[int, int]] = []
    free_rows = list(range(rows))
    free_cols = list(range(cols))
    fixed_total = 0.0
    for step in range(k):
        need_after = k - step - 1
        chosen = None
        chosen_pos = -1
        for r_pos, r in enumerate(free_rows):
            if len(free_rows) - r_pos - 1 < need_after:
                break
            for c in free_cols:
                rest = cost[np.ix_(free_rows[r_pos + 1 :], [x for x in free_cols if x != c])]
                total = fixed_total + float(cost[r, c]) + solve_total(rest)
                if achieves(total):
                    chosen = (r, c)
                    chosen_pos = r_pos
                    break
            if chosen:
                break
        assert chosen is not None, "optimal assignment must be completable"
        pairs.append(chosen)
        fixed_total += float(cost[chosen])
        free_rows = free_rows[chosen_pos + 1 :]
        free_cols.remove(chosen[1])
    return pairs


def associate(
    tracks: list[Track],
    detections: list[DetectionRecord],
    config: EngineConfig,
) -> AssignmentResult:
    """Match one frame's detections against the live tracks.

    Hint-carrying detections are bound to the track with the same hint
    before any geometry is consulted. The rest are assigned by maximizing
    total IoU between predicted and detected boxes; matches under the IoU
    gate are demoted to unmatched on both sides.
    """
    if detections:
        frames = {d.frame_index for d in detections}
        if len(frames) > 1:
            raise ValueError(f"detections span multiple frames: {sorted(frames)}")
        frame_index = detections[0].frame_index
    else:
        frame_index = None

    result = AssignmentResult()
    hint_to_track: dict[str, Track] = {}
    for tr in tracks:
        if tr.track_hint is not None and tr.track_hint not in hint_to_track:
            hint_to_track[tr.track_hint] = tr

    matched_tracks: set[int] = set()
    matched_dets: set[str] = set()
    for det in detections:
        if det.track_hint is None:
            continue
        tr = hint_to_track.get(det.track_hint)
        if tr is None or tr.track_id in matched_tracks:
            continue
        result.matches.append((tr.track_id, det.detection_id, iou(tr.last_box, det.object_box)))
        matched_tracks.add(tr.track_id)
        matched_dets.add(det.detection_id)

    open_tracks: list[Track] = []
    predictions: list[Box] = []
    for tr in tracks:
        if tr.track_id in matched_tracks:
            continue
        box = predict(tr, frame_index, config) if frame_index is not None else None
        if box is None:
            result.unmatched_tracks.append(tr.track_id)
        else:
            open_tracks.append(tr)
            predictions.append(box)
    open_dets = [d for d in detections if d.detection_id not in matched_dets]

    if open_tracks and open_dets:
        cost = np.zeros((len(open_tracks), len(open_dets)))
        for i, box in enumerate(predictions):
            for j, det in enumerate(open_dets):
                cost[i, j] = iou(box, det.object_box)
        assigned_rows: set[int] = set()
        assigned_cols: set[int] = set()
        for r, c in solve_assignment(cost, maximize=True):
            score = float(cost[r, c])
            if score < config.track_gate_iou:
                continue
            result.matches.append(
                (open_tracks[r].track_id, open_dets[c].detection_id, score)
            )
            assigned_rows.add(r)
            assigned_cols.add(c)
        for i, tr in enumerate(open_tracks):
            if i not in assigned_rows:
                result.unmatched_tracks.append(tr.track_id)
        for j, det in enumerate(open_dets):
            if j not in assigned_cols:
                result.unmatched_detections.append(det.detection_id)
    else:
        result.unmatched_tracks.extend(tr.track_id for tr in open_tracks)
        result.unmatched_detections.extend(d.detection_id for d in open_dets)

    return result
