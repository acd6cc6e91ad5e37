"""Stages 2 and 3: the cluster store and the merge machinery.

Detections that Stage-1 tracking could not place are matched locally against
every existing cluster (max/median of the gated similarities); after each
frame, clusters are merged pairwise globally under the same criterion. The
retrial ledger keeps the global pass cheap: a pair is re-examined only once
its similarity matrix has outgrown the last attempt by the configured
factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, TextIO

from .core import (
    Box,
    DetectionRecord,
    EngineConfig,
    FrameMeta,
    FilterDecision,
    config_hash,
    filter_against_manifest,
    record_from_dict,
    record_to_dict,
)
from .association import Track, associate, predict
from .similarity import SkinRatioResolver, gated_similarity, median


@dataclass
class Cluster:
    """A discovered object instance: its member detections in frame order."""

    cluster_id: int
    members: list[DetectionRecord]
    created_at_frame: int

    @property
    def last(self) -> DetectionRecord:
        return self.members[-1]

    @property
    def last_detection_id(self) -> str:
        return self.members[-1].detection_id

    @property
    def last_frame_index(self) -> int:
        return self.members[-1].frame_index


class ScoreCache:
    """Gated-similarity scores keyed by unordered detection-id pair.

    Scores are immutable once computed, which is what lets Stage 3 reuse
    Stage-2 results bit-for-bit.
    """

    def __init__(self) -> None:
        self._scores: dict[tuple[str, str], float] = {}

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def __len__(self) -> int:
        return len(self._scores)

    def __contains__(self, pair: tuple[str, str]) -> bool:
        return self._key(*pair) in self._scores

    def get(self, a: str, b: str) -> float | None:
        return self._scores.get(self._key(a, b))

    def get_or_compute(
        self, a: DetectionRecord, b: DetectionRecord, config: EngineConfig
    ) -> float:
        key = self._key(a.detection_id, b.detection_id)
        score = self._scores.get(key)
        if score is None:
            score = gated_similarity(a, b, config)
            self._scores[key] = score
        return score


class RetrialLedger:
    """Similarity-matrix element count at each cluster pair's last merge attempt."""

    def __init__(self) -> None:
        self._counts: dict[tuple[int, int], int] = {}

    @staticmethod
    def _key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a <= b else (b, a)

    def __len__(self) -> int:
        return len(self._counts)

    def last_attempt(self, a: int, b: int) -> int | None:
        return self._counts.get(self._key(a, b))

    def should_attempt(self, a: int, b: int, elements: int, growth_factor: float) -> bool:
        last = self._counts.get(self._key(a, b))
        return last is None or elements > growth_factor * last

    def record_attempt(self, a: int, b: int, elements: int) -> None:
        if elements <= 0:
            raise ValueError("element count must be positive")
        self._counts[self._key(a, b)] = elements

    def drop_cluster(self, cluster_id: int) -> None:
        self._counts = {k: v for k, v in self._counts.items() if cluster_id not in k}

    def items(self) -> list[tuple[int, int, int]]:
        return sorted((a, b, n) for (a, b), n in self._counts.items())


class ClusterStore:
    """All clusters of a session plus the arrival order used for tie-breaks."""

    def __init__(self) -> None:
        self.clusters: dict[int, Cluster] = {}
        self.next_cluster_id = 0
        self._arrival: dict[str, int] = {}
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self.clusters)

    def _note(self, rec: DetectionRecord) -> None:
        if rec.detection_id not in self._arrival:
            self._arrival[rec.detection_id] = self._next_seq
            self._next_seq += 1

    def _order_key(self, rec: DetectionRecord) -> tuple[int, int]:
        return (rec.frame_index, self._arrival[rec.detection_id])

    def create_cluster(self, rec: DetectionRecord) -> int:
        self._note(rec)
        cid = self.next_cluster_id
        self.next_cluster_id += 1
        self.clusters[cid] = Cluster(cid, [rec], rec.frame_index)
        return cid

    def append_member(self, cluster_id: int, rec: DetectionRecord) -> None:
        self._note(rec)
        self.clusters[cluster_id].members.append(rec)

    def merge(self, survivor_id: int, absorbed_id: int) -> None:
        if survivor_id > absorbed_id:
            raise ValueError("survivor must take the lower cluster_id")
        a = self.clusters[survivor_id]
        b = self.clusters.pop(absorbed_id)
        a.members = sorted(a.members + b.members, key=self._order_key)
        a.created_at_frame = min(a.created_at_frame, b.created_at_frame)

    def detection_ids(self) -> set[str]:
        return {m.detection_id for c in self.clusters.values() for m in c.members}

    def partition(self) -> set[frozenset[str]]:
        return {
            frozenset(m.detection_id for m in c.members) for c in self.clusters.values()
        }


# --------------------------------------------------------------------------
# Events


@dataclass(frozen=True)
class TrackExtended:
    frame_index: int
    track_id: int
    detection_id: str
    cluster_id: int
    kind = "track_extended"


@dataclass(frozen=True)
class ClusterCreated:
    frame_index: int
    cluster_id: int
    detection_id: str
    track_id: int
    kind = "cluster_created"


@dataclass(frozen=True)
class DetectionMerged:
    frame_index: int
    detection_id: str
    cluster_id: int
    track_id: int
    kind = "detection_merged"


@dataclass(frozen=True)
class ClustersMerged:
    frame_index: int
    cluster_id: int
    absorbed_cluster_id: int
    kind = "clusters_merged"


Event = TrackExtended | ClusterCreated | DetectionMerged | ClustersMerged


def event_to_dict(event: Event) -> dict:
    out = {"frame_index": event.frame_index, "kind": event.kind}
    for name, value in vars(event).items():
        if name != "frame_index":
            out[name] = value
    return out


def write_event_log(events: Iterable[Event], fh: TextIO) -> None:
    for event in events:
        fh.write(json.dumps(event_to_dict(event), separators=(", ", ": ")) + "\n")


# --------------------------------------------------------------------------
# Stage 2: local matching of a single detection against existing clusters


def qualifies(scores: list[float], config: EngineConfig) -> bool:
    """The merge criterion shared by Stages 2 and 3: max AND median above
    their thresholds (non-strict)."""
    return (
        max(scores) >= config.max_sim_threshold
        and median(scores) >= config.median_sim_threshold
    )


def stage2_match(
    det: DetectionRecord,
    store: ClusterStore,
    cache: ScoreCache,
    config: EngineConfig,
) -> tuple[int, bool]:
    """Merge `det` into the best qualifying cluster, or open a new one.

    Returns (cluster_id, created). Every similarity computed here lands in
    the cache for Stage 3 to reuse.
    """
    best_key: tuple[float, float, int] | None = None
    best_cid: int | None = None
    for cid in sorted(store.clusters):
        cluster = store.clusters[cid]
        scores = [cache.get_or_compute(det, m, config) for m in cluster.members]
        if not qualifies(scores, config):
            continue
        key = (max(scores), median(scores), -cid)
        if best_key is None or key > best_key:
            best_key = key
            best_cid = cid
    if best_cid is not None:
        store.append_member(best_cid, det)
        return best_cid, False
    return store.create_cluster(det), True


# --------------------------------------------------------------------------
# Stage 3: global cluster-wise merging


def stage3_merge_pass(
    store: ClusterStore,
    cache: ScoreCache,
    ledger: RetrialLedger,
    config: EngineConfig,
    attempt_log: list[tuple[int, int, int]] | None = None,
) -> list[tuple[int, int]]:
    """Merge cluster pairs until no attemptable pair qualifies.

    Pairs are scanned in ascending id order; a pair is attempted only when
    its element count has outgrown the ledger entry. After a merge the
    survivor keeps the lower id, both ids' ledger entries are dropped, and
    the scan restarts over the updated store.
    """
    merges: list[tuple[int, int]] = []
    while True:
        merged = False
        ids = sorted(store.clusters)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                cluster_a = store.clusters[a]
                cluster_b = store.clusters[b]
                elements = len(cluster_a.members) * len(cluster_b.members)
                if not ledger.should_attempt(a, b, elements, config.retrial_growth_factor):
                    continue
                scores = [
                    cache.get_or_compute(ma, mb, config)
                    for ma in cluster_a.members
                    for mb in cluster_b.members
                ]
                ledger.record_attempt(a, b, elements)
                if attempt_log is not None:
                    attempt_log.append((a, b, elements))
                if qualifies(scores, config):
                    store.merge(a, b)
                    ledger.drop_cluster(a)
                    ledger.drop_cluster(b)
                    merges.append((a, b))
                    merged = True
                    break
            if merged:
                break
        if not merged:
            return merges


# --------------------------------------------------------------------------
# The pipeline driver


class DiscoveryEngine:
    """Owns the session state and applies the three stages frame by frame."""

    def __init__(
        self,
        config: EngineConfig,
        frames: dict[int, FrameMeta],
        asset_root: str | None = None,
    ) -> None:
        self.config = config
        self.frames = frames
        self.store = ClusterStore()
        self.tracks: dict[int, Track] = {}
        self.cache = ScoreCache()
        self.ledger = RetrialLedger()
        self.events: list[Event] = []
        self.next_track_id = 0
        self.skin_resolver = SkinRatioResolver(asset_root)
        self.discards: dict[str, int] = {}
        self.processed = 0

    def _spawn_track(self, rec: DetectionRecord, cluster_id: int) -> Track:
        track = Track(
            track_id=self.next_track_id,
            member_detection_ids=[rec.detection_id],
            last_box=rec.object_box,
            last_frame_index=rec.frame_index,
            cluster_id=cluster_id,
            track_hint=rec.track_hint,
        )
        self.next_track_id += 1
        self.tracks[track.track_id] = track
        return track

    def process_frame(self, detections: list[DetectionRecord]) -> list[Event]:
        """Run Stage 1/2/3 over one frame's (pre-filtered) detections."""
        events: list[Event] = []
        if not detections:
            return events
        frame_index = detections[0].frame_index
        det_order = {d.detection_id: i for i, d in enumerate(detections)}
        by_id = {d.detection_id: d for d in detections}

        live = [self.tracks[tid] for tid in sorted(self.tracks)]
        result = associate(live, detections, self.config)

        for track_id, det_id, _ in sorted(result.matches, key=lambda m: det_order[m[1]]):
            track = self.tracks[track_id]
            det = by_id[det_id]
            track.extend(det)
            self.store.append_member(track.cluster_id, det)
            events.append(TrackExtended(frame_index, track_id, det_id, track.cluster_id))

        for tid in sorted(result.unmatched_tracks):
            if predict(self.tracks[tid], frame_index, self.config) is None:
                del self.tracks[tid]

        for det_id in sorted(result.unmatched_detections, key=det_order.__getitem__):
            det = by_id[det_id]
            cluster_id, created = stage2_match(det, self.store, self.cache, self.config)
            track = self._spawn_track(det, cluster_id)
            if created:
                events.append(ClusterCreated(frame_index, cluster_id, det_id, track.track_id))
            else:
                events.append(DetectionMerged(frame_index, det_id, cluster_id, track.track_id))

        for survivor, absorbed in stage3_merge_pass(
            self.store, self.cache, self.ledger, self.config
        ):
            events.append(ClustersMerged(frame_index, survivor, absorbed))
            for track in self.tracks.values():
                if track.cluster_id == absorbed:
                    track.cluster_id = survivor

        self.events.extend(events)
        self.processed += len(detections)
        return events

    def process_stream(self, records: Iterable[DetectionRecord]) -> None:
        """Filter, resolve skin ratios, batch per frame, and process."""
        batch: list[DetectionRecord] = []
        current_frame: int | None = None
        for rec in records:
            decision: FilterDecision = filter_against_manifest(rec, self.frames, self.config)
            if not decision.keep:
                reason = decision.reason.value
                self.discards[reason] = self.discards.get(reason, 0) + 1
                continue
            rec = self.skin_resolver.resolve(rec)
            if current_frame is not None and rec.frame_index != current_frame:
                self.process_frame(batch)
                batch = []
            current_frame = rec.frame_index
            batch.append(rec)
        if batch:
            self.process_frame(batch)


# --------------------------------------------------------------------------
# State snapshot

STATE_SCHEMA = "gofinder-state-v1"


def save_state(engine: DiscoveryEngine, fh: TextIO) -> None:
    arrival_order = sorted(
        engine.store._arrival, key=engine.store._arrival.__getitem__
    )
    doc = {
        "schema": STATE_SCHEMA,
        "config": engine.config.to_dict(),
        "config_hash": config_hash(engine.config),
        "next_cluster_id": engine.store.next_cluster_id,
        "next_track_id": engine.next_track_id,
        "arrival_order": arrival_order,
        "clusters": [
            {
                "cluster_id": cid,
                "created_at_frame": c.created_at_frame,
                "members": [record_to_dict(m) for m in c.members],
            }
            for cid, c in sorted(engine.store.clusters.items())
        ],
        "tracks": [
            {
                "track_id": tid,
                "member_detection_ids": t.member_detection_ids,
                "last_box": t.last_box.as_list(),
                "last_frame_index": t.last_frame_index,
                "cluster_id": t.cluster_id,
                "track_hint": t.track_hint,
            }
            for tid, t in sorted(engine.tracks.items())
        ],
        "ledger": [[a, b, n] for a, b, n in engine.ledger.items()],
    }
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def load_state(fh: TextIO, frames: dict[int, FrameMeta], asset_root: str | None = None) -> DiscoveryEngine:
    doc = json.load(fh)
    if doc.get("schema") != STATE_SCHEMA:
        raise ValueError(f"unsupported state schema {doc.get('schema')!r}")
    config = EngineConfig(**doc["config"])
    if doc.get("config_hash") != config_hash(config):
        raise ValueError("state config hash mismatch")
    engine = DiscoveryEngine(config, frames, asset_root)
    engine.store.next_cluster_id = doc["next_cluster_id"]
    engine.next_track_id = doc["next_track_id"]
    for cdoc in doc["clusters"]:
        members = [record_from_dict(m, config) for m in cdoc["members"]]
        engine.store.clusters[cdoc["cluster_id"]] = Cluster(
            cdoc["cluster_id"], members, cdoc["created_at_frame"]
        )
    for seq, det_id in enumerate(doc["arrival_order"]):
        engine.store._arrival[det_id] = seq
    engine.store._next_seq = len(doc["arrival_order"])
    for tdoc in doc["tracks"]:
        box = tdoc["last_box"]
        engine.tracks[tdoc["track_id"]] = Track(
            track_id=tdoc["track_id"],
            member_detection_ids=list(tdoc["member_detection_ids"]),
            last_box=Box(*box),
            last_frame_index=tdoc["last_frame_index"],
            cluster_id=tdoc["cluster_id"],
            track_hint=tdoc.get("track_hint"),
        )
    for a, b, n in doc["ledger"]:
        engine.ledger.record_attempt(a, b, n)
    return engine
