"""The hand-held object timeline: clusters ordered by last appearance.

Each entry points at the cluster's final member detection: its crop is the
thumbnail, its frame is the scene the user is shown. Entries are sorted most
recent first so the freshest sighting of every object heads the list.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TextIO

from .clustering import ClusterStore
from .core import Box, FrameMeta

TIMELINE_SCHEMA = "gofinder-timeline-v1"


@dataclass(frozen=True)
class TimelineEntry:
    cluster_id: int
    thumbnail: str | None
    last_frame: FrameMeta
    last_detection_id: str
    last_timestamp_ms: int
    last_box: Box
    member_count: int


@dataclass(frozen=True)
class Timeline:
    entries: tuple[TimelineEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def build_timeline(store: ClusterStore, frames: dict[int, FrameMeta]) -> Timeline:
    """One entry per cluster, last appearance first, ties by cluster id."""
    entries = []
    for cid in sorted(store.clusters):
        cluster = store.clusters[cid]
        last = cluster.last
        frame = frames.get(last.frame_index)
        if frame is None:
            raise KeyError(
                f"cluster {cid}: frame {last.frame_index} missing from manifest"
            )
        entries.append(
            TimelineEntry(
                cluster_id=cid,
                thumbnail=last.crop_ref,
                last_frame=frame,
                last_detection_id=last.detection_id,
                last_timestamp_ms=last.timestamp_ms,
                last_box=last.object_box,
                member_count=len(cluster.members),
            )
        )
    entries.sort(key=lambda e: (-e.last_timestamp_ms, e.cluster_id))
    return Timeline(tuple(entries))


def format_timestamp(timestamp_ms: int) -> str:
    """Milliseconds from session start rendered as HH:MM:SS.mmm."""
    if timestamp_ms < 0:
        raise ValueError("timestamp must be non-negative")
    ms = timestamp_ms % 1000
    seconds = timestamp_ms // 1000
    minutes, sec = divmod(seconds, 60)
    hours, minutes = divmod(minutes, 60)
    return f"{hours:02d}:{minutes:02d}:{sec:02d}.{ms:03d}"


def popup(entry: TimelineEntry) -> dict:
    """Pop-up payload: the last scene, the box to highlight, and when."""
    return {
        "cluster_id": entry.cluster_id,
        "frame": {
            "frame_index": entry.last_frame.frame_index,
            "width": entry.last_frame.width,
            "height": entry.last_frame.height,
            "image_ref": entry.last_frame.image_ref,
        },
        "box": entry.last_box.as_list(),
        "timestamp": format_timestamp(entry.last_timestamp_ms),
        "timestamp_ms": entry.last_timestamp_ms,
    }


def entry_to_dict(entry: TimelineEntry) -> dict:
    return {
        "cluster_id": entry.cluster_id,
        "thumbnail": entry.thumbnail,
        "last_frame": {
            "frame_index": entry.last_frame.frame_index,
            "width": entry.last_frame.width,
            "height": entry.last_frame.height,
            "image_ref": entry.last_frame.image_ref,
        },
        "last_detection_id": entry.last_detection_id,
        "last_timestamp_ms": entry.last_timestamp_ms,
        "last_box": entry.last_box.as_list(),
        "member_count": entry.member_count,
    }


def write_timeline(timeline: Timeline, fh: TextIO) -> None:
    doc = {
        "schema": TIMELINE_SCHEMA,
        "entries": [entry_to_dict(e) for e in timeline.entries],
    }
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def read_timeline(fh: TextIO) -> Timeline:
    doc = json.load(fh)
    if doc.get("schema") != TIMELINE_SCHEMA:
        raise ValueError(f"unsupported timeline schema {doc.get('schema')!r}")
    entries = []
    for e in doc["entries"]:
        frame = e["last_frame"]
        entries.append(
            TimelineEntry(
                cluster_id=e["cluster_id"],
                thumbnail=e["thumbnail"],
                last_frame=FrameMeta(
                    frame_index=frame["frame_index"],
                    width=frame["width"],
                    height=frame["height"],
                    image_ref=frame["image_ref"],
                ),
                last_detection_id=e["last_detection_id"],
                last_timestamp_ms=e["last_timestamp_ms"],
                last_box=Box(*e["last_box"]),
                member_count=e["member_count"],
            )
        )
    return Timeline(tuple(entries))
