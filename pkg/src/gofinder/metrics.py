"""Evaluation against ground-truth instance labels.

Localization rate asks, per target instance: does some cluster END on a
detection of it? That is the machine-checkable stand-in for a person
spotting the object in a timeline thumbnail, and it is what the reports
state. Cluster statistics quantify over-segmentation and impurity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TextIO

from .clustering import ClusterStore


class LabelingError(ValueError):
    """Raised when the labeling and the session disagree about detections."""


@dataclass(frozen=True)
class GroundTruthLabeling:
    labels: dict[str, str]
    target_instances: frozenset[str]


@dataclass
class LocalizationReport:
    rate: float
    localized: list[str]
    missed: list[str]
    per_target: dict[str, int | None] = field(default_factory=dict)


@dataclass
class ClusterStats:
    cluster_count: int
    mean_clusters_per_instance: float
    clusters_per_instance: dict[str, int]
    impurity_count: int


def read_labels(fh: TextIO) -> GroundTruthLabeling:
    """Parse a labels file: `target <instance>` header lines, then
    `<detection_id> <instance>` pairs, one per line."""
    targets: set[str] = set()
    labels: dict[str, str] = {}
    in_header = True
    for line_number, line in enumerate(fh, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise LabelingError(f"line {line_number}: expected two fields, got {line!r}")
        if parts[0] == "target" and in_header:
            targets.add(parts[1])
            continue
        in_header = False
        if parts[0] in labels:
            raise LabelingError(f"line {line_number}: duplicate label for {parts[0]!r}")
        labels[parts[0]] = parts[1]
    return GroundTruthLabeling(labels, frozenset(targets))


def write_labels(labeling: GroundTruthLabeling, fh: TextIO) -> None:
    for target in sorted(labeling.target_instances):
        fh.write(f"target {target}\n")
    for det_id in sorted(labeling.labels):
        fh.write(f"{det_id} {labeling.labels[det_id]}\n")


def _check_coverage(store: ClusterStore, labeling: GroundTruthLabeling) -> None:
    session_ids = store.detection_ids()
    unknown = sorted(set(labeling.labels) - session_ids)
    if unknown:
        raise LabelingError(f"labels reference unknown detection ids: {unknown[:5]}")
    unlabeled = sorted(session_ids - set(labeling.labels))
    if unlabeled:
        raise LabelingError(f"session detections without labels: {unlabeled[:5]}")


def localization_rate(
    store: ClusterStore, labeling: GroundTruthLabeling
) -> LocalizationReport:
    """Fraction of target instances recoverable from the timeline."""
    if not labeling.target_instances:
        raise LabelingError("target_instances is empty")
    _check_coverage(store, labeling)
    last_label_to_cluster: dict[str, int] = {}
    for cid in sorted(store.clusters):
        label = labeling.labels[store.clusters[cid].last_detection_id]
        last_label_to_cluster.setdefault(label, cid)
    localized = sorted(t for t in labeling.target_instances if t in last_label_to_cluster)
    missed = sorted(labeling.target_instances - set(localized))
    per_target = {
        t: last_label_to_cluster.get(t) for t in sorted(labeling.target_instances)
    }
    return LocalizationReport(
        rate=len(localized) / len(labeling.target_instances),
        localized=localized,
        missed=missed,
        per_target=per_target,
    )


def cluster_stats(store: ClusterStore, labeling: GroundTruthLabeling) -> ClusterStats:
    _check_coverage(store, labeling)
    per_instance: dict[str, set[int]] = {}
    impure = 0
    for cid, cluster in sorted(store.clusters.items()):
        seen = set()
        for member in cluster.members:
            label = labeling.labels[member.detection_id]
            seen.add(label)
            per_instance.setdefault(label, set()).add(cid)
        if len(seen) >= 2:
            impure += 1
    counts = {label: len(cids) for label, cids in sorted(per_instance.items())}
    mean = sum(counts.values()) / len(counts) if counts else 0.0
    return ClusterStats(
        cluster_count=len(store.clusters),
        mean_clusters_per_instance=mean,
        clusters_per_instance=counts,
        impurity_count=impure,
    )


def summary_line(report: LocalizationReport, stats: ClusterStats) -> str:
    return f"localization rate={report.rate:g}, #clusters={stats.cluster_count}"


def write_report(report: LocalizationReport, stats: ClusterStats, fh: TextIO) -> None:
    doc = {
        "schema": "gofinder-metrics-v1",
        "localization_rate": report.rate,
        "localized_targets": report.localized,
        "missed_targets": report.missed,
        "per_target_cluster": report.per_target,
        "cluster_count": stats.cluster_count,
        "mean_clusters_per_instance": stats.mean_clusters_per_instance,
        "clusters_per_instance": stats.clusters_per_instance,
        "impurity_count": stats.impurity_count,
        "note": "localization judged by last-member label match, not by a human viewer",
    }
    json.dump(doc, fh, indent=2)
    fh.write("\n")


def format_table(report: LocalizationReport, stats: ClusterStats) -> str:
    """Human-readable metrics table."""
    lines = [summary_line(report, stats)]
    lines.append(f"mean clusters per instance: {stats.mean_clusters_per_instance:.2f}")
    lines.append(f"impure clusters: {stats.impurity_count}")
    lines.append("")
    lines.append(f"{'target':<24} {'status':<10} cluster")
    for target, cid in report.per_target.items():
        status = "localized" if cid is not None else "missed"
        lines.append(f"{target:<24} {status:<10} {cid if cid is not None else '-'}")
    return "\n".join(lines) + "\n"
