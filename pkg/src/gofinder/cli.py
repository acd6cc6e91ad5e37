"""Command-line entry points tying the pipeline together.

Commands run offline over recorded streams: discover processes a session and
exports its artifacts, metrics scores them against labels, synth and oracle
generate and verify synthetic sessions, serve publishes exports over HTTP.
Flags fall back to GOFINDER_* environment variables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from .clustering import DiscoveryEngine, load_state, save_state, write_event_log
from .core import IngestReport, config_hash, load_config, read_detections_file, read_frames_file
from .metrics import cluster_stats, localization_rate, read_labels, summary_line, write_report
from .service import SESSION_SCHEMA, create_app
from .synth import generate, load_scenario, oracle_cluster
from .timeline import build_timeline, write_timeline


def _env(name: str) -> str | None:
    return os.environ.get(f"GOFINDER_{name.upper()}")


def _add(parser: argparse.ArgumentParser, flag: str, *, required: bool, help: str) -> None:
    env_value = _env(flag)
    parser.add_argument(
        f"--{flag}",
        default=env_value,
        required=required and env_value is None,
        help=f"{help} (env GOFINDER_{flag.upper()})",
    )


def _warn_rejects(report: IngestReport) -> None:
    if not report.errors:
        return
    print(f"warning: {len(report.errors)} record(s) rejected", file=sys.stderr)
    for err in report.errors[:5]:
        print(f"  line {err.line_number}: {err.message}", file=sys.stderr)


def cmd_discover(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = load_config(args.config)
    frames = read_frames_file(args.frames)
    detections_path = os.path.abspath(args.detections)
    asset_root = os.path.abspath(args.assets) if args.assets else os.path.dirname(detections_path)

    engine = DiscoveryEngine(config, frames, asset_root)
    report = IngestReport()
    engine.process_stream(read_detections_file(args.detections, config, report))
    _warn_rejects(report)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "state.json"), "w", encoding="utf-8") as fh:
        save_state(engine, fh)
    with open(os.path.join(args.out, "events.jsonl"), "w", encoding="utf-8") as fh:
        write_event_log(engine.events, fh)
    timeline = build_timeline(engine.store, frames)
    with open(os.path.join(args.out, "timeline.json"), "w", encoding="utf-8") as fh:
        write_timeline(timeline, fh)
    session = {
        "schema": SESSION_SCHEMA,
        "asset_root": asset_root,
        "frames_path": os.path.abspath(args.frames),
        "cluster_count": len(engine.store),
        "detection_count": engine.processed,
        "discarded": dict(sorted(engine.discards.items())),
        "rejected_records": len(report.errors),
        "config_hash": config_hash(config),
    }
    with open(os.path.join(args.out, "session.json"), "w", encoding="utf-8") as fh:
        json.dump(session, fh, indent=2)
        fh.write("\n")

    elapsed = time.perf_counter() - started
    print(
        f"clusters={len(engine.store)} detections={engine.processed}"
        f" discarded={sum(engine.discards.values())} elapsed={elapsed:.2f}s"
    )
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    with open(os.path.join(args.out, "session.json"), "r", encoding="utf-8") as fh:
        session = json.load(fh)
    frames = read_frames_file(session["frames_path"])
    with open(os.path.join(args.out, "state.json"), "r", encoding="utf-8") as fh:
        engine = load_state(fh, frames)
    with open(args.labels, "r", encoding="utf-8") as fh:
        labeling = read_labels(fh)
    report = localization_rate(engine.store, labeling)
    stats = cluster_stats(engine.store, labeling)
    print(summary_line(report, stats))
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        write_report(report, stats, fh)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = load_scenario(args.spec)
    result = generate(spec, args.out)
    print(
        f"instances={spec.instance_count} records={result.record_count}"
        f" frames={result.frame_count} out={args.out}"
    )
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    report = IngestReport()
    records = list(read_detections_file(args.detections, config, report))
    _warn_rejects(report)
    partition = oracle_cluster(records, config)
    groups = sorted((sorted(g) for g in partition), key=lambda g: g[0])
    json.dump({"group_count": len(groups), "groups": groups}, sys.stdout, indent=2)
    print()
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"--bind must be host:port, got {args.bind!r}")
    app = create_app(args.session_dir, cors_origins=args.cors_origin, ui_dir=args.ui_dir)
    import uvicorn

    try:
        uvicorn.run(app, host=host, port=int(port_text), log_level="warning")
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gofinder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("discover", help="process a detection stream into session artifacts")
    _add(p, "detections", required=True, help="detections file, one JSON record per line")
    _add(p, "frames", required=True, help="frame manifest file")
    _add(p, "out", required=True, help="output directory for session artifacts")
    _add(p, "config", required=False, help="engine config file; defaults apply when omitted")
    _add(p, "assets", required=False, help="asset root for crops; defaults to the detections directory")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("metrics", help="score a processed session against labels")
    _add(p, "out", required=True, help="discover output directory")
    _add(p, "labels", required=True, help="ground-truth labels file")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="generate a labeled synthetic session")
    _add(p, "spec", required=True, help="scenario spec file")
    _add(p, "out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("oracle", help="offline clustering over a full detections file")
    _add(p, "detections", required=True, help="detections file")
    _add(p, "config", required=False, help="engine config file")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("serve", help="serve processed sessions over HTTP")
    p.add_argument("session_dir", nargs="+", help="discover output directories to publish")
    _add(p, "bind", required=False, help="bind address as host:port")
    p.add_argument("--ui-dir", default=None, help="static UI directory to mount at /ui")
    p.add_argument("--cors-origin", action="append", default=None, help="allowed CORS origin (repeatable)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve" and args.bind is None:
        args.bind = "127.0.0.1:8000"
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single operator-facing failure path
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
