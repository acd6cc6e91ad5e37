"""Read-only HTTP service over published session snapshots.

Sessions are loaded once, from the artifacts a discovery run exported, and
never mutated afterwards: every endpoint is a pure read over an immutable
snapshot, so repeated identical requests return identical bodies.
"""

from __future__ import annotations

import json
import mimetypes
import os
from dataclasses import dataclass
from datetime import datetime, timezone

from fastapi import FastAPI, HTTPException, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles

from .core import FrameMeta, read_frames_file, resolve_asset
from .timeline import Timeline, entry_to_dict, popup, read_timeline

SESSION_SCHEMA = "gofinder-session-v1"
IMAGE_KINDS = ("frame", "thumbnail")


class ServiceError(ValueError):
    """Raised when sessions cannot be loaded or registered."""


@dataclass(frozen=True)
class SessionHandle:
    """An immutable published session: its timeline plus asset locations."""

    session_id: str
    timeline: Timeline
    frames: dict[int, FrameMeta]
    asset_root: str
    created_at: float
    cluster_count: int


def load_session(session_dir: str) -> SessionHandle:
    """Load one discovery output directory as a session snapshot.

    The directory's basename becomes the session id; creation time is the
    session descriptor's file modification time.
    """
    session_dir = os.path.abspath(session_dir)
    if not os.path.isdir(session_dir):
        raise ServiceError(f"not a directory: {session_dir}")
    desc_path = os.path.join(session_dir, "session.json")
    if not os.path.isfile(desc_path):
        raise ServiceError(f"missing session descriptor: {desc_path}")
    with open(desc_path, "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    if desc.get("schema") != SESSION_SCHEMA:
        raise ServiceError(f"{desc_path}: unsupported schema {desc.get('schema')!r}")

    def _resolve(path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(session_dir, path)

    with open(os.path.join(session_dir, "timeline.json"), "r", encoding="utf-8") as fh:
        timeline = read_timeline(fh)
    frames = read_frames_file(_resolve(desc["frames_path"]))
    return SessionHandle(
        session_id=os.path.basename(session_dir),
        timeline=timeline,
        frames=frames,
        asset_root=_resolve(desc["asset_root"]),
        created_at=os.path.getmtime(desc_path),
        cluster_count=len(timeline.entries),
    )


def _entry_doc(session_id: str, entry) -> dict:
    doc = entry_to_dict(entry)
    doc["thumbnail_url"] = (
        f"/sessions/{session_id}/images/thumbnail/{entry.thumbnail}"
        if entry.thumbnail
        else None
    )
    return doc


def create_app(
    session_dirs: list[str],
    cors_origins: list[str] | None = None,
    ui_dir: str | None = None,
) -> FastAPI:
    sessions: dict[str, SessionHandle] = {}
    for d in session_dirs:
        handle = load_session(d)
        if handle.session_id in sessions:
            raise ServiceError(f"duplicate session id {handle.session_id!r}")
        sessions[handle.session_id] = handle

    app = FastAPI(title="gofinder", docs_url=None, redoc_url=None)
    if cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(cors_origins),
            allow_methods=["GET"],
            allow_headers=["*"],
        )

    def _session(session_id: str) -> SessionHandle:
        handle = sessions.get(session_id)
        if handle is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return handle

    @app.get("/sessions")
    def list_sessions() -> list[dict]:
        ordered = sorted(
            sessions.values(), key=lambda h: (-h.created_at, h.session_id)
        )
        return [
            {
                "session_id": h.session_id,
                "created_at": datetime.fromtimestamp(
                    h.created_at, tz=timezone.utc
                ).isoformat(),
                "cluster_count": h.cluster_count,
            }
            for h in ordered
        ]

    @app.get("/sessions/{session_id}/timeline")
    def get_timeline(session_id: str) -> dict:
        handle = _session(session_id)
        return {
            "session_id": session_id,
            "entries": [_entry_doc(session_id, e) for e in handle.timeline.entries],
        }

    @app.get("/sessions/{session_id}/clusters/{cluster_id}/popup")
    def get_popup(session_id: str, cluster_id: int) -> dict:
        handle = _session(session_id)
        for entry in handle.timeline.entries:
            if entry.cluster_id == cluster_id:
                payload = popup(entry)
                payload["frame_url"] = (
                    f"/sessions/{session_id}/images/frame/{entry.last_frame.image_ref}"
                )
                return payload
        raise HTTPException(status_code=404, detail=f"unknown cluster {cluster_id}")

    @app.get("/sessions/{session_id}/images/{kind}/{ref:path}")
    def get_image(session_id: str, kind: str, ref: str) -> Response:
        handle = _session(session_id)
        if kind not in IMAGE_KINDS:
            raise HTTPException(status_code=404, detail=f"unknown image kind {kind!r}")
        if os.path.isabs(ref):
            raise HTTPException(status_code=400, detail="absolute reference rejected")
        try:
            path = resolve_asset(handle.asset_root, ref)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        if not os.path.isfile(path):
            raise HTTPException(status_code=404, detail=f"no such image: {ref}")
        with open(path, "rb") as fh:
            data = fh.read()
        media_type = mimetypes.guess_type(ref)[0] or "application/octet-stream"
        return Response(content=data, media_type=media_type)

    if ui_dir is not None:
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
