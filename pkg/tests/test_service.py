import json
import os
import re
from datetime import datetime

import pytest
from fastapi.testclient import TestClient

from gofinder import cli
from gofinder.service import ServiceError, create_app, load_session
from gofinder.synth import ScenarioSpec, generate


def build_session_dir(root, name, seed, emit_crops=True):
    """Generate a scenario and run discovery over it; returns the output dir."""
    scenario_dir = os.path.join(root, f"scenario_{name}")
    spec = ScenarioSpec(
        instance_count=3, appearance_count=2, feature_dim=8,
        emit_crops=emit_crops, seed=seed,
    )
    gen = generate(spec, scenario_dir)
    # the manifest references frame images; give them real distinct bytes
    frames_dir = os.path.join(scenario_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    for f in range(gen.frame_count):
        with open(os.path.join(frames_dir, f"{f:06d}.png"), "wb") as fh:
            fh.write(b"PNGBYTES:" + str(f).encode())

    config_path = os.path.join(root, "config.json")
    if not os.path.exists(config_path):
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump({"feature_dim": 8}, fh)

    out_dir = os.path.join(root, name)
    rc = cli.main([
        "discover",
        "--config", config_path,
        "--detections", gen.detections_path,
        "--frames", gen.frames_path,
        "--out", out_dir,
    ])
    assert rc == 0
    return out_dir


@pytest.fixture(scope="module")
def published(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("service"))
    alpha = build_session_dir(root, "alpha", seed=17)
    beta = build_session_dir(root, "beta", seed=23)
    older, newer = 1_600_000_000, 1_600_000_100
    os.utime(os.path.join(alpha, "session.json"), (older, older))
    os.utime(os.path.join(beta, "session.json"), (newer, newer))
    app = create_app([alpha, beta])
    return {"root": root, "alpha": alpha, "beta": beta, "client": TestClient(app)}


def test_sessions_listed_newest_first(published):
    resp = published["client"].get("/sessions")
    assert resp.status_code == 200
    body = resp.json()
    assert [s["session_id"] for s in body] == ["beta", "alpha"]
    for s in body:
        assert s["cluster_count"] == 3
        datetime.fromisoformat(s["created_at"])


def test_sessions_tie_breaks_by_id(published):
    t = 1_600_000_000
    stamp_a = os.path.join(published["alpha"], "session.json")
    stamp_b = os.path.join(published["beta"], "session.json")
    orig_b = os.path.getmtime(stamp_b)
    os.utime(stamp_b, (t, t))
    try:
        client = TestClient(create_app([published["alpha"], published["beta"]]))
        ids = [s["session_id"] for s in client.get("/sessions").json()]
        assert ids == ["alpha", "beta"]
    finally:
        os.utime(stamp_b, (orig_b, orig_b))
    assert os.path.getmtime(stamp_a) == t


def test_empty_registry_lists_nothing():
    client = TestClient(create_app([]))
    assert client.get("/sessions").json() == []


def test_timeline_entries(published):
    resp = published["client"].get("/sessions/alpha/timeline")
    assert resp.status_code == 200
    body = resp.json()
    assert body["session_id"] == "alpha"
    entries = body["entries"]
    assert len(entries) == 3
    stamps = [e["last_timestamp_ms"] for e in entries]
    assert stamps == sorted(stamps, reverse=True)
    for e in entries:
        assert set(e) >= {
            "cluster_id", "thumbnail", "thumbnail_url", "last_frame",
            "last_detection_id", "last_timestamp_ms", "last_box", "member_count",
        }
        assert e["thumbnail_url"] == f"/sessions/alpha/images/thumbnail/{e['thumbnail']}"
        assert e["member_count"] >= 1


def test_thumbnail_bytes_match_disk(published):
    entry = published["client"].get("/sessions/alpha/timeline").json()["entries"][0]
    resp = published["client"].get(entry["thumbnail_url"])
    assert resp.status_code == 200
    with open(os.path.join(published["alpha"], "session.json")) as fh:
        asset_root = json.load(fh)["asset_root"]
    with open(os.path.join(asset_root, entry["thumbnail"]), "rb") as fh:
        assert resp.content == fh.read()
    assert resp.headers["content-type"] == "application/octet-stream"


def test_popup_payload_and_frame_fetch(published):
    client = published["client"]
    entry = client.get("/sessions/alpha/timeline").json()["entries"][0]
    cid = entry["cluster_id"]
    resp = client.get(f"/sessions/alpha/clusters/{cid}/popup")
    assert resp.status_code == 200
    payload = resp.json()
    assert payload["cluster_id"] == cid
    assert payload["box"] == entry["last_box"]
    assert payload["timestamp_ms"] == entry["last_timestamp_ms"]
    assert re.fullmatch(r"\d{2}:\d{2}:\d{2}\.\d{3}", payload["timestamp"])
    ref = entry["last_frame"]["image_ref"]
    assert payload["frame_url"] == f"/sessions/alpha/images/frame/{ref}"

    frame = client.get(payload["frame_url"])
    assert frame.status_code == 200
    assert frame.headers["content-type"].startswith("image/png")
    frame_index = entry["last_frame"]["frame_index"]
    assert frame.content == b"PNGBYTES:" + str(frame_index).encode()


def test_unknown_session_is_404(published):
    client = published["client"]
    for path in (
        "/sessions/nope/timeline",
        "/sessions/nope/clusters/0/popup",
        "/sessions/nope/images/frame/frames/000000.png",
    ):
        assert client.get(path).status_code == 404


def test_unknown_cluster_is_404(published):
    resp = published["client"].get("/sessions/alpha/clusters/999/popup")
    assert resp.status_code == 404


def test_bad_image_kind_is_404(published):
    resp = published["client"].get("/sessions/alpha/images/nope/frames/000000.png")
    assert resp.status_code == 404
    assert "kind" in resp.json()["detail"]


def test_missing_image_is_404(published):
    resp = published["client"].get("/sessions/alpha/images/frame/frames/999999.png")
    assert resp.status_code == 404


def test_encoded_traversal_is_rejected(published):
    # a secret outside the asset root must never be reachable
    secret = os.path.join(published["root"], "secret.txt")
    with open(secret, "w") as fh:
        fh.write("TOPSECRET")
    resp = published["client"].get(
        "/sessions/alpha/images/thumbnail/..%2F..%2Fsecret.txt"
    )
    assert resp.status_code == 400
    assert b"TOPSECRET" not in resp.content


def test_absolute_reference_is_rejected(published):
    resp = published["client"].get("/sessions/alpha/images/frame/%2Fetc%2Fpasswd")
    assert resp.status_code == 400
    assert b"root:" not in resp.content


def test_literal_traversal_discloses_nothing(published):
    # the raw form is collapsed before routing; either way no bytes escape
    resp = published["client"].get(
        "/sessions/alpha/images/thumbnail/../../secret.txt"
    )
    assert resp.status_code in (400, 404)
    assert b"TOPSECRET" not in resp.content


def test_repeated_requests_are_identical(published):
    client = published["client"]
    for path in ("/sessions", "/sessions/alpha/timeline", "/sessions/beta/timeline"):
        assert client.get(path).content == client.get(path).content


def test_duplicate_session_id_rejected(published):
    with pytest.raises(ServiceError, match="duplicate"):
        create_app([published["alpha"], published["alpha"]])


def test_load_session_requires_directory(tmp_path):
    with pytest.raises(ServiceError, match="not a directory"):
        load_session(str(tmp_path / "missing"))


def test_load_session_requires_descriptor(tmp_path):
    with pytest.raises(ServiceError, match="descriptor"):
        load_session(str(tmp_path))


def test_load_session_checks_schema(tmp_path):
    (tmp_path / "session.json").write_text(json.dumps({"schema": "other"}))
    with pytest.raises(ServiceError, match="schema"):
        load_session(str(tmp_path))


def test_session_without_crops_has_no_thumbnail_urls(tmp_path):
    out = build_session_dir(str(tmp_path), "plain", seed=5, emit_crops=False)
    client = TestClient(create_app([out]))
    entries = client.get("/sessions/plain/timeline").json()["entries"]
    assert entries
    for e in entries:
        assert e["thumbnail"] is None
        assert e["thumbnail_url"] is None


def test_ui_mount_serves_static_files(published, tmp_path):
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><p>gofinder ui</p>")
    client = TestClient(create_app([published["alpha"]], ui_dir=str(ui)))
    resp = client.get("/ui/")
    assert resp.status_code == 200
    assert "gofinder ui" in resp.text
