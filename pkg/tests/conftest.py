"""Shared builders for tests: small records with controllable geometry/features."""

import numpy as np
import pytest

from gofinder.core import Box, ContactState, DetectionRecord, EngineConfig

DIM = 8


@pytest.fixture
def config():
    return EngineConfig(feature_dim=DIM)


def basis(i, dim=DIM):
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def mix(u, w, cos_uw):
    """A unit vector at the given cosine to unit vector u, leaning toward
    unit vector w (u and w must be orthogonal)."""
    return cos_uw * u + np.sqrt(1.0 - cos_uw * cos_uw) * w


def make_record(
    det_id,
    frame,
    feature=None,
    box=None,
    hand_box=None,
    skin=None,
    contact=ContactState.PORTABLE_OBJECT,
    crop_ref=None,
    track_hint=None,
    timestamp=None,
):
    return DetectionRecord(
        detection_id=det_id,
        frame_index=frame,
        timestamp_ms=frame * 100 if timestamp is None else timestamp,
        object_box=box if box is not None else Box(10.0, 10.0, 50.0, 50.0),
        confidence=0.9,
        contact_state=contact,
        feature=feature if feature is not None else basis(0),
        hand_box=hand_box,
        skin_ratio=skin,
        crop_ref=crop_ref,
        track_hint=track_hint,
    )


def record_dict(det_id, frame, feature=None, **overrides):
    """Wire-format record dict for ingestion tests."""
    obj = {
        "detection_id": det_id,
        "frame_index": frame,
        "timestamp_ms": frame * 100,
        "object_box": [10.0, 10.0, 50.0, 50.0],
        "confidence": 0.9,
        "contact_state": "portable_object",
        "feature": list(feature) if feature is not None else list(basis(0)),
    }
    obj.update(overrides)
    return obj
