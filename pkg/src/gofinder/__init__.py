"""Online discovery of hand-held objects from detection streams."""

from .core import (
    Box,
    ConfigError,
    ContactState,
    DetectionRecord,
    EngineConfig,
    FrameMeta,
    load_config,
)
from .clustering import DiscoveryEngine
from .timeline import Timeline, build_timeline

__version__ = "0.1.0"
