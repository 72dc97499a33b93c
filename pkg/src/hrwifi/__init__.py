"""Seamless-redundancy simulator for high-reliability multi-link Wi-Fi."""

from .engine import Engine, RngStream, Trace, TraceRecord
from .frames import (
    Frame,
    MacAddress,
    MultiLinkElement,
    ReliabilityCategory,
    YTag,
    decode_ytag,
    encode_ytag,
    rewrite_egress,
)
from .topology import ScenarioSpec, Simulation, build, load_config, preset, validate

__version__ = "0.1.0"

__all__ = [
    "Engine", "RngStream", "Trace", "TraceRecord", "Frame", "MacAddress", "MultiLinkElement",
    "ReliabilityCategory", "YTag", "decode_ytag", "encode_ytag", "rewrite_egress",
    "ScenarioSpec", "Simulation", "build", "load_config", "preset", "validate",
]
