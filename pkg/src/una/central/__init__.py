"""Central node: control-plane service, wire protocol, placement benchmark."""

from .benchmark import (
    ExperimentRecord, TrialResult, run_placement_benchmark, write_cdf_csv,
)
from .protocol import (
    KINDS, PROTOCOL_VERSION, ProtocolError, WireMessage, handshake_line,
    parse_line,
)
from .service import CentralService, Event, audit_network_separation

__all__ = [
    "CentralService", "Event", "ExperimentRecord", "KINDS",
    "PROTOCOL_VERSION", "ProtocolError", "TrialResult", "WireMessage",
    "audit_network_separation", "handshake_line", "parse_line",
    "run_placement_benchmark", "write_cdf_csv",
]
