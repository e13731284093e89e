"""Wire protocol: newline-delimited JSON messages with a version handshake.

One JSON object per line.  The server's first line on any new connection is
the handshake ``{"version": "una/1"}``; a client may send its own version
line before anything else, and a mismatch gets the connection refused with
a reason.  Every other line is a message:

    {"kind": "SET_OBJECTIVES", "id": 3, "sender": "planner", "payload": {...}}

Message ids must be strictly increasing per connection, in both directions.
The same schema travels over raw TCP and over WebSocket text frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Optional

PROTOCOL_VERSION = "una/1"

KINDS = frozenset({
    "STATE_UPDATE", "SET_OBJECTIVES", "MANUAL_CMD", "TAKEOFF", "LAND",
    "EMERGENCY_STOP", "FRAME_REQUEST", "ACK", "FAULT",
})

# kinds a client may send that change or query the world
REQUEST_KINDS = frozenset({
    "SET_OBJECTIVES", "MANUAL_CMD", "TAKEOFF", "LAND",
    "EMERGENCY_STOP", "FRAME_REQUEST",
})


class ProtocolError(ValueError):
    """Raised on a malformed line; the reason travels back in a FAULT."""


@dataclass(frozen=True)
class WireMessage:
    kind: str
    id: int
    payload: Optional[dict] = None
    sender: Optional[str] = None

    def to_json(self) -> str:
        body: dict[str, Any] = {"kind": self.kind, "id": self.id}
        if self.sender is not None:
            body["sender"] = self.sender
        if self.payload is not None:
            body["payload"] = self.payload
        return json.dumps(body, separators=(",", ":"))


def handshake_line() -> str:
    return json.dumps({"version": PROTOCOL_VERSION}, separators=(",", ":"))


def parse_line(line: str) -> WireMessage:
    """Parse one message line.

    Raises:
        ProtocolError: not JSON, not an object, unknown kind, bad id.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError("message must be a JSON object")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ProtocolError(f"unknown kind {kind!r}")
    msg_id = obj.get("id")
    if not isinstance(msg_id, int) or isinstance(msg_id, bool):
        raise ProtocolError("id must be an integer")
    payload = obj.get("payload")
    if payload is not None and not isinstance(payload, dict):
        raise ProtocolError("payload must be an object")
    sender = obj.get("sender")
    if sender is not None and not isinstance(sender, str):
        raise ProtocolError("sender must be a string")
    return WireMessage(kind=kind, id=msg_id, payload=payload, sender=sender)


def is_version_line(line: str) -> Optional[str]:
    """Return the declared version if the line is a handshake, else None."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if isinstance(obj, dict) and "version" in obj and "kind" not in obj:
        return str(obj["version"])
    return None
