"""Wire protocol and session state machine for the teleop link.

Frames are a 4-byte big-endian payload length followed by a UTF-8 JSON object
with "type", "seq", "t_mono" and "payload" fields.  Floats serialize at full
round-trip precision so replaying a captured stream reproduces the session
bit-for-bit.  The session transition function is pure: side effects come back
as data and are applied by the owner of the world state.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

__all__ = [
    "MESSAGE_TYPES",
    "CLIENT_TYPES",
    "MAX_FRAME_BYTES",
    "Message",
    "FrameError",
    "DecodeError",
    "encode_message",
    "encode_payload",
    "decode_message",
    "decode_payload",
    "FrameDecoder",
    "Session",
    "SESSION_STATES",
    "session_handle",
    "check_heartbeat",
    "HEARTBEAT_TIMEOUT",
]

MESSAGE_TYPES = (
    "Hello",
    "HelloAck",
    "HeadPose",
    "WristPose",
    "Pinch",
    "Calibrate",
    "RecordStart",
    "RecordStop",
    "StateUpdate",
    "CamFeatures",
    "SceneGeometry",
    "Heartbeat",
    "Error",
)

# types a client may legally send; the rest are server-to-client only
CLIENT_TYPES = frozenset(
    ("Hello", "HeadPose", "WristPose", "Pinch", "Calibrate",
     "RecordStart", "RecordStop", "Heartbeat")
)

_MAILBOX_TYPES = ("HeadPose", "WristPose", "Pinch")

MAX_FRAME_BYTES = 1 << 20
HEARTBEAT_TIMEOUT = 1.0  # seconds without client traffic drops the session

SESSION_STATES = ("Idle", "Connected", "Calibrated", "Teleop", "Recording")


class FrameError(ValueError):
    """Framing-level violation: bad length prefix or oversized frame."""


class DecodeError(ValueError):
    """Malformed message payload; carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Message:
    type: str
    seq: int
    t_mono: int  # microseconds since session start
    payload: dict = field(default_factory=dict)


def encode_payload(msg: Message) -> bytes:
    """JSON body of one message, without the length prefix."""
    if msg.type not in MESSAGE_TYPES:
        raise DecodeError(f"unknown message type {msg.type!r}")
    body = {
        "type": msg.type,
        "seq": int(msg.seq),
        "t_mono": int(msg.t_mono),
        "payload": msg.payload,
    }
    try:
        text = json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise DecodeError(f"non-finite float in message payload: {exc}") from exc
    return text.encode("utf-8")


def encode_message(msg: Message) -> bytes:
    data = encode_payload(msg)
    if len(data) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(data)} bytes exceeds 1 MiB limit")
    return struct.pack(">I", len(data)) + data


def decode_payload(data: bytes) -> Message:
    """Decode one unframed JSON message body."""
    try:
        obj = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise DecodeError(f"payload is not UTF-8: {exc}", offset=exc.start) from exc
    except json.JSONDecodeError as exc:
        raise DecodeError(f"malformed JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(obj, dict):
        raise DecodeError("message must be a JSON object")
    mtype = obj.get("type")
    if mtype not in MESSAGE_TYPES:
        raise DecodeError(f"unknown message type {mtype!r}")
    seq = obj.get("seq")
    t_mono = obj.get("t_mono")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise DecodeError("seq must be a nonnegative integer")
    if not isinstance(t_mono, int) or isinstance(t_mono, bool) or t_mono < 0:
        raise DecodeError("t_mono must be a nonnegative integer")
    payload = obj.get("payload", {})
    if not isinstance(payload, dict):
        raise DecodeError("payload must be an object")
    return Message(mtype, seq, t_mono, payload)


def decode_message(data: bytes) -> Message:
    """Decode one complete framed message."""
    if len(data) < 4:
        raise FrameError("incomplete frame: missing length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME_BYTES:
        raise FrameError(f"declared frame length {length} exceeds 1 MiB limit")
    if len(data) < 4 + length:
        raise FrameError(f"incomplete frame: declared {length}, got {len(data) - 4}")
    if len(data) > 4 + length:
        raise FrameError("trailing bytes after frame")
    return decode_payload(data[4 : 4 + length])


class FrameDecoder:
    """Incremental decoder for a byte stream of length-prefixed frames.

    A malformed payload is skipped (the frame length keeps the stream aligned)
    and recorded in `errors`; an insane length prefix is unrecoverable and
    raises FrameError.
    """

    def __init__(self):
        self._buf = bytearray()
        self.errors: list[DecodeError] = []

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out: list[Message] = []
        while True:
            if len(self._buf) < 4:
                return out
            (length,) = struct.unpack(">I", bytes(self._buf[:4]))
            if length > MAX_FRAME_BYTES:
                # cannot resync reliably on an insane prefix; drop the buffer
                self._buf.clear()
                raise FrameError(f"declared frame length {length} exceeds 1 MiB limit")
            if len(self._buf) < 4 + length:
                return out
            payload = bytes(self._buf[4 : 4 + length])
            del self._buf[: 4 + length]
            try:
                out.append(decode_payload(payload))
            except DecodeError as exc:
                self.errors.append(exc)


# ---------------------------------------------------------------------------
# session state machine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Session:
    """Protocol-side connection state; pure data, transitioned by session_handle."""

    state: str = "Idle"
    latest_head: Message | None = None
    latest_wrist: Message | None = None
    latest_pinch: Message | None = None
    last_seq: dict = field(default_factory=dict)
    last_heartbeat: float = 0.0
    dropped_stale: int = 0

    def mailbox(self, mtype: str) -> Message | None:
        return {"HeadPose": self.latest_head, "WristPose": self.latest_wrist,
                "Pinch": self.latest_pinch}[mtype]


def _error(msg: str, seq: int, t_mono: int) -> Message:
    return Message("Error", seq, t_mono, {"message": msg})


def session_handle(session: Session, msg: Message, now: float,
                   reply_seq: int = 0) -> tuple[Session, list[Message], list[tuple]]:
    """Pure transition: returns (session', outgoing messages, effects).

    Effects: ("HelloAck",), ("ApplyCalibration", payload), ("StartEpisode",),
    ("StopEpisode",).  Stale per-stream sequence numbers are dropped silently.
    Any valid client message refreshes the liveness timestamp; a >1 s gap is
    handled by check_heartbeat.
    """
    if msg.type not in CLIENT_TYPES:
        return session, [_error(f"client may not send {msg.type}", reply_seq, msg.t_mono)], []

    last = session.last_seq.get(msg.type)
    if last is not None and msg.seq <= last:
        return replace(session, dropped_stale=session.dropped_stale + 1), [], []
    seqs = dict(session.last_seq)
    seqs[msg.type] = msg.seq
    session = replace(session, last_seq=seqs, last_heartbeat=now)

    state = session.state
    outgoing: list[Message] = []
    effects: list[tuple] = []

    if msg.type == "Hello":
        if state != "Idle":
            outgoing.append(_error("already connected", reply_seq, msg.t_mono))
        else:
            session = replace(session, state="Connected")
            effects.append(("HelloAck",))
    elif msg.type == "Heartbeat":
        pass  # liveness already refreshed above
    elif msg.type in _MAILBOX_TYPES:
        if state == "Idle":
            outgoing.append(_error("say Hello first", reply_seq, msg.t_mono))
        else:
            slot = {"HeadPose": "latest_head", "WristPose": "latest_wrist",
                    "Pinch": "latest_pinch"}[msg.type]
            session = replace(session, **{slot: msg})
            if state == "Calibrated" and msg.type in ("HeadPose", "WristPose"):
                session = replace(session, state="Teleop")
    elif msg.type == "Calibrate":
        if state in ("Connected", "Calibrated", "Teleop"):
            session = replace(session, state="Calibrated")
            effects.append(("ApplyCalibration", msg.payload))
        else:
            outgoing.append(_error(f"cannot calibrate while {state}", reply_seq, msg.t_mono))
    elif msg.type == "RecordStart":
        if state == "Teleop":
            session = replace(session, state="Recording")
            effects.append(("StartEpisode",))
        else:
            outgoing.append(_error(f"RecordStart illegal in {state}", reply_seq, msg.t_mono))
    elif msg.type == "RecordStop":
        if state == "Recording":
            session = replace(session, state="Teleop")
            effects.append(("StopEpisode",))
        else:
            outgoing.append(_error(f"RecordStop illegal in {state}", reply_seq, msg.t_mono))

    return session, outgoing, effects


def check_heartbeat(session: Session, now: float) -> tuple[Session, list[tuple]]:
    """Tick-driven liveness: a silent client drops the session to Connected."""
    if session.state in ("Idle", "Connected"):
        return session, []
    if now - session.last_heartbeat <= HEARTBEAT_TIMEOUT:
        return session, []
    effects: list[tuple] = []
    if session.state == "Recording":
        effects.append(("StopEpisode",))
    return replace(session, state="Connected", latest_head=None,
                   latest_wrist=None, latest_pinch=None), effects
