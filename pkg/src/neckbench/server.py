"""Teleop server: protocol session wired to the simulated world.

ServerCore is I/O-free and fully deterministic given a message sequence, which
is what makes console-recorded episodes reproducible from a captured pose log.
TeleopServer adds the transports: length-prefixed TCP (default port 7741) and
a browser WebSocket endpoint (default 7742) carrying one message per WS frame.
"""

from __future__ import annotations

import base64
import hashlib
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import replace as dc_replace

import numpy as np

from .kinematics import Pose
from .protocol import (
    FrameDecoder,
    DecodeError,
    FrameError,
    Message,
    Session,
    check_heartbeat,
    encode_message,
    encode_payload,
    decode_payload,
    session_handle,
)
from .recorder import EpisodeBuilder, StepRecord, save_episode
from .retarget import RetargetParams, calibrate, head_to_neck, pinch_to_grip, wrist_to_arm
from .simworld import Command, SimContext, TICK_DT, WorldState, make_task_scene, step, success

__all__ = ["ServerCore", "TeleopServer"]


def _pose_from_payload(obj: dict) -> Pose:
    return Pose(np.array(obj["position"], float), np.array(obj["orientation"], float))


class ServerCore:
    """Single-operator session + world + recorder, no sockets.

    All outgoing messages carry server-side sequence numbers and tick-derived
    timestamps, so identical inbound message sequences produce identical
    outbound streams and identical recorded episodes.
    """

    def __init__(self, task: str = "L2Rmod", seed: int = 0,
                 ctx: SimContext | None = None,
                 retarget_params: RetargetParams | None = None,
                 record_dir: str | None = None):
        self.ctx = ctx or SimContext()
        self.task = task
        self.seed = seed
        self.retarget_params = retarget_params or RetargetParams()
        self.record_dir = record_dir
        self.session = Session()
        self.world: WorldState = make_task_scene(task, seed, self.ctx)
        self.retarget_state = None
        self.builder: EpisodeBuilder | None = None
        self.episode_index = 0
        self.last_episode: dict | None = None
        self.head_since_tick = False
        self._out_seq = 0
        self._cmd = Command(self.world.neck_q.copy(), self.world.arm_q.copy(), 1.0)

    # -- helpers -----------------------------------------------------------

    def _next_seq(self) -> int:
        self._out_seq += 1
        return self._out_seq

    def _t_mono(self) -> int:
        return int(round(self.world.tick * TICK_DT * 1e6))

    def _msg(self, mtype: str, payload: dict) -> Message:
        return Message(mtype, self._next_seq(), self._t_mono(), payload)

    def scene_geometry(self) -> Message:
        w = self.world
        return self._msg("SceneGeometry", {
            "task": self.task,
            "seed": self.seed,
            "objects": [o.to_dict() for o in w.objects],
            "occluders": [a.to_dict() for a in w.occluders],
            "goal": w.goal.to_dict(),
            "cameras": {
                "neck": self.ctx.neck_cam.to_dict(),
                "wrist": self.ctx.wrist_cam.to_dict(),
                "static": self.ctx.static_cam.to_dict(),
            },
            "control_rate_hz": 1.0 / TICK_DT,
        })

    # -- inbound -----------------------------------------------------------

    def handle_message(self, msg: Message, now: float) -> list[Message]:
        self.session, outgoing, effects = session_handle(
            self.session, msg, now, reply_seq=self._out_seq + 1)
        out = list(outgoing)
        # re-stamp error replies with our sequence counter
        out = [self._msg(m.type, m.payload) if m.type == "Error" else m for m in out]
        for effect in effects:
            kind = effect[0]
            if kind == "HelloAck":
                out.append(self._msg("HelloAck", {"state": self.session.state}))
                out.append(self.scene_geometry())
            elif kind == "ApplyCalibration":
                err = self._apply_calibration(effect[1])
                if err:
                    out.append(self._msg("Error", {"message": err}))
            elif kind == "StartEpisode":
                self.builder = EpisodeBuilder(self.ctx, self.world.rng_seed,
                                              self.world.task_hint,
                                              initial_world=self.world)
                self.head_since_tick = False
            elif kind == "StopEpisode":
                self._finalize_episode()
        if msg.type == "HeadPose" and self.session.latest_head is msg:
            self.head_since_tick = True
        return out

    def _apply_calibration(self, payload: dict) -> str | None:
        try:
            if "head_pose" in payload:
                head = _pose_from_payload(payload["head_pose"])
            elif self.session.latest_head is not None:
                head = _pose_from_payload(self.session.latest_head.payload)
            else:
                head = Pose()
            if "wrist_pose" in payload:
                wrist = _pose_from_payload(payload["wrist_pose"])
            elif self.session.latest_wrist is not None:
                wrist = _pose_from_payload(self.session.latest_wrist.payload)
            else:
                wrist = Pose()
        except (KeyError, TypeError, ValueError) as exc:
            return f"bad calibration payload: {exc}"
        self.retarget_state = calibrate(self.ctx, head, wrist,
                                        self.world.neck_q, self.world.arm_q,
                                        self.retarget_params)
        self._cmd = Command(self.world.neck_q.copy(), self.world.arm_q.copy(),
                            float(self.world.grip))
        return None

    def _finalize_episode(self) -> None:
        if self.builder is None:
            return
        if len(self.builder) == 0:
            self.builder = None
            return
        episode = self.builder.finalize(success(self.world))
        info = {"steps": len(episode.steps), "success": episode.outcome, "path": None}
        if self.record_dir:
            os.makedirs(self.record_dir, exist_ok=True)
            path = os.path.join(self.record_dir,
                                f"console_{self.episode_index:04d}.ep.jsonl")
            save_episode(episode, path)
            info["path"] = path
            self.episode_index += 1
        self.last_episode = info
        self.builder = None

    # -- tick --------------------------------------------------------------

    def tick(self, now: float, dt: float = TICK_DT) -> list[Message]:
        """One control tick: retarget freshest poses, step, emit state."""
        self.session, effects = check_heartbeat(self.session, now)
        for effect in effects:
            if effect[0] == "StopEpisode":
                self._finalize_episode()

        neck_cmd, arm_cmd, grip_cmd = (self._cmd.neck_q_target, self._cmd.arm_q_target,
                                       self._cmd.grip_target)
        if self.session.state in ("Teleop", "Recording") and self.retarget_state is not None:
            head = self.session.latest_head
            if head is not None:
                pose = _pose_from_payload(head.payload)
                neck_cmd, _ = head_to_neck(self.retarget_state, pose, dt,
                                           self.ctx, self.retarget_params)
            wrist = self.session.latest_wrist
            if wrist is not None:
                pose = _pose_from_payload(wrist.payload)
                arm_cmd, _ = wrist_to_arm(self.retarget_state, pose, dt,
                                          self.ctx, self.retarget_params)
            pinch = self.session.latest_pinch
            if pinch is not None:
                grip_cmd = pinch_to_grip(pinch.payload["thumb_tip"],
                                         pinch.payload["index_tip"],
                                         self.retarget_params.pinch_min,
                                         self.retarget_params.pinch_max)
            self.session = dc_replace(self.session, latest_head=None,
                                      latest_wrist=None, latest_pinch=None)
        self._cmd = Command(neck_cmd, arm_cmd, grip_cmd)
        self.head_since_tick = False

        neck_f, wrist_f, static_f = self.ctx.observe(self.world)
        if self.builder is not None and self.session.state == "Recording":
            self.builder.record_step(StepRecord(
                tick=self.world.tick,
                neck_q=[float(v) for v in self.world.neck_q],
                arm_q=[float(v) for v in self.world.arm_q],
                grip=float(self.world.grip),
                cmd_neck_q=[float(v) for v in neck_cmd],
                cmd_arm_q=[float(v) for v in arm_cmd],
                cmd_grip=float(grip_cmd),
                neck_cam=neck_f, wrist_cam=wrist_f, static_cam=static_f,
            ))

        self.world = step(self.world, self._cmd, dt, self.ctx)
        neck_f, wrist_f, static_f = self.ctx.observe(self.world)
        cam = self.ctx.neck_camera_pose(self.world.neck_q)
        state_update = self._msg("StateUpdate", {
            "tick": self.world.tick,
            "session_state": self.session.state,
            "neck_q": [float(v) for v in self.world.neck_q],
            "arm_q": [float(v) for v in self.world.arm_q],
            "grip": float(self.world.grip),
            "attached_object": self.world.attached_object,
            "objects": [[float(v) for v in o.center] for o in self.world.objects],
            "neck_cam_pose": cam.to_dict(),
            "success": success(self.world),
            "episode_steps": len(self.builder) if self.builder is not None else None,
            "last_episode": self.last_episode,
        })
        cam_features = self._msg("CamFeatures", {
            "tick": self.world.tick,
            "neck": neck_f.to_flat(),
            "wrist": wrist_f.to_flat(),
            "static": static_f.to_flat(),
        })
        return [state_update, cam_features]


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _ws_accept_key(key: str) -> str:
    digest = hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()
    return base64.b64encode(digest).decode("ascii")


class _Connection:
    """One client link; reader thread decodes, writer thread drains a queue."""

    def __init__(self, sock: socket.socket, websocket: bool):
        self.sock = sock
        self.websocket = websocket
        self.outbox: queue.Queue = queue.Queue(maxsize=1024)
        self.alive = True

    def send(self, msg: Message) -> None:
        if not self.alive:
            return
        try:
            self.outbox.put_nowait(msg)
        except queue.Full:
            self.alive = False

    def close(self) -> None:
        self.alive = False
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


class TeleopServer:
    """Threaded single-operator server: reader per connection, one tick loop.

    While a session is Recording, ticks are paced by incoming HeadPose
    messages (lockstep) so recorded episodes are a pure function of the pose
    stream; otherwise the loop free-runs at the control rate.
    """

    def __init__(self, core: ServerCore, host: str = "127.0.0.1",
                 tcp_port: int = 7741, ws_port: int = 7742,
                 rate_hz: float = 60.0):
        self.core = core
        self.host = host
        self.rate_hz = rate_hz
        self._inbound: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._operator: _Connection | None = None
        self._threads: list[threading.Thread] = []
        self._tcp = self._listen(tcp_port)
        self._ws = self._listen(ws_port)
        self.tcp_port = self._tcp.getsockname()[1]
        self.ws_port = self._ws.getsockname()[1]

    def _listen(self, port: int) -> socket.socket:
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, port))
        s.listen(4)
        return s

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> None:
        for sock, ws in ((self._tcp, False), (self._ws, True)):
            t = threading.Thread(target=self._accept_loop, args=(sock, ws), daemon=True)
            t.start()
            self._threads.append(t)
        t = threading.Thread(target=self._tick_loop, daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        for sock in (self._tcp, self._ws):
            try:
                sock.close()
            except OSError:
                pass
        with self._lock:
            if self._operator:
                self._operator.close()

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- accept/read ---------------------------------------------------------

    def _accept_loop(self, listener: socket.socket, websocket: bool) -> None:
        while not self._stop.is_set():
            try:
                sock, _ = listener.accept()
            except OSError:
                return
            conn = _Connection(sock, websocket)
            with self._lock:
                if self._operator is not None and self._operator.alive:
                    refusal = Message("Error", 0, 0,
                                      {"message": "an operator is already connected"})
                    try:
                        sock.sendall(self._encode_for(conn, refusal))
                    except OSError:
                        pass
                    conn.close()
                    continue
                self._operator = conn
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()
            threading.Thread(target=self._writer, args=(conn,), daemon=True).start()

    @staticmethod
    def _encode_for(conn: _Connection, msg: Message) -> bytes:
        if conn.websocket:
            return _ws_frame(encode_payload(msg))
        return encode_message(msg)

    def _reader(self, conn: _Connection) -> None:
        try:
            if conn.websocket:
                if not _ws_handshake(conn.sock):
                    conn.close()
                    return
                self._ws_read_loop(conn)
            else:
                self._tcp_read_loop(conn)
        finally:
            conn.close()
            with self._lock:
                if self._operator is conn:
                    self._operator = None

    def _tcp_read_loop(self, conn: _Connection) -> None:
        decoder = FrameDecoder()
        while not self._stop.is_set():
            try:
                data = conn.sock.recv(65536)
            except OSError:
                return
            if not data:
                return
            try:
                msgs = decoder.feed(data)  # malformed frames are skipped
            except FrameError:
                return  # unrecoverable framing: drop the connection
            for m in msgs:
                self._inbound.put(m)

    def _ws_read_loop(self, conn: _Connection) -> None:
        buf = bytearray()
        fragments = bytearray()
        while not self._stop.is_set():
            try:
                data = conn.sock.recv(65536)
            except OSError:
                return
            if not data:
                return
            buf.extend(data)
            while True:
                parsed = _ws_parse_frame(buf)
                if parsed is None:
                    break
                fin, opcode, payload, consumed = parsed
                del buf[:consumed]
                if opcode == 0x8:  # close
                    try:
                        conn.sock.sendall(_ws_frame(b"", opcode=0x8))
                    except OSError:
                        pass
                    return
                if opcode == 0x9:  # ping -> pong
                    try:
                        conn.sock.sendall(_ws_frame(payload, opcode=0xA))
                    except OSError:
                        pass
                    continue
                if opcode == 0xA:
                    continue
                fragments.extend(payload)
                if not fin:
                    continue
                body = bytes(fragments)
                fragments.clear()
                try:
                    self._inbound.put(decode_payload(body))
                except DecodeError:
                    continue

    def _writer(self, conn: _Connection) -> None:
        while conn.alive and not self._stop.is_set():
            try:
                msg = conn.outbox.get(timeout=0.2)
            except queue.Empty:
                continue
            try:
                conn.sock.sendall(self._encode_for(conn, msg))
            except OSError:
                conn.close()
                return

    # -- tick loop -------------------------------------------------------------

    def _broadcast(self, messages) -> None:
        with self._lock:
            conn = self._operator
        if conn is not None:
            for m in messages:
                conn.send(m)

    def _tick_loop(self) -> None:
        period = 1.0 / self.rate_hz
        next_tick = time.monotonic()
        while not self._stop.is_set():
            now = time.monotonic()
            if self.core.session.state == "Recording":
                # lockstep: handle messages one at a time and tick once per
                # applied HeadPose, so the episode is a pure function of the
                # client's message sequence
                try:
                    msg = self._inbound.get(timeout=0.005)
                except queue.Empty:
                    session, effects = check_heartbeat(self.core.session, now)
                    if effects or session.state != self.core.session.state:
                        self.core.session = session
                        for effect in effects:
                            if effect[0] == "StopEpisode":
                                self.core._finalize_episode()
                    continue
                self._broadcast(self.core.handle_message(msg, time.monotonic()))
                if self.core.session.state == "Recording" and self.core.head_since_tick:
                    self._broadcast(self.core.tick(now))
                next_tick = time.monotonic() + period
                continue
            try:
                while True:
                    msg = self._inbound.get_nowait()
                    self._broadcast(self.core.handle_message(msg, time.monotonic()))
                    if self.core.session.state == "Recording":
                        break  # switch to lockstep handling immediately
            except queue.Empty:
                pass
            if self.core.session.state == "Recording":
                continue
            now = time.monotonic()
            if now >= next_tick:
                self._broadcast(self.core.tick(now))
                next_tick += period
                if now - next_tick > 1.0:  # fell far behind; resync
                    next_tick = now + period
            else:
                time.sleep(min(0.002, next_tick - now))


# ---------------------------------------------------------------------------
# minimal RFC 6455 helpers (server side)
# ---------------------------------------------------------------------------

def _ws_handshake(sock: socket.socket) -> bool:
    sock.settimeout(5.0)
    data = b""
    try:
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                return False
            data += chunk
            if len(data) > 65536:
                return False
    except OSError:
        return False
    finally:
        sock.settimeout(None)
    head = data.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    key = None
    for line in head.split("\r\n")[1:]:
        if ":" in line:
            name, value = line.split(":", 1)
            if name.strip().lower() == "sec-websocket-key":
                key = value.strip()
    if key is None:
        try:
            sock.sendall(b"HTTP/1.1 400 Bad Request\r\n\r\n")
        except OSError:
            pass
        return False
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n"
    )
    try:
        sock.sendall(response.encode("latin-1"))
    except OSError:
        return False
    return True


def _ws_parse_frame(buf: bytearray):
    """Parse one frame if complete: (fin, opcode, payload, consumed) or None."""
    if len(buf) < 2:
        return None
    b0, b1 = buf[0], buf[1]
    fin = bool(b0 & 0x80)
    opcode = b0 & 0x0F
    masked = bool(b1 & 0x80)
    length = b1 & 0x7F
    idx = 2
    if length == 126:
        if len(buf) < 4:
            return None
        length = struct.unpack(">H", bytes(buf[2:4]))[0]
        idx = 4
    elif length == 127:
        if len(buf) < 10:
            return None
        length = struct.unpack(">Q", bytes(buf[2:10]))[0]
        idx = 10
    mask = b""
    if masked:
        if len(buf) < idx + 4:
            return None
        mask = bytes(buf[idx:idx + 4])
        idx += 4
    if len(buf) < idx + length:
        return None
    payload = bytes(buf[idx:idx + length])
    if masked:
        payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    return fin, opcode, payload, idx + length


def _ws_frame(payload: bytes, opcode: int = 0x1) -> bytes:
    header = bytearray([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 65536:
        header.append(126)
        header.extend(struct.pack(">H", n))
    else:
        header.append(127)
        header.extend(struct.pack(">Q", n))
    return bytes(header) + payload
