import base64
import hashlib
import json
import socket
import struct
import time

import numpy as np
import pytest

from neckbench.protocol import FrameDecoder, Message, encode_message
from neckbench.recorder import load_episode, verify_replay
from neckbench.server import ServerCore, TeleopServer, _ws_accept_key, _ws_frame, _ws_parse_frame
from neckbench.simworld import SimContext


def head_payload(x=0.0, y=0.0, z=0.0):
    return {"position": [x, y, z], "orientation": [1.0, 0.0, 0.0, 0.0]}


class TcpClient:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.decoder = FrameDecoder()
        self.seq = 0
        self.inbox = []

    def send(self, mtype, payload=None):
        self.seq += 1
        self.sock.sendall(encode_message(Message(mtype, self.seq, self.seq, payload or {})))

    def pump(self, timeout=0.5):
        self.sock.settimeout(timeout)
        try:
            data = self.sock.recv(1 << 16)
        except socket.timeout:
            return
        if data:
            self.inbox.extend(self.decoder.feed(data))

    def wait_for(self, mtype, tries=40):
        for _ in range(tries):
            for m in self.inbox:
                if m.type == mtype:
                    return m
            self.pump()
        raise AssertionError(f"never received {mtype}; got {[m.type for m in self.inbox]}")

    def close(self):
        self.sock.close()


@pytest.fixture()
def server(tmp_path):
    core = ServerCore(task="L2Rmod", seed=0, record_dir=str(tmp_path))
    srv = TeleopServer(core, tcp_port=0, ws_port=0)
    srv.start()
    yield srv
    srv.stop()


def test_tcp_handshake_and_state_stream(server):
    client = TcpClient(server.tcp_port)
    client.send("Hello")
    ack = client.wait_for("HelloAck")
    assert ack.payload["state"] == "Connected"
    scene = client.wait_for("SceneGeometry")
    assert len(scene.payload["objects"]) == 4
    assert scene.payload["task"] == "L2Rmod"
    client.wait_for("StateUpdate")
    client.wait_for("CamFeatures")
    client.close()


def test_second_connection_refused(server):
    first = TcpClient(server.tcp_port)
    first.send("Hello")
    first.wait_for("HelloAck")
    time.sleep(0.05)
    second = TcpClient(server.tcp_port)
    err = second.wait_for("Error")
    assert "already connected" in err.payload["message"]
    first.close()
    second.close()


def test_recording_over_tcp_replays_exactly(server, tmp_path):
    client = TcpClient(server.tcp_port)
    client.send("Hello")
    client.wait_for("HelloAck")
    client.send("Calibrate", {"head_pose": head_payload(), "wrist_pose": head_payload()})
    client.send("HeadPose", head_payload())
    client.wait_for("StateUpdate")
    client.send("RecordStart")
    for i in range(30):
        client.send("HeadPose", head_payload(0.001 * i, 0.0, 0.0))
        client.send("Pinch", {"thumb_tip": [0, 0, 0], "index_tip": [0.08, 0, 0]})
    client.send("RecordStop")
    deadline = time.time() + 5.0
    info = None
    while time.time() < deadline:
        client.pump(0.2)
        done = [m for m in client.inbox
                if m.type == "StateUpdate" and m.payload.get("last_episode")]
        if done:
            info = done[-1].payload["last_episode"]
            break
    assert info is not None, "episode was never finalized"
    assert info["steps"] == 30  # lockstep: one tick per head pose
    episode = load_episode(info["path"])
    verify_replay(episode, SimContext())
    client.close()


def _ws_client_frame(payload: bytes) -> bytes:
    # client frames must be masked
    mask = b"\x12\x34\x56\x78"
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    header = bytearray([0x81])
    n = len(payload)
    if n < 126:
        header.append(0x80 | n)
    else:
        header.append(0x80 | 126)
        header.extend(struct.pack(">H", n))
    return bytes(header) + mask + masked


def test_websocket_endpoint_speaks_same_schema(server):
    sock = socket.create_connection(("127.0.0.1", server.ws_port), timeout=5.0)
    key = base64.b64encode(b"0123456789abcdef").decode()
    request = (
        f"GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\n"
        f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
        f"Sec-WebSocket-Version: 13\r\n\r\n"
    )
    sock.sendall(request.encode())
    response = b""
    while b"\r\n\r\n" not in response:
        response += sock.recv(4096)
    head = response.split(b"\r\n\r\n", 1)[0].decode()
    assert "101" in head.splitlines()[0]
    expected = _ws_accept_key(key)
    assert expected in head

    hello = json.dumps({"type": "Hello", "seq": 1, "t_mono": 0, "payload": {}}).encode()
    sock.sendall(_ws_client_frame(hello))
    buf = bytearray(response.split(b"\r\n\r\n", 1)[1])
    got_types = []
    sock.settimeout(2.0)
    deadline = time.time() + 5.0
    while time.time() < deadline and "SceneGeometry" not in got_types:
        try:
            buf.extend(sock.recv(1 << 16))
        except socket.timeout:
            continue
        while True:
            parsed = _ws_parse_frame(buf)
            if parsed is None:
                break
            fin, opcode, payload, consumed = parsed
            del buf[:consumed]
            if opcode == 0x1:
                got_types.append(json.loads(payload.decode())["type"])
    assert "HelloAck" in got_types
    assert "SceneGeometry" in got_types
    sock.close()


def test_ws_accept_key_rfc_example():
    # RFC 6455 section 1.3 worked example
    assert _ws_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


def test_ws_frame_round_trip():
    for size in (0, 1, 125, 126, 400, 70000):
        payload = bytes(range(256)) * (size // 256 + 1)
        payload = payload[:size]
        framed = bytearray(_ws_frame(payload))
        fin, opcode, got, consumed = _ws_parse_frame(framed)
        assert fin and opcode == 0x1
        assert got == payload
        assert consumed == len(framed)
