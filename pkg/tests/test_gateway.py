"""Teleop gateway: protocol, clipping parity, commit path, robustness."""

import json
import socket
import threading

import numpy as np
import pytest

from hdlab import dataset, expert, gateway, sim, spaces


class Client:
    """Minimal line-JSON protocol client for tests."""

    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10)
        self.fh = self.sock.makefile("rwb")

    def send(self, message):
        self.fh.write((json.dumps(message) + "\n").encode())
        self.fh.flush()

    def recv(self):
        line = self.fh.readline()
        return json.loads(line) if line else None

    def close(self):
        self.sock.close()


@pytest.fixture
def gateway_port(tmp_path):
    """A live single-session gateway on an ephemeral port."""
    ready = threading.Event()
    server = socket.socket()
    server.bind(("127.0.0.1", 0))
    port = server.getsockname()[1]
    server.close()
    thread = threading.Thread(
        target=gateway.serve,
        args=(port, "teacup", str(tmp_path / "episodes")),
        kwargs={"max_sessions": 1, "ready": ready}, daemon=True)
    thread.start()
    assert ready.wait(10)
    yield port, tmp_path / "episodes"
    thread.join(timeout=15)


def _handshake(client):
    client.send({"kind": "hello", "proto": 1})
    reply = client.recv()
    assert reply == {"kind": "hello", "proto": gateway.PROTO_VERSION}


def test_hello_echo_and_clipping(gateway_port):
    port, _ = gateway_port
    client = Client(port)
    _handshake(client)
    client.send({"kind": "begin", "task": "teacup", "mode": "naive",
                 "seed": 0})
    home_x = sim.HOME_POSE[0]
    client.send({"kind": "cmd", "dx": 0.5, "dy": 0, "dth": 0,
                 "grip": "hold"})
    # the cmd lands on some tick; dx=0.5 is clipped to the 0.02 per-step
    # limit, exactly like sim.step
    state = client.recv()
    assert state["kind"] == "state"
    for _ in range(60):
        if state["ee"]["x"] != home_x:
            break
        state = client.recv()
    assert state["ee"]["x"] == pytest.approx(home_x + sim.STEP_POS_LIMIT)
    client.send({"kind": "end", "commit": False})
    while True:
        msg = client.recv()
        if msg["kind"] != "state":
            break
    assert msg == {"kind": "discarded"}
    client.close()


def test_hd_session_commits_valid_episode(gateway_port):
    port, out = gateway_port
    client = Client(port)
    _handshake(client)
    seed, space_index = 42, 0
    client.send({"kind": "begin", "task": "teacup", "mode": "hd",
                 "space": space_index, "seed": seed})
    start = client.recv()
    assert start["kind"] == "start"
    assert "pose" in start and "region" in start

    # mirror the gateway's sampling to drive the expert locally in lockstep
    segs = spaces.segment_task("teacup")
    space = segs[space_index]
    local = sim.init_task("teacup", seed)
    rng = np.random.default_rng([seed, space_index, 0])
    pose = spaces.sample_start(space, local, rng)
    local = spaces.place_start(local, space, pose)
    assert start["pose"]["x"] == pytest.approx(pose.x)

    for i in range(sim.ATOMIC_CAP):
        a = expert.expert_action(local)
        client.send({"kind": "cmd", "dx": a.dx, "dy": a.dy,
                     "dth": a.dtheta, "grip": a.grip, "seq": i})
        # states are emitted every tick; wait for the one that applied
        # this cmd (the echoed seq pairs cmds with ticks)
        state = client.recv()
        while state["seq"] != i:
            state = client.recv()
        assert state["kind"] == "state"
        local = sim.step(local, a)
        assert state["ee"]["x"] == pytest.approx(local.ee.x)
        if spaces.termination_reached(space, local, segs):
            break
    client.send({"kind": "end", "commit": True})
    msg = client.recv()
    while msg["kind"] == "state":
        msg = client.recv()
    assert msg["kind"] == "saved"
    client.close()

    episode = dataset.read_episode(msg["path"])
    assert episode.mode == "hd" and episode.space_index == space_index
    assert episode.success
    # committed human episodes mix with scripted data
    handle = dataset.build_mix(str(out), dataset.MixSpec(0, 1), seed=0)
    assert len(handle.episode_paths) == 1


def test_failed_session_discarded(gateway_port):
    port, out = gateway_port
    client = Client(port)
    _handshake(client)
    client.send({"kind": "begin", "task": "teacup", "mode": "naive",
                 "seed": 1})
    client.send({"kind": "cmd", "dx": 0.01, "dy": 0, "dth": 0,
                 "grip": "hold"})
    assert client.recv()["kind"] == "state"
    client.send({"kind": "end", "commit": True})  # nothing achieved
    msg = client.recv()
    while msg["kind"] == "state":
        msg = client.recv()
    assert msg == {"kind": "discarded"}
    client.close()
    assert not list(out.glob("*.hdse"))


def test_protocol_violation_closes_session(gateway_port):
    port, _ = gateway_port
    client = Client(port)
    client.send({"kind": "cmd", "dx": 1})  # cmd before hello
    msg = client.recv()
    assert msg["kind"] == "error"
    assert client.recv() is None  # session closed
    client.close()


def test_bad_json_never_crashes_service(tmp_path):
    ready = threading.Event()
    server = socket.socket()
    server.bind(("127.0.0.1", 0))
    port = server.getsockname()[1]
    server.close()
    thread = threading.Thread(
        target=gateway.serve,
        args=(port, "teacup", str(tmp_path)),
        kwargs={"max_sessions": 2, "ready": ready}, daemon=True)
    thread.start()
    assert ready.wait(10)

    rogue = socket.create_connection(("127.0.0.1", port), timeout=10)
    rogue.sendall(b"this is not json\n")
    rogue.close()

    client = Client(port)  # the service accepts the next session
    _handshake(client)
    client.send({"kind": "begin", "task": "teacup", "mode": "naive",
                 "seed": 0})
    client.send({"kind": "end", "commit": False})
    msg = client.recv()
    while msg and msg["kind"] == "state":
        msg = client.recv()
    assert msg == {"kind": "discarded"}
    client.close()
    thread.join(timeout=15)


def test_websocket_transport(gateway_port):
    port, _ = gateway_port
    sock = socket.create_connection(("127.0.0.1", port), timeout=10)
    sock.sendall(b"GET / HTTP/1.1\r\n"
                 b"Host: localhost\r\n"
                 b"Upgrade: websocket\r\n"
                 b"Connection: Upgrade\r\n"
                 b"Sec-WebSocket-Key: dGhlIHNhbXBsZSBub25jZQ==\r\n"
                 b"Sec-WebSocket-Version: 13\r\n\r\n")
    response = b""
    while b"\r\n\r\n" not in response:
        response += sock.recv(4096)
    assert b"101 Switching Protocols" in response
    assert b"s3pPLMBiTxaQ9kYGzzhZRbK+xOo=" in response  # RFC 6455 sample key

    def send_text(payload: bytes):
        mask = b"\x01\x02\x03\x04"
        masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        sock.sendall(bytes([0x81, 0x80 | len(payload)]) + mask + masked)

    def recv_text():
        head = sock.recv(2)
        length = head[1] & 0x7F
        if length == 126:
            length = int.from_bytes(sock.recv(2), "big")
        data = b""
        while len(data) < length:
            data += sock.recv(length - len(data))
        return json.loads(data)

    send_text(json.dumps({"kind": "hello", "proto": 1}).encode())
    assert recv_text() == {"kind": "hello", "proto": 1}
    sock.close()
