"""Single-session teleoperation gateway.

Bridges the simulator to a human console over line-delimited JSON on TCP,
with an optional WebSocket wrapper carrying byte-identical payloads. The
session loop ticks at 30 Hz: it applies the most recent cmd (clipped
exactly as sim.step does), records a frame while a session is active, and
emits the full workspace state. A cmd may carry a client-assigned seq;
each state echoes the seq of the most recently applied cmd so clients can
pair commands with ticks. Committed episodes are written through
the standard dataset writer, so human demonstrations mix freely with
scripted ones.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import socket
import threading
import time
from collections import deque

import numpy as np

from . import dataset, sim, spaces

PROTO_VERSION = 1
TICK_SECONDS = 1.0 / sim.CONTROL_HZ
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ProtocolError(Exception):
    """Client broke the session protocol; the session ends, the service
    keeps running."""


# --- Transports --------------------------------------------------------------

class LineTransport:
    """One JSON object per newline-terminated line over a TCP socket."""

    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self._sock = sock
        self._buffer = bytearray(initial)
        self._lock = threading.Lock()

    def recv_message(self):
        while b"\n" not in self._buffer:
            chunk = self._sock.recv(4096)
            if not chunk:
                return None
            self._buffer.extend(chunk)
        line, _, rest = bytes(self._buffer).partition(b"\n")
        self._buffer = bytearray(rest)
        return _parse_payload(line)

    def send_message(self, message: dict) -> None:
        payload = json.dumps(message, sort_keys=True).encode("utf-8")
        with self._lock:
            self._sock.sendall(payload + b"\n")

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class WebSocketTransport:
    """Minimal RFC 6455 server endpoint carrying one JSON text per frame."""

    def __init__(self, sock: socket.socket, initial: bytes = b""):
        self._sock = sock
        self._buffer = bytearray(initial)
        self._lock = threading.Lock()
        self._handshake()

    def _read_until(self, token: bytes) -> bytes:
        while token not in self._buffer:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ProtocolError("connection closed during handshake")
            self._buffer.extend(chunk)
        head, _, rest = bytes(self._buffer).partition(token)
        self._buffer = bytearray(rest)
        return head

    def _handshake(self) -> None:
        request = self._read_until(b"\r\n\r\n").decode("latin-1")
        key = None
        for line in request.split("\r\n")[1:]:
            name, _, value = line.partition(":")
            if name.strip().lower() == "sec-websocket-key":
                key = value.strip()
        if key is None:
            raise ProtocolError("websocket handshake without a key")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode("ascii")).digest()).decode()
        self._sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\n"
            b"Connection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode("ascii") + b"\r\n\r\n")

    def _read_exact(self, n: int) -> bytes:
        while len(self._buffer) < n:
            chunk = self._sock.recv(4096)
            if not chunk:
                raise ConnectionError("socket closed")
            self._buffer.extend(chunk)
        head = bytes(self._buffer[:n])
        del self._buffer[:n]
        return head

    def recv_message(self):
        while True:
            try:
                head = self._read_exact(2)
            except ConnectionError:
                return None
            opcode = head[0] & 0x0F
            masked = bool(head[1] & 0x80)
            length = head[1] & 0x7F
            if length == 126:
                length = int.from_bytes(self._read_exact(2), "big")
            elif length == 127:
                length = int.from_bytes(self._read_exact(8), "big")
            mask = self._read_exact(4) if masked else b"\x00" * 4
            payload = self._read_exact(length)
            if masked:
                payload = bytes(b ^ mask[i % 4]
                                for i, b in enumerate(payload))
            if opcode == 0x8:  # close
                return None
            if opcode == 0x9:  # ping -> pong
                self._send_frame(0xA, payload)
                continue
            if opcode in (0x1, 0x2):
                return _parse_payload(payload)
            # ignore continuation/pong frames

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        header = bytearray([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header.append(n)
        elif n < 1 << 16:
            header.append(126)
            header.extend(n.to_bytes(2, "big"))
        else:
            header.append(127)
            header.extend(n.to_bytes(8, "big"))
        with self._lock:
            self._sock.sendall(bytes(header) + payload)

    def send_message(self, message: dict) -> None:
        self._send_frame(0x1, json.dumps(message, sort_keys=True)
                         .encode("utf-8"))

    def close(self) -> None:
        try:
            self._send_frame(0x8, b"")
        except OSError:
            pass
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def _parse_payload(raw: bytes):
    try:
        message = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(message, dict) or "kind" not in message:
        raise ProtocolError("message must be an object with a kind field")
    return message


def _open_transport(sock: socket.socket):
    """Sniff the first bytes: an HTTP GET means WebSocket, else line JSON."""
    probe = sock.recv(4, socket.MSG_PEEK)
    if probe.startswith(b"GET"):
        return WebSocketTransport(sock)
    return LineTransport(sock)


# --- Session -----------------------------------------------------------------

class _Inbox:
    """Thread-safe message queue fed by the reader thread."""

    def __init__(self):
        self._items = deque()
        self._lock = threading.Lock()
        self.closed = False

    def push(self, item) -> None:
        with self._lock:
            self._items.append(item)

    def drain(self) -> list:
        with self._lock:
            items = list(self._items)
            self._items.clear()
        return items

    def wait_one(self, poll: float = 0.005):
        while True:
            with self._lock:
                if self._items:
                    return self._items.popleft()
                if self.closed:
                    return None
            time.sleep(poll)


def _pose_json(pose: sim.Pose2) -> dict:
    return {"x": pose.x, "y": pose.y, "theta": pose.theta}


def state_message(state: sim.WorkspaceState, frames: int,
                  recording: bool) -> dict:
    bools, completed = sim.subtask_status(state)
    return {
        "kind": "state",
        "t": state.t,
        "ee": _pose_json(state.ee),
        "aperture": state.aperture,
        "attached": state.attached_id,
        "objects": [{
            "id": o.id, "category": o.category,
            "x": o.pose.x, "y": o.pose.y, "theta": o.pose.theta,
            "attached": o.attached, "exited": o.exited,
        } for o in state.objects],
        "subtasks": [bool(b) for b in bools],
        "completed": completed,
        "frames": frames,
        "lid_angle": state.lid_angle,
        "belt_speed": state.belt_speed,
        "task": state.task_id,
        "success": sim.is_success(state),
        "recording": recording,
    }


class Session:
    """One client connection: handshake, at most one recording episode."""

    def __init__(self, transport, out_dir: str,
                 default_task: str, default_belt_speed: float | None):
        self.transport = transport
        self.out_dir = out_dir
        self.default_task = default_task
        self.default_belt_speed = default_belt_speed
        self.inbox = _Inbox()
        self.state = None
        self.space = None
        self.task_spaces = None
        self.mode = None
        self.seed = 0
        self.frames = []
        self.result_path = None
        self.applied_seq = None

    # -- protocol steps --------------------------------------------------

    def run(self) -> None:
        reader = threading.Thread(target=self._read_loop, daemon=True)
        reader.start()
        try:
            self._handshake()
            begin = self._await_kind("begin")
            self._begin(begin)
            self._tick_loop()
        except ProtocolError as exc:
            self._try_send({"kind": "error", "message": str(exc)})
        finally:
            self.transport.close()

    def _try_send(self, message: dict) -> None:
        try:
            self.transport.send_message(message)
        except OSError:
            pass

    def _read_loop(self) -> None:
        try:
            while True:
                message = self.transport.recv_message()
                if message is None:
                    break
                self.inbox.push(message)
        except (ProtocolError, OSError) as exc:
            self.inbox.push(exc)
        self.inbox.closed = True

    def _await_kind(self, kind: str) -> dict:
        message = self.inbox.wait_one()
        if message is None:
            raise ProtocolError("connection closed")
        if isinstance(message, Exception):
            raise ProtocolError(str(message))
        if message.get("kind") != kind:
            raise ProtocolError(f"expected {kind}, got "
                                f"{message.get('kind')!r}")
        return message

    def _handshake(self) -> None:
        hello = self._await_kind("hello")
        if hello.get("proto") != PROTO_VERSION:
            raise ProtocolError(f"unsupported proto {hello.get('proto')!r}")
        self.transport.send_message({"kind": "hello",
                                     "proto": PROTO_VERSION})

    def _begin(self, message: dict) -> None:
        task = message.get("task", self.default_task)
        if task not in sim.HORIZON_CAPS:
            raise ProtocolError(f"unknown task {task!r}")
        mode = message.get("mode", "naive")
        if mode not in ("naive", "hd"):
            raise ProtocolError(f"unknown mode {mode!r}")
        seed = message.get("seed", 0)
        if not isinstance(seed, int) or seed < 0:
            raise ProtocolError("seed must be a non-negative integer")
        belt_speed = message.get("belt_speed", self.default_belt_speed)
        self.mode = mode
        self.seed = seed
        try:
            self.state = sim.init_task(task, seed, belt_speed)
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc
        if mode == "hd":
            self.task_spaces = spaces.segment_task(task)
            index = message.get("space", 0)
            if not isinstance(index, int) or \
                    not 0 <= index < len(self.task_spaces):
                raise ProtocolError(f"space must lie in "
                                    f"[0, {len(self.task_spaces)})")
            self.space = self.task_spaces[index]
            if task == "pens":
                self.state = spaces.preplace_pens(self.state,
                                                  seed % sim.PEN_COUNT)
            self._place(resample=0)

    def _place(self, resample: int) -> None:
        """Sample a start pose (re-rolling on resample requests) and reset
        the recording."""
        rng = np.random.default_rng([self.seed, self.space.index, resample])
        pose = spaces.sample_start(self.space, self.state, rng)
        self.state = spaces.place_start(self.state, self.space, pose)
        self.frames = []
        region = self.space.start_region
        anchor = spaces.resolve_anchor(region, self.state)
        self.transport.send_message({
            "kind": "start",
            "pose": _pose_json(pose),
            "region": {"x": anchor.x, "y": anchor.y,
                       "theta": anchor.theta,
                       "half_width": region.half_width,
                       "theta_half_range": region.theta_half_range},
        })

    def _episode_done(self) -> bool:
        if self.mode == "hd":
            return spaces.termination_reached(self.space, self.state,
                                              self.task_spaces)
        return sim.is_success(self.state)

    def _tick_loop(self) -> None:
        proposals = 0
        start = time.monotonic()
        tick = 0
        while True:
            cmd = None
            for message in self.inbox.drain():
                if isinstance(message, Exception):
                    raise ProtocolError(str(message))
                kind = message.get("kind")
                if kind == "cmd":
                    cmd = message  # last writer wins within a tick
                elif kind == "propose_start":
                    if self.mode != "hd":
                        raise ProtocolError("propose_start requires mode=hd")
                    proposals += 1
                    self._place(resample=proposals)
                elif kind == "end":
                    self._finish(bool(message.get("commit")))
                    return
                else:
                    raise ProtocolError(f"unexpected message kind {kind!r}")
            if self.inbox.closed:
                raise ProtocolError("connection closed mid-session")
            action = self._to_action(cmd) if cmd else sim.Action(0, 0, 0,
                                                                 "hold")
            action = action.clipped()
            if cmd is not None and "seq" in cmd:
                self.applied_seq = cmd["seq"]
            if not self._episode_done():
                self.frames.append((sim.rasterize(self.state),
                                    sim.proprio(self.state),
                                    action.encode()))
            self.state = sim.step(self.state, action)
            message = state_message(self.state, len(self.frames), True)
            message["seq"] = self.applied_seq
            self.transport.send_message(message)
            tick += 1
            deadline = start + tick * TICK_SECONDS
            delay = deadline - time.monotonic()
            if delay > 0:
                time.sleep(delay)

    @staticmethod
    def _to_action(cmd: dict) -> sim.Action:
        grip = cmd.get("grip", "hold")
        if grip not in sim.Action.GRIP_CODES:
            raise ProtocolError(f"unknown grip {grip!r}")
        try:
            return sim.Action(float(cmd.get("dx", 0.0)),
                              float(cmd.get("dy", 0.0)),
                              float(cmd.get("dth", 0.0)), grip)
        except (TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed cmd: {exc}") from exc

    def _finish(self, commit: bool) -> None:
        if commit and self.frames and self._episode_done():
            grids = np.stack([f[0] for f in self.frames])
            props = np.stack([f[1] for f in self.frames])
            actions = np.stack([f[2] for f in self.frames])
            space_index = self.space.index if self.mode == "hd" else -1
            header = self.space.to_header() if self.mode == "hd" else None
            episode = dataset.Episode(self.state.task_id, self.mode,
                                      self.seed, space_index, True,
                                      grids, props, actions, header)
            path = os.path.join(self.out_dir,
                                dataset.episode_filename(episode))
            dataset.write_episode(episode, path)
            self.result_path = path
            self.transport.send_message({"kind": "saved", "path": path})
        else:
            self.transport.send_message({"kind": "discarded"})


# --- Service -----------------------------------------------------------------

def serve(port: int, task_id: str, out_dir: str,
          belt_speed: float | None = None, max_sessions: int | None = None,
          host: str = "127.0.0.1", ready: threading.Event | None = None):
    """Accept teleop sessions one at a time; never crashes on client errors.

    max_sessions bounds the number of served connections (None = forever);
    ready, when given, is set once the socket is listening.
    """
    if task_id not in sim.HORIZON_CAPS:
        raise ValueError(f"unknown task {task_id!r}")
    os.makedirs(out_dir, exist_ok=True)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, port))
    server.listen(1)
    if ready is not None:
        ready.set()
    served = 0
    try:
        while max_sessions is None or served < max_sessions:
            conn, _ = server.accept()
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            try:
                transport = _open_transport(conn)
                Session(transport, out_dir, task_id, belt_speed).run()
            except (ProtocolError, OSError):
                conn.close()
            served += 1
    finally:
        server.close()
