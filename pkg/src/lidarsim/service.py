"""Interactive session front door: websocket telemetry + teleop commands.

One controlling client plus any number of observers connect to a running
engine session. Control/state messages are JSON text envelopes
`{type, seq, t_sim, payload}`; point-cloud frames are binary messages laid
out as `u32 header_len | JSON envelope | MSPC cloud blob` (the same cloud
format the sequence store writes). Commands are queued reliably and applied
at tick boundaries; telemetry is newest-wins per type under back-pressure,
so a slow viewer can never stall or alter the simulation.
"""

from __future__ import annotations

import asyncio
import itertools
import json
import queue
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .engine import Engine, RunConfig
from .sensors import PointCloudFrame
from .store import encode_cloud

PROTOCOL_VERSION = 1
CLOUD_POINT_CAP = 20000
WIRE_VOXEL = 0.05  # m, starting voxel for wire downsampling


class ProtocolError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# cloud downsampling
# ---------------------------------------------------------------------------

def downsample_cloud(frame: PointCloudFrame, voxel: float) -> PointCloudFrame:
    """One point per occupied voxel, keeping the earliest point (by dt)."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(frame) == 0:
        return frame
    keys = np.floor(frame.xyz / voxel).astype(np.int64)
    _uniq, first = np.unique(keys, axis=0, return_index=True)
    sel = np.sort(first)  # frame points are dt-ordered, so first index wins
    return PointCloudFrame(frame.t0, frame.xyz[sel], frame.intensity[sel], frame.dt[sel])


def wire_cloud(frame: PointCloudFrame, cap: int = CLOUD_POINT_CAP, voxel: float = WIRE_VOXEL) -> PointCloudFrame:
    """Frame as sent on the wire: unchanged if under the cap, else voxelized
    with a doubling voxel until it fits."""
    if len(frame) <= cap:
        return frame
    out = downsample_cloud(frame, voxel)
    while len(out) > cap:
        voxel *= 2.0
        out = downsample_cloud(frame, voxel)
    return out


# ---------------------------------------------------------------------------
# telemetry hub (engine thread -> service loop)
# ---------------------------------------------------------------------------

class TelemetryHub:
    """Thread-safe, newest-wins-per-type telemetry mailbox."""

    def __init__(self):
        self._lock = threading.Lock()
        self._latest: dict[str, tuple[int, object]] = {}
        self._counter = itertools.count(1)

    def push(self, kind: str, payload):
        with self._lock:
            self._latest[kind] = (next(self._counter), payload)

    def collect(self, since: dict[str, int]):
        """Items newer than the per-type versions in `since` (updated in place)."""
        out = []
        with self._lock:
            for kind, (version, payload) in self._latest.items():
                if version > since.get(kind, 0):
                    out.append((version, kind, payload))
                    since[kind] = version
        out.sort()
        return out

    def latest(self, kind: str):
        with self._lock:
            item = self._latest.get(kind)
        return item[1] if item else None


# ---------------------------------------------------------------------------
# engine session thread
# ---------------------------------------------------------------------------

class InteractiveSession:
    """Engine running real-time in a worker thread, wired to queues."""

    def __init__(self, cfg: RunConfig):
        self.cfg = replace_config_for_interactive(cfg)
        self.bus: queue.Queue = queue.Queue()  # reliable: commands are never dropped
        self.hub = TelemetryHub()
        self.stop_event = threading.Event()
        self.result = None
        self.error: BaseException | None = None
        self._thread = threading.Thread(target=self._run, daemon=True)

    def _run(self):
        try:
            engine = Engine(
                self.cfg,
                command_bus=self.bus,
                telemetry=self.hub.push,
                stop_event=self.stop_event,
            )
            self.result = engine.run()
        except BaseException as exc:  # surfaced to the service loop
            self.error = exc

    def start(self):
        self._thread.start()

    def stop(self, timeout: float = 5.0):
        self.stop_event.set()
        self._thread.join(timeout)


def replace_config_for_interactive(cfg: RunConfig) -> RunConfig:
    import dataclasses

    return dataclasses.replace(cfg, realtime=True)


# ---------------------------------------------------------------------------
# wire encoding
# ---------------------------------------------------------------------------

def encode_text(kind: str, seq: int, t_sim: float, payload) -> str:
    return json.dumps(
        {"type": kind, "seq": seq, "t_sim": t_sim, "payload": payload},
        separators=(",", ":"),
    )


def encode_cloud_message(seq: int, frame: PointCloudFrame, pose: dict | None = None) -> bytes:
    envelope = {"type": "cloud", "seq": seq, "t_sim": frame.t0, "points": len(frame)}
    if pose:
        envelope["pose"] = pose  # sensor pose at frame start, for world placement
    header = json.dumps(envelope, separators=(",", ":")).encode()
    blob = encode_cloud(frame.t0, frame.xyz, frame.intensity, frame.dt)
    return struct.pack("<I", len(header)) + header + blob


def _payload_for_wire(kind: str, payload):
    if kind == "path":
        return {"samples": np.asarray(payload["samples"]).round(4).tolist()}
    return payload


# ---------------------------------------------------------------------------
# websocket service
# ---------------------------------------------------------------------------

@dataclass
class _Client:
    conn: object
    role: str = "observer"
    since: dict = None
    seq: int = 0
    last_client_seq: int = -1

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


class Service:
    def __init__(self, session: InteractiveSession):
        self.session = session
        self.clients: dict = {}
        self.controller_key = None

    # -- client message handling --------------------------------------------

    async def _send(self, client: _Client, kind: str, payload, t_sim: float = 0.0):
        state = self.session.hub.latest("state")
        t = state["t"] if state else t_sim
        await client.conn.send(encode_text(kind, client.next_seq(), t, _payload_for_wire(kind, payload)))

    async def _handle_message(self, client: _Client, raw):
        if isinstance(raw, bytes):
            raise ProtocolError("binary_upstream", "clients must send text envelopes")
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProtocolError("bad_json", f"unparseable message: {exc}") from None
        kind = msg.get("type")
        seq = msg.get("seq")
        if isinstance(seq, int):
            if seq <= client.last_client_seq:
                raise ProtocolError("seq_regression", "client seq must be strictly increasing")
            client.last_client_seq = seq
        payload = msg.get("payload") or {}

        if kind == "hello":
            await self._handle_hello(client, payload)
            return
        if client.role is None:
            raise ProtocolError("hello_first", "first message must be hello")
        if kind in ("cmd_teleop", "cmd_waypoints", "cmd_run"):
            if client.role != "controller":
                raise ProtocolError("not_controller", "commands require the controller role")
            self._enqueue_command(kind, payload)
            return
        raise ProtocolError("unknown_type", f"unknown message type {kind!r}")

    async def _handle_hello(self, client: _Client, payload):
        role = payload.get("role", "observer")
        if role == "controller":
            if self.controller_key is not None:
                await self._send(client, "error",
                                 {"code": "controller_exists", "message": "a controller is already connected"})
                raise ProtocolError("controller_exists", "controller slot taken")
            self.controller_key = id(client)
            client.role = "controller"
        else:
            client.role = "observer"
        await self._send(client, "hello", {"version": PROTOCOL_VERSION, "role": client.role})
        # replay cached session context so late joiners can render immediately
        for kind in ("scene_summary", "path", "state"):
            cached = self.session.hub.latest(kind)
            if cached is not None:
                await self._send(client, kind, _payload_for_wire(kind, cached))

    def _enqueue_command(self, kind: str, payload):
        if kind == "cmd_teleop":
            if "key" in payload:
                self.session.bus.put({"kind": "key", "key": str(payload["key"])})
            else:
                self.session.bus.put({
                    "kind": "twist",
                    "v": float(payload.get("v", 0.0)),
                    "w": float(payload.get("w", 0.0)),
                })
        elif kind == "cmd_waypoints":
            self.session.bus.put({"kind": "waypoints", "points": payload.get("points", [])})
        elif kind == "cmd_run":
            self.session.bus.put({"kind": "run", "action": str(payload.get("action", ""))})

    # -- connection lifecycle -------------------------------------------------

    async def handler(self, conn):
        client = _Client(conn=conn, role=None, since={})
        self.clients[id(client)] = client
        try:
            async for raw in conn:
                try:
                    await self._handle_message(client, raw)
                except ProtocolError as exc:
                    if exc.code != "controller_exists":  # already reported
                        await self._send(client, "error", {"code": exc.code, "message": str(exc)})
                    break  # protocol violation: disconnect the offender
        finally:
            self.clients.pop(id(client), None)
            if self.controller_key == id(client):
                self.controller_key = None
            await conn.close()

    async def broadcaster(self, period: float = 0.01):
        while True:
            if self.session.error is not None:
                raise self.session.error
            for client in list(self.clients.values()):
                if client.role is None:
                    continue
                items = self.session.hub.collect(client.since)
                for _v, kind, payload in items:
                    try:
                        if kind == "cloud":
                            pose = {"xyz": payload["pose_xyz"], "quat_wxyz": payload["pose_quat_wxyz"]}
                            await client.conn.send(
                                encode_cloud_message(client.next_seq(), wire_cloud(payload["frame"]), pose)
                            )
                        else:
                            await self._send(client, kind, _payload_for_wire(kind, payload))
                    except Exception:
                        break  # connection closed; handler cleans up
            await asyncio.sleep(period)


async def serve_async(cfg: RunConfig, host: str = "127.0.0.1", port: int = 8765,
                      ready: "asyncio.Future | None" = None):
    """Run the engine session and the websocket service until cancelled."""
    from websockets.asyncio.server import serve as ws_serve

    session = InteractiveSession(cfg)
    session.start()
    service = Service(session)
    try:
        async with ws_serve(service.handler, host, port) as server:
            bound = server.sockets[0].getsockname()[1] if server.sockets else port
            if ready is not None and not ready.done():
                ready.set_result(bound)
            await service.broadcaster()
    finally:
        session.stop()


def serve(cfg: RunConfig, host: str = "127.0.0.1", port: int = 8765):
    """Blocking entry point used by the CLI; returns on interrupt."""
    try:
        asyncio.run(serve_async(cfg, host, port))
    except KeyboardInterrupt:
        pass


class ServiceThread:
    """Service + session on a background thread (used by tests)."""

    def __init__(self, cfg: RunConfig, host: str = "127.0.0.1", port: int = 0):
        self.cfg = cfg
        self.host = host
        self.port = port
        self.bound_port: int | None = None
        self._loop = None
        self._task = None
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._started = threading.Event()

    def _run(self):
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        ready = self._loop.create_future()

        async def main():
            task = asyncio.ensure_future(serve_async(self.cfg, self.host, self.port, ready))
            self._task = task
            self.bound_port = await ready
            self._started.set()
            try:
                await task
            except asyncio.CancelledError:
                pass

        try:
            self._loop.run_until_complete(main())
        finally:
            self._loop.close()

    def start(self, timeout: float = 10.0):
        self._thread.start()
        if not self._started.wait(timeout):
            raise RuntimeError("service failed to start")
        return self.bound_port

    def stop(self):
        if self._loop and self._task:
            self._loop.call_soon_threadsafe(self._task.cancel)
        self._thread.join(5.0)
