// Round trip against the real Python service on local loopback: the
// scripted stand-in for a browser session. Requires the lidarsim package
// to be installed (pip install -e ..).

import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, test } from "vitest";
import WebSocket from "ws";

import { encodeCommand, resetSeqForTest } from "../src/protocol.js";
import { UiSessionState } from "../src/session.js";

const SERVER_SCRIPT = `
import time
from lidarsim.engine import RunConfig
from lidarsim.sensors import lidar_model
from lidarsim.service import ServiceThread
cfg = RunConfig(scene="room", duration=float("inf"),
                lidar=lidar_model("avia", point_rate=2400.0))
svc = ServiceThread(cfg, port=0)
print(svc.start(), flush=True)
while True:
    time.sleep(1)
`;

let proc: ChildProcess;
let port = 0;

type Incoming = { text?: string; binary?: ArrayBuffer };

class Client {
  ws: WebSocket;
  queue: Incoming[] = [];
  waiters: ((m: Incoming) => void)[] = [];
  closed = false;

  constructor(url: string) {
    this.ws = new WebSocket(url);
    this.ws.on("message", (data: Buffer, isBinary: boolean) => {
      const item: Incoming = isBinary
        ? { binary: data.buffer.slice(data.byteOffset, data.byteOffset + data.byteLength) }
        : { text: data.toString() };
      const w = this.waiters.shift();
      if (w) w(item);
      else this.queue.push(item);
    });
    this.ws.on("close", () => { this.closed = true; });
  }

  open(): Promise<void> {
    return new Promise((resolve, reject) => {
      this.ws.on("open", resolve);
      this.ws.on("error", reject);
    });
  }

  recv(timeoutMs = 5000): Promise<Incoming> {
    const item = this.queue.shift();
    if (item) return Promise.resolve(item);
    return new Promise((resolve, reject) => {
      const t = setTimeout(() => reject(new Error("recv timeout")), timeoutMs);
      this.waiters.push((m) => { clearTimeout(t); resolve(m); });
    });
  }

  async recvType(type: string, timeoutMs = 5000): Promise<any> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const m = await this.recv(Math.max(50, deadline - Date.now()));
      if (m.text) {
        const msg = JSON.parse(m.text);
        if (msg.type === type) return msg;
      }
      if (Date.now() > deadline) throw new Error(`no ${type} within ${timeoutMs} ms`);
    }
  }

  send(raw: string): void {
    this.ws.send(raw);
  }

  close(): void {
    this.ws.close();
  }
}

beforeAll(async () => {
  proc = spawn("python3", ["-c", SERVER_SCRIPT], { stdio: ["ignore", "pipe", "inherit"] });
  port = await new Promise<number>((resolve, reject) => {
    const t = setTimeout(() => reject(new Error("service did not start")), 20000);
    proc.stdout!.once("data", (chunk: Buffer) => {
      clearTimeout(t);
      resolve(parseInt(chunk.toString().trim(), 10));
    });
    proc.once("exit", () => reject(new Error("service exited early")));
  });
}, 30000);

afterAll(() => {
  proc?.kill();
});

describe("live service round trip", () => {
  test("forward key raises commanded speed within 100 ms", { timeout: 30000 }, async () => {
    resetSeqForTest();
    const c = new Client(`ws://127.0.0.1:${port}`);
    await c.open();
    c.send(encodeCommand("hello", { role: "controller" }));
    const hello = await c.recvType("hello");
    expect(hello.payload.role).toBe("controller");
    // let telemetry settle so the latency measurement is clean
    await c.recvType("state");
    await c.recvType("state");

    const t0 = performance.now();
    c.send(encodeCommand("cmd_teleop", { key: "up" }));
    let latency = Infinity;
    for (;;) {
      const msg = await c.recvType("state", 3000);
      if (msg.payload.v > 0) {
        latency = performance.now() - t0;
        expect(msg.payload.v).toBeCloseTo(0.05, 6);
        break;
      }
    }
    expect(latency).toBeLessThanOrEqual(100);
    c.close();
  });

  test("three waypoints yield a rendered 5000-point path", { timeout: 30000 }, async () => {
    const session = new UiSessionState();
    const ctl = new Client(`ws://127.0.0.1:${port}`);
    await ctl.open();
    ctl.send(encodeCommand("hello", { role: "controller" }));
    await ctl.recvType("hello");
    ctl.send(encodeCommand("cmd_waypoints", { points: [[0, 0], [1.5, 0.5], [3, 0]] }));
    const path = await ctl.recvType("path", 10000);
    session.handleText(JSON.stringify(path));
    expect(session.path?.length).toBe(5000);
    ctl.close();
  });

  test("malformed binary frame increments drop counter without disconnect", { timeout: 30000 }, async () => {
    const c = new Client(`ws://127.0.0.1:${port}`);
    const session = new UiSessionState();
    await c.open();
    c.send(encodeCommand("hello", { role: "observer" }));
    await c.recvType("hello");

    // a real telemetry message decodes fine
    const state = await c.recvType("state");
    expect(session.handleText(JSON.stringify(state))).not.toBeNull();

    // inject garbage as if a frame arrived corrupted
    const garbage = new Uint8Array([9, 0, 0, 0, 1, 2, 3]).buffer;
    expect(session.handleBinary(garbage)).toBeNull();
    expect(session.droppedFrames).toBe(1);

    // the connection is still alive and serving telemetry afterwards
    const again = await c.recvType("state", 3000);
    expect(session.handleText(JSON.stringify(again))).not.toBeNull();
    expect(c.closed).toBe(false);
    c.close();
  });
});
