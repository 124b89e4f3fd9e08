import { describe, expect, test } from "vitest";

import {
  DecodeError,
  decodeCloudMessage,
  decodeText,
  encodeCommand,
  resetSeqForTest,
  transformPoint,
} from "../src/protocol.js";

// build a binary cloud message by hand: u32 header_len | JSON | MSPC blob
function buildCloudMessage(points: number[][], opts: { magic?: string; truncate?: number } = {}): ArrayBuffer {
  const header = new TextEncoder().encode(
    JSON.stringify({ type: "cloud", seq: 3, t_sim: 0.5, points: points.length,
                     pose: { xyz: [0, 0, 0], quat_wxyz: [1, 0, 0, 0] } }));
  let total = 4 + header.length + 20 + points.length * 20;
  const buf = new ArrayBuffer(total);
  const view = new DataView(buf);
  view.setUint32(0, header.length, true);
  new Uint8Array(buf, 4, header.length).set(header);
  const base = 4 + header.length;
  const magic = opts.magic ?? "MSPC";
  for (let i = 0; i < 4; i++) view.setUint8(base + i, magic.charCodeAt(i));
  view.setUint32(base + 4, 1, true); // version
  view.setUint32(base + 8, points.length, true);
  view.setFloat64(base + 12, 0.5, true);
  points.forEach((p, i) => {
    const off = base + 20 + i * 20;
    view.setFloat32(off, p[0], true);
    view.setFloat32(off + 4, p[1], true);
    view.setFloat32(off + 8, p[2], true);
    view.setFloat32(off + 12, p[3] ?? 0.5, true);
    view.setFloat32(off + 16, p[4] ?? 0.01, true);
  });
  return opts.truncate ? buf.slice(0, total - opts.truncate) : buf;
}

describe("binary cloud decoding", () => {
  test("round trips a hand-built frame", () => {
    const frame = decodeCloudMessage(buildCloudMessage([[1, 2, 3], [4, 5, 6]]));
    expect(frame.count).toBe(2);
    expect(frame.t0).toBeCloseTo(0.5, 12);
    expect(Array.from(frame.xyz)).toEqual([1, 2, 3, 4, 5, 6]);
    expect(frame.pose?.xyz).toEqual([0, 0, 0]);
    expect(frame.seq).toBe(3);
  });

  test("bad magic throws DecodeError", () => {
    expect(() => decodeCloudMessage(buildCloudMessage([[1, 2, 3]], { magic: "XXXX" })))
      .toThrow(DecodeError);
  });

  test("truncated payload throws DecodeError", () => {
    expect(() => decodeCloudMessage(buildCloudMessage([[1, 2, 3]], { truncate: 8 })))
      .toThrow(DecodeError);
  });

  test("short buffer throws DecodeError", () => {
    expect(() => decodeCloudMessage(new ArrayBuffer(2))).toThrow(DecodeError);
  });
});

describe("text envelopes", () => {
  test("decode requires a type", () => {
    expect(() => decodeText("{}")).toThrow(DecodeError);
    expect(() => decodeText("not json")).toThrow(DecodeError);
    expect(decodeText('{"type":"state","seq":1,"t_sim":0,"payload":{}}').type).toBe("state");
  });

  test("encodeCommand increments seq monotonically", () => {
    resetSeqForTest();
    const a = JSON.parse(encodeCommand("cmd_teleop", { key: "w" }));
    const b = JSON.parse(encodeCommand("cmd_run", { action: "pause" }));
    expect(a.seq).toBe(1);
    expect(b.seq).toBe(2);
    expect(a.type).toBe("cmd_teleop");
  });
});

describe("point transform", () => {
  test("identity pose is a translation", () => {
    const p = transformPoint({ xyz: [1, 2, 3], quat_wxyz: [1, 0, 0, 0] }, 0.5, 0, 0);
    expect(p).toEqual([1.5, 2, 3]);
  });

  test("90 degree yaw rotates x into y", () => {
    const s = Math.SQRT1_2;
    const p = transformPoint({ xyz: [0, 0, 0], quat_wxyz: [s, 0, 0, s] }, 1, 0, 0);
    expect(p[0]).toBeCloseTo(0, 12);
    expect(p[1]).toBeCloseTo(1, 12);
    expect(p[2]).toBeCloseTo(0, 12);
  });
});
