// Wire protocol: JSON text envelopes plus binary cloud frames laid out as
// u32 header_len | JSON envelope | MSPC blob (magic, u32 version, u32 count,
// f64 t0, then f32 x,y,z,intensity,dt per point).

export interface Envelope {
  type: string;
  seq: number;
  t_sim: number;
  payload?: any;
}

export interface StatePayload {
  t: number;
  x: number;
  y: number;
  theta: number;
  v: number;
  w: number;
  paused: boolean;
  recording: boolean;
  tracker: { target_index: number; finished: boolean } | null;
}

export interface SceneObjectSummary {
  id: string;
  kind: string;
  mover: boolean;
  xy: [number, number];
  yaw: number;
  half_extents?: [number, number];
  radius?: number;
}

export interface SceneSummary {
  name: string;
  objects: SceneObjectSummary[];
}

export interface Pose {
  xyz: [number, number, number];
  quat_wxyz: [number, number, number, number];
}

export interface CloudFrame {
  seq: number;
  t0: number;
  pose: Pose | null;
  count: number;
  // packed x,y,z triplets in the sensor frame
  xyz: Float32Array;
  intensity: Float32Array;
}

export class DecodeError extends Error {}

const MAGIC = 0x4350534d; // "MSPC" little-endian

export function decodeText(raw: string): Envelope {
  let msg: any;
  try {
    msg = JSON.parse(raw);
  } catch (e) {
    throw new DecodeError(`bad JSON: ${e}`);
  }
  if (typeof msg.type !== "string") throw new DecodeError("envelope missing type");
  return msg as Envelope;
}

export function decodeCloudMessage(buf: ArrayBuffer): CloudFrame {
  const view = new DataView(buf);
  if (buf.byteLength < 4) throw new DecodeError("short binary message");
  const headerLen = view.getUint32(0, true);
  if (4 + headerLen > buf.byteLength) throw new DecodeError("header overruns message");
  const headerText = new TextDecoder().decode(new Uint8Array(buf, 4, headerLen));
  let header: any;
  try {
    header = JSON.parse(headerText);
  } catch (e) {
    throw new DecodeError(`bad envelope JSON: ${e}`);
  }
  if (header.type !== "cloud") throw new DecodeError(`expected cloud, got ${header.type}`);

  const base = 4 + headerLen;
  if (buf.byteLength < base + 20) throw new DecodeError("truncated cloud header");
  if (view.getUint32(base, true) !== MAGIC) throw new DecodeError("bad cloud magic");
  const count = view.getUint32(base + 8, true);
  const t0 = view.getFloat64(base + 12, true);
  const need = base + 20 + count * 20;
  if (buf.byteLength < need) throw new DecodeError(`truncated payload (${buf.byteLength} < ${need})`);

  const xyz = new Float32Array(count * 3);
  const intensity = new Float32Array(count);
  let off = base + 20;
  for (let i = 0; i < count; i++) {
    xyz[i * 3] = view.getFloat32(off, true);
    xyz[i * 3 + 1] = view.getFloat32(off + 4, true);
    xyz[i * 3 + 2] = view.getFloat32(off + 8, true);
    intensity[i] = view.getFloat32(off + 12, true);
    off += 20;
  }
  return {
    seq: header.seq ?? 0,
    t0,
    pose: header.pose ?? null,
    count,
    xyz,
    intensity,
  };
}

let outSeq = 0;

export function encodeCommand(type: string, payload: any): string {
  outSeq += 1;
  return JSON.stringify({ type, seq: outSeq, payload });
}

export function resetSeqForTest(): void {
  outSeq = 0;
}

// rotate a sensor-frame point into the world with the frame's pose
export function transformPoint(pose: Pose, x: number, y: number, z: number): [number, number, number] {
  const [w, qx, qy, qz] = pose.quat_wxyz;
  // v + 2w(q x v) + 2 q x (q x v)
  const tx = 2 * (qy * z - qz * y);
  const ty = 2 * (qz * x - qx * z);
  const tz = 2 * (qx * y - qy * x);
  return [
    pose.xyz[0] + x + w * tx + (qy * tz - qz * ty),
    pose.xyz[1] + y + w * ty + (qz * tx - qx * tz),
    pose.xyz[2] + z + w * tz + (qx * ty - qy * tx),
  ];
}
