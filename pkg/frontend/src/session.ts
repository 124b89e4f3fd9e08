// Client-side session state: everything the renderer reads lives here, and
// message handling never touches the DOM, so decoding can't block drawing.

import { CloudRingBuffer } from "./cloudbuffer.js";
import {
  CloudFrame,
  DecodeError,
  Envelope,
  SceneSummary,
  StatePayload,
  decodeCloudMessage,
  decodeText,
  transformPoint,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "closed";

const TRACE_PERIOD_S = 1.0; // trajectory trace decimation

export class UiSessionState {
  connection: ConnectionStatus = "connecting";
  role: string | null = null;
  state: StatePayload | null = null;
  scene: SceneSummary | null = null;
  path: number[][] | null = null;
  pendingWaypoints: [number, number][] = [];
  cloud = new CloudRingBuffer(200_000);
  trace: [number, number][] = [];
  droppedFrames = 0;
  lastError: { code: string; message: string } | null = null;
  cloudFrames = 0;
  lastCloudCount = 0;

  private lastTraceT = -Infinity;

  handleText(raw: string): Envelope | null {
    let msg: Envelope;
    try {
      msg = decodeText(raw);
    } catch {
      this.droppedFrames += 1;
      return null;
    }
    switch (msg.type) {
      case "hello":
        this.role = msg.payload?.role ?? null;
        this.connection = "connected";
        break;
      case "state":
        this.state = msg.payload as StatePayload;
        if (this.state.t - this.lastTraceT >= TRACE_PERIOD_S) {
          this.trace.push([this.state.x, this.state.y]);
          this.lastTraceT = this.state.t;
        }
        break;
      case "scene_summary":
        this.scene = msg.payload as SceneSummary;
        break;
      case "path":
        this.path = msg.payload?.samples ?? null;
        break;
      case "error":
        this.lastError = msg.payload;
        break;
      default:
        break; // unknown telemetry types are ignored, never fatal
    }
    return msg;
  }

  handleBinary(buf: ArrayBuffer): CloudFrame | null {
    let frame: CloudFrame;
    try {
      frame = decodeCloudMessage(buf);
    } catch (e) {
      if (e instanceof DecodeError) {
        this.droppedFrames += 1; // malformed frame: drop, stay connected
        return null;
      }
      throw e;
    }
    this.cloudFrames += 1;
    this.lastCloudCount = frame.count;
    if (frame.pose) {
      for (let i = 0; i < frame.count; i++) {
        const [wx, wy, wz] = transformPoint(
          frame.pose, frame.xyz[i * 3], frame.xyz[i * 3 + 1], frame.xyz[i * 3 + 2]);
        this.cloud.push(wx, wy, wz);
      }
    } else {
      for (let i = 0; i < frame.count; i++) {
        this.cloud.push(frame.xyz[i * 3], frame.xyz[i * 3 + 1], frame.xyz[i * 3 + 2]);
      }
    }
    return frame;
  }

  addWaypoint(x: number, y: number): void {
    this.pendingWaypoints.push([x, y]);
  }

  clearWaypoints(): void {
    this.pendingWaypoints = [];
  }

  get canSendWaypoints(): boolean {
    return this.pendingWaypoints.length >= 2;
  }

  resetView(): void {
    this.cloud.clear();
    this.trace = [];
    this.lastTraceT = -Infinity;
  }
}
