// Canvas drawing for the live view. Pure functions of (ctx, session,
// viewport); called from the requestAnimationFrame loop, never from the
// message handler.

import { UiSessionState } from "./session.js";
import { Viewport } from "./viewport.js";

// height-mapped point colors, dark blue floor to warm high points
function heightColor(z: number): string {
  const t = Math.max(0, Math.min(1, z / 3.0));
  const r = Math.round(40 + 215 * t);
  const g = Math.round(70 + 120 * t);
  const b = Math.round(160 - 120 * t);
  return `rgb(${r},${g},${b})`;
}

// pixel-buffer path: plotting a full 200k-point ring through fillRect calls
// would dominate the frame budget; writing raw RGBA keeps 20+ fps
let pixelBuf: ImageData | null = null;

function drawCloudPixels(ctx: CanvasRenderingContext2D, sRef: UiSessionState, vp: Viewport): void {
  if (!pixelBuf || pixelBuf.width !== vp.width || pixelBuf.height !== vp.height) {
    pixelBuf = ctx.createImageData(Math.max(1, vp.width), Math.max(1, vp.height));
  }
  // putImageData replaces the whole canvas, so carry the background color
  new Uint32Array(pixelBuf.data.buffer).fill(0xff181410); // abgr of #101418
  const px = pixelBuf.data;
  const w = vp.width;
  const h = vp.height;
  sRef.cloud.forEach((x, y, z) => {
    const sx = (w / 2 + (x - vp.centerX) * vp.scale) | 0;
    const sy = (h / 2 - (y - vp.centerY) * vp.scale) | 0;
    if (sx < 0 || sy < 0 || sx >= w || sy >= h) return;
    const t = z < 0 ? 0 : z > 3 ? 1 : z / 3;
    const i = (sy * w + sx) * 4;
    px[i] = 40 + 215 * t;
    px[i + 1] = 70 + 120 * t;
    px[i + 2] = 160 - 120 * t;
    px[i + 3] = 255;
  });
}

export function drawScene(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  if (!s.scene) return;
  ctx.save();
  for (const ob of s.scene.objects) {
    ctx.strokeStyle = ob.mover ? "#d08030" : "#8090a0";
    ctx.lineWidth = 1;
    const [sx, sy] = vp.worldToScreen(ob.xy[0], ob.xy[1]);
    if (ob.radius !== undefined) {
      ctx.beginPath();
      ctx.arc(sx, sy, ob.radius * vp.scale, 0, 2 * Math.PI);
      ctx.stroke();
    } else if (ob.half_extents) {
      const [hx, hy] = ob.half_extents;
      ctx.save();
      ctx.translate(sx, sy);
      ctx.rotate(-ob.yaw);
      ctx.strokeRect(-hx * vp.scale, -hy * vp.scale, 2 * hx * vp.scale, 2 * hy * vp.scale);
      ctx.restore();
    }
    // planes have no footprint outline
  }
  ctx.restore();
}

export function drawCloud(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  if (s.cloud.size > 5000) {
    drawCloudPixels(ctx, s, vp);
    ctx.putImageData(pixelBuf!, 0, 0);
    return;
  }
  s.cloud.forEach((x, y, z) => {
    const sx = vp.width / 2 + (x - vp.centerX) * vp.scale;
    const sy = vp.height / 2 - (y - vp.centerY) * vp.scale;
    if (sx < -2 || sy < -2 || sx > vp.width + 2 || sy > vp.height + 2) return;
    ctx.fillStyle = heightColor(z);
    ctx.fillRect(sx, sy, 1.5, 1.5);
  });
}

export function drawPath(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  if (!s.path || s.path.length === 0) return;
  ctx.strokeStyle = "#e04040";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  const step = Math.max(1, Math.floor(s.path.length / 1000)); // polyline decimation
  for (let i = 0; i < s.path.length; i += step) {
    const [sx, sy] = vp.worldToScreen(s.path[i][0], s.path[i][1]);
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  }
  const last = s.path[s.path.length - 1];
  ctx.lineTo(...vp.worldToScreen(last[0], last[1]));
  ctx.stroke();
}

export function drawTrace(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  if (s.trace.length < 2) return;
  ctx.strokeStyle = "#30a050";
  ctx.lineWidth = 1;
  ctx.beginPath();
  s.trace.forEach(([x, y], i) => {
    const [sx, sy] = vp.worldToScreen(x, y);
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  });
  ctx.stroke();
}

export function drawRobot(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  if (!s.state) return;
  const { x, y, theta } = s.state;
  const [sx, sy] = vp.worldToScreen(x, y);
  ctx.save();
  ctx.translate(sx, sy);
  ctx.rotate(-theta);
  const r = Math.max(6, 0.2 * vp.scale);
  ctx.fillStyle = "#2060d0";
  ctx.beginPath();
  ctx.moveTo(r, 0);
  ctx.lineTo(-0.6 * r, 0.5 * r);
  ctx.lineTo(-0.6 * r, -0.5 * r);
  ctx.closePath();
  ctx.fill();
  ctx.restore();
}

export function drawWaypoints(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  s.pendingWaypoints.forEach(([x, y], i) => {
    const [sx, sy] = vp.worldToScreen(x, y);
    const isLast = i === s.pendingWaypoints.length - 1;
    ctx.fillStyle = isLast ? "#f0c020" : "#e04040"; // endpoint highlighted
    ctx.beginPath();
    ctx.arc(sx, sy, isLast ? 6 : 4, 0, 2 * Math.PI);
    ctx.fill();
  });
}

export function drawFrame(ctx: CanvasRenderingContext2D, s: UiSessionState, vp: Viewport): void {
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, vp.width, vp.height);
  drawCloud(ctx, s, vp);
  drawScene(ctx, s, vp);
  drawPath(ctx, s, vp);
  drawTrace(ctx, s, vp);
  drawWaypoints(ctx, s, vp);
  drawRobot(ctx, s, vp);
}
