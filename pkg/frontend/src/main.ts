// Browser wiring: socket, keyboard, mouse, HUD, and the render loop.

import { encodeCommand } from "./protocol.js";
import { drawFrame } from "./render.js";
import { UiSessionState } from "./session.js";
import { TeleopInput } from "./teleop.js";
import { Viewport } from "./viewport.js";

const params = new URLSearchParams(window.location.search);
const wsUrl = params.get("ws") ?? "ws://127.0.0.1:8765";
const role = params.get("role") ?? "controller";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hud = document.getElementById("hud")!;
const banner = document.getElementById("banner")!;
const toast = document.getElementById("toast")!;
const sendBtn = document.getElementById("send-waypoints") as HTMLButtonElement;
const clearBtn = document.getElementById("clear-waypoints") as HTMLButtonElement;

const session = new UiSessionState();
const viewport = new Viewport(canvas.width, canvas.height);
viewport.centerX = 2;

let sock = new WebSocket(wsUrl);
sock.binaryType = "arraybuffer";

const teleop = new TeleopInput((key) => {
  if (sock.readyState === WebSocket.OPEN) {
    sock.send(encodeCommand("cmd_teleop", { key }));
  }
});

function showToast(text: string): void {
  toast.textContent = text;
  toast.style.display = "block";
  setTimeout(() => (toast.style.display = "none"), 4000);
}

sock.onopen = () => {
  sock.send(encodeCommand("hello", { role }));
};

sock.onmessage = (ev: MessageEvent) => {
  if (typeof ev.data === "string") {
    const msg = session.handleText(ev.data);
    if (msg?.type === "error") {
      showToast(`${msg.payload.code}: ${msg.payload.message}`);
    }
  } else {
    session.handleBinary(ev.data as ArrayBuffer);
  }
};

sock.onclose = () => {
  session.connection = "closed";
  teleop.enabled = false;
  banner.style.display = "block";
};

sock.onerror = () => {
  session.connection = "closed";
  teleop.enabled = false;
  banner.style.display = "block";
};

// keyboard teleop (ignore keys while typing into inputs)
window.addEventListener("keydown", (ev) => {
  if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
  if (teleop.handleKey(ev.key) !== null) ev.preventDefault();
});

// mouse: left drag pans, wheel zooms, click places a waypoint
let dragging = false;
let moved = false;
let lastX = 0;
let lastY = 0;

canvas.addEventListener("mousedown", (ev) => {
  dragging = true;
  moved = false;
  lastX = ev.offsetX;
  lastY = ev.offsetY;
});

canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  const dx = ev.offsetX - lastX;
  const dy = ev.offsetY - lastY;
  if (Math.abs(dx) + Math.abs(dy) > 2) moved = true;
  if (moved) {
    viewport.panPixels(dx, dy);
    lastX = ev.offsetX;
    lastY = ev.offsetY;
  }
});

canvas.addEventListener("mouseup", (ev) => {
  dragging = false;
  if (!moved && session.role === "controller") {
    const [wx, wy] = viewport.screenToWorld(ev.offsetX, ev.offsetY);
    session.addWaypoint(wx, wy);
    sendBtn.disabled = !session.canSendWaypoints;
  }
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  viewport.zoomAt(ev.offsetX, ev.offsetY, ev.deltaY < 0 ? 1.15 : 1 / 1.15);
});

sendBtn.addEventListener("click", () => {
  if (!session.canSendWaypoints) return;
  sock.send(encodeCommand("cmd_waypoints", { points: session.pendingWaypoints }));
  session.clearWaypoints();
  sendBtn.disabled = true;
});

clearBtn.addEventListener("click", () => {
  session.clearWaypoints(); // local only, no message
  sendBtn.disabled = true;
});

for (const action of ["start", "pause", "reset", "record"]) {
  document.getElementById(`run-${action}`)?.addEventListener("click", () => {
    sock.send(encodeCommand("cmd_run", { action }));
  });
}

function resize(): void {
  canvas.width = window.innerWidth;
  canvas.height = window.innerHeight - 48;
  viewport.resize(canvas.width, canvas.height);
}
window.addEventListener("resize", resize);
resize();

function renderLoop(): void {
  drawFrame(ctx, session, viewport);
  const st = session.state;
  hud.textContent = st
    ? `t ${st.t.toFixed(1)}s  v ${st.v.toFixed(2)} m/s  w ${st.w.toFixed(2)} rad/s` +
      `  pts ${session.cloud.size}  frames ${session.cloudFrames}` +
      `  dropped ${session.droppedFrames}` +
      (st.paused ? "  [paused]" : "") + (st.recording ? "  [rec]" : "") +
      (st.tracker ? (st.tracker.finished ? "  tracker done" : "  tracking") : "")
    : "waiting for state...";
  requestAnimationFrame(renderLoop);
}
requestAnimationFrame(renderLoop);
