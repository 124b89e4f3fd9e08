// Keyboard teleop: maps arrows/WASD/space to server key codes and rate
// limits each key to one command per 50 ms so holding a key doesn't flood
// the socket.

const KEY_CODES: Record<string, string> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
  w: "w",
  a: "a",
  s: "s",
  d: "d",
  " ": "space",
  x: "x",
};

export const TELEOP_MIN_INTERVAL_MS = 50;

export class TeleopInput {
  enabled = true;
  private lastSent: Record<string, number> = {};

  constructor(private send: (key: string) => void,
              private now: () => number = () => performance.now()) {}

  // returns the mapped key code when a command was emitted, else null
  handleKey(browserKey: string): string | null {
    if (!this.enabled) return null;
    const code = KEY_CODES[browserKey];
    if (code === undefined) return null;
    const t = this.now();
    const last = this.lastSent[code];
    if (last !== undefined && t - last < TELEOP_MIN_INTERVAL_MS) return null;
    this.lastSent[code] = t;
    this.send(code);
    return code;
  }
}
