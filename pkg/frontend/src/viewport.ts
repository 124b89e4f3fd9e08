// Top-down orthographic camera: world meters <-> canvas pixels, with pan
// and cursor-anchored zoom. World x is up-screen-right, y follows the
// right-handed convention (screen y grows downward, world y upward).

export class Viewport {
  centerX = 0; // world coords at the canvas center
  centerY = 0;
  scale = 40; // px per meter

  constructor(public width: number, public height: number) {}

  resize(width: number, height: number): void {
    this.width = width;
    this.height = height;
  }

  worldToScreen(x: number, y: number): [number, number] {
    return [
      this.width / 2 + (x - this.centerX) * this.scale,
      this.height / 2 - (y - this.centerY) * this.scale,
    ];
  }

  screenToWorld(px: number, py: number): [number, number] {
    return [
      this.centerX + (px - this.width / 2) / this.scale,
      this.centerY - (py - this.height / 2) / this.scale,
    ];
  }

  panPixels(dx: number, dy: number): void {
    this.centerX -= dx / this.scale;
    this.centerY += dy / this.scale;
  }

  // zoom by `factor` keeping the world point under (px, py) fixed
  zoomAt(px: number, py: number, factor: number): void {
    const [wx, wy] = this.screenToWorld(px, py);
    this.scale = Math.min(2000, Math.max(2, this.scale * factor));
    const [nx, ny] = this.screenToWorld(px, py);
    this.centerX += wx - nx;
    this.centerY += wy - ny;
  }
}
