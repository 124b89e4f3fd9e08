// Fixed-capacity ring of world-frame cloud points (x, y, z per slot).
// Old points are overwritten in arrival order once the cap is reached, so
// the buffer never exceeds its capacity no matter how long a session runs.

export class CloudRingBuffer {
  readonly capacity: number;
  private data: Float32Array;
  private next = 0;
  private filled = 0;

  constructor(capacity = 200_000) {
    this.capacity = capacity;
    this.data = new Float32Array(capacity * 3);
  }

  get size(): number {
    return this.filled;
  }

  push(x: number, y: number, z: number): void {
    const i = this.next * 3;
    this.data[i] = x;
    this.data[i + 1] = y;
    this.data[i + 2] = z;
    this.next = (this.next + 1) % this.capacity;
    if (this.filled < this.capacity) this.filled += 1;
  }

  clear(): void {
    this.next = 0;
    this.filled = 0;
  }

  // visit every stored point; order is not meaningful for rendering
  forEach(fn: (x: number, y: number, z: number) => void): void {
    for (let i = 0; i < this.filled; i++) {
      const j = i * 3;
      fn(this.data[j], this.data[j + 1], this.data[j + 2]);
    }
  }
}
