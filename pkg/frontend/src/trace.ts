/** Bounded rolling buffer for the live force trace and its sparkline path. */

export class RingBuffer {
  private buf: number[] = [];
  constructor(readonly capacity: number) {}

  push(v: number): void {
    this.buf.push(v);
    if (this.buf.length > this.capacity) this.buf.shift();
  }

  values(): number[] {
    return this.buf.slice();
  }

  get length(): number {
    return this.buf.length;
  }

  max(): number {
    return this.buf.length ? Math.max(...this.buf) : 0;
  }
}

/**
 * Polyline points for a sparkline of the buffer in a w x h box.
 * The vertical scale pins zero to the bottom and the running max near the
 * top so force spikes are immediately visible.
 */
export function sparklinePoints(values: number[], w: number, h: number):
    Array<[number, number]> {
  if (values.length < 2) return [];
  const vmax = Math.max(...values, 1e-9);
  const pts: Array<[number, number]> = [];
  for (let i = 0; i < values.length; i++) {
    const x = (i / (values.length - 1)) * w;
    const y = h - (values[i] / vmax) * (h - 2) - 1;
    pts.push([x, y]);
  }
  return pts;
}
