export interface Point {
  x: number;
  y: number;
}

export interface Stroke {
  points: Point[];
  width: number;
}

/** Drawing state for one sketch: an ordered list of polyline strokes on a
 *  square canvas. Coordinates are in canvas pixels. */
export class CanvasSession {
  strokes: Stroke[] = [];
  brushWidth = 6;
  private active: Stroke | null = null;

  constructor(readonly canvasSize: number) {}

  beginStroke(p: Point): void {
    this.active = { points: [p], width: this.brushWidth };
    this.strokes.push(this.active);
  }

  extendStroke(p: Point): void {
    if (!this.active) return;
    const last = this.active.points[this.active.points.length - 1];
    // drop sub-pixel jitter so exports stay compact and deterministic
    if (Math.hypot(p.x - last.x, p.y - last.y) >= 1.0) {
      this.active.points.push(p);
    }
  }

  endStroke(): void {
    this.active = null;
  }

  clear(): void {
    this.strokes = [];
    this.active = null;
  }

  hasContent(): boolean {
    return this.strokes.some((s) => s.points.length > 0);
  }
}
