import type { Point } from "./types.js";

/**
 * Mapping between canvas (CSS pixel) coordinates and image pixel
 * coordinates when the image is drawn scaled into the canvas.
 */
export interface ViewTransform {
  scaleX: number;
  scaleY: number;
  offsetX: number;
  offsetY: number;
}

export function makeTransform(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): ViewTransform {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scaleX: scale,
    scaleY: scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function canvasToImage(t: ViewTransform, p: Point): Point {
  return { x: (p.x - t.offsetX) / t.scaleX, y: (p.y - t.offsetY) / t.scaleY };
}

export function imageToCanvas(t: ViewTransform, p: Point): Point {
  return { x: p.x * t.scaleX + t.offsetX, y: p.y * t.scaleY + t.offsetY };
}

export function inImageBounds(p: Point, w: number, h: number): boolean {
  return p.x >= 0 && p.y >= 0 && p.x < w && p.y < h;
}

/**
 * Resample a drag path so consecutive points are at most `maxSpacing`
 * apart (image pixels). Keeps every original point; a click without a drag
 * stays a single point.
 */
export function resamplePath(points: Point[], maxSpacing = 4): Point[] {
  if (points.length <= 1) {
    return points.slice();
  }
  const out: Point[] = [points[0]];
  for (let i = 1; i < points.length; i++) {
    const a = points[i - 1];
    const b = points[i];
    const dist = Math.hypot(b.x - a.x, b.y - a.y);
    const steps = Math.ceil(dist / maxSpacing);
    for (let s = 1; s <= steps; s++) {
      out.push({ x: a.x + ((b.x - a.x) * s) / steps, y: a.y + ((b.y - a.y) * s) / steps });
    }
  }
  return out;
}

/** Largest gap between consecutive points, for tests and sanity checks. */
export function maxGap(points: Point[]): number {
  let worst = 0;
  for (let i = 1; i < points.length; i++) {
    worst = Math.max(worst, Math.hypot(points[i].x - points[i - 1].x, points[i].y - points[i - 1].y));
  }
  return worst;
}
