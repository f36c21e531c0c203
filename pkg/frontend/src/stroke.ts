import { canvasToImage, inImageBounds, resamplePath, ViewTransform } from "./transform.js";
import type { Point } from "./types.js";

export interface StrokeCallbacks {
  onPoints(points: Point[]): void;
  onStrokeEnd(): void;
}

/**
 * Pointer capture on the canvas: drag paths are resampled to <= 4 px
 * spacing in image coordinates and clipped to the image bounds; stroke end
 * triggers the incremental send.
 */
export function attachStrokeCapture(
  canvas: HTMLCanvasElement,
  getTransform: () => ViewTransform,
  imageSize: () => { w: number; h: number },
  cb: StrokeCallbacks,
): () => void {
  let drawing = false;
  let last: Point | null = null;

  const toImage = (ev: PointerEvent): Point => {
    const rect = canvas.getBoundingClientRect();
    const canvasPoint = {
      x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
      y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
    };
    return canvasToImage(getTransform(), canvasPoint);
  };

  const emit = (from: Point | null, to: Point) => {
    const { w, h } = imageSize();
    const path = from ? resamplePath([from, to], 4) : [to];
    const inside = path.filter((p) => inImageBounds(p, w, h));
    if (inside.length) {
      cb.onPoints(inside);
    }
  };

  const down = (ev: PointerEvent) => {
    drawing = true;
    canvas.setPointerCapture(ev.pointerId);
    last = toImage(ev);
    emit(null, last);
  };
  const move = (ev: PointerEvent) => {
    if (!drawing) {
      return;
    }
    const p = toImage(ev);
    emit(last, p);
    last = p;
  };
  const up = (ev: PointerEvent) => {
    if (!drawing) {
      return;
    }
    drawing = false;
    last = null;
    canvas.releasePointerCapture(ev.pointerId);
    cb.onStrokeEnd();
  };

  canvas.addEventListener("pointerdown", down);
  canvas.addEventListener("pointermove", move);
  canvas.addEventListener("pointerup", up);
  canvas.addEventListener("pointercancel", up);
  return () => {
    canvas.removeEventListener("pointerdown", down);
    canvas.removeEventListener("pointermove", move);
    canvas.removeEventListener("pointerup", up);
    canvas.removeEventListener("pointercancel", up);
  };
}
