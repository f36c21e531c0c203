import { compositeOverlay } from "./palette.js";
import type { PaletteEntry } from "./types.js";

/** Decode a base64 PNG into an ImageBitmap. */
export async function decodeBase64Png(b64: string): Promise<ImageBitmap> {
  const bytes = Uint8Array.from(atob(b64), (c) => c.charCodeAt(0));
  return createImageBitmap(new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" }));
}

function drawToData(img: ImageBitmap | HTMLImageElement, w: number, h: number): Uint8ClampedArray {
  const scratch = document.createElement("canvas");
  scratch.width = w;
  scratch.height = h;
  const ctx = scratch.getContext("2d", { willReadFrequently: true })!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, w, h).data;
}

/**
 * Composite the class overlay onto the scene image at the given opacity and
 * draw it into the canvas, scaled to fit. The indexed segmentation PNG's
 * raw palette indices are recovered by matching its rendered colors against
 * the palette.
 */
export interface RenderResult {
  unknownSeen: boolean;
}

export function classIndicesFromRendered(
  rendered: Uint8ClampedArray,
  palette: PaletteEntry[],
  n: number,
): Uint8Array {
  // browsers expand palette PNGs to RGBA; invert that expansion
  const byColor = new Map<number, number>();
  for (const e of palette) {
    byColor.set((e.color[0] << 16) | (e.color[1] << 8) | e.color[2], e.index);
  }
  const out = new Uint8Array(n);
  for (let i = 0; i < n; i++) {
    const key = (rendered[4 * i] << 16) | (rendered[4 * i + 1] << 8) | rendered[4 * i + 2];
    out[i] = byColor.get(key) ?? 255; // 255 = unknown sentinel
  }
  return out;
}

export async function renderView(
  canvas: HTMLCanvasElement,
  scene: HTMLImageElement,
  segmentationPng: string,
  palette: PaletteEntry[],
  opacity: number,
  maskPreviewPng: string | null,
): Promise<RenderResult> {
  const w = scene.naturalWidth;
  const h = scene.naturalHeight;
  const seg = await decodeBase64Png(segmentationPng);
  if (seg.width !== w || seg.height !== h) {
    throw new Error(`segmentation ${seg.width}x${seg.height} does not match scene ${w}x${h}`);
  }
  const rgb = drawToData(scene, w, h);
  const segData = drawToData(seg, w, h);
  const classIdx = classIndicesFromRendered(segData, palette, w * h);
  const { out, unknownSeen } = compositeOverlay(rgb, classIdx, palette, opacity);

  if (maskPreviewPng) {
    const mask = await decodeBase64Png(maskPreviewPng);
    const maskData = drawToData(mask, w, h);
    for (let i = 0; i < w * h; i++) {
      if (maskData[4 * i] > 127) {
        // brighten interaction-mask pixels so the preview reads at a glance
        out[4 * i] = Math.min(255, out[4 * i] + 90);
        out[4 * i + 1] = Math.min(255, out[4 * i + 1] + 90);
        out[4 * i + 2] = 255;
      }
    }
  }

  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const scratch = document.createElement("canvas");
  scratch.width = w;
  scratch.height = h;
  const imgData = new ImageData(w, h);
  imgData.data.set(out);
  scratch.getContext("2d")!.putImageData(imgData, 0, 0);
  const scale = Math.min(canvas.width / w, canvas.height / h);
  ctx.drawImage(scratch, (canvas.width - w * scale) / 2, (canvas.height - h * scale) / 2,
                w * scale, h * scale);
  return { unknownSeen };
}
