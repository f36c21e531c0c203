import type { PaletteEntry } from "./types.js";

/** Color for class indices the palette does not name. */
export const UNKNOWN_COLOR: [number, number, number] = [255, 0, 255];

export function colorOf(palette: PaletteEntry[], index: number): [number, number, number] {
  const entry = palette.find((p) => p.index === index);
  return entry ? entry.color : UNKNOWN_COLOR;
}

/**
 * Alpha-blend class colors over an RGB image. `classIndices` holds one
 * class index per pixel; opacity 0 returns the RGB unchanged, opacity 1
 * returns pure class colors. Returns RGBA bytes plus whether any pixel
 * carried a class index missing from the palette.
 */
export function compositeOverlay(
  rgb: Uint8ClampedArray, // RGBA from the scene image
  classIndices: Uint8Array,
  palette: PaletteEntry[],
  opacity: number,
): { out: Uint8ClampedArray; unknownSeen: boolean } {
  const n = classIndices.length;
  if (rgb.length !== 4 * n) {
    throw new Error(`image has ${rgb.length / 4} px but segmentation has ${n}`);
  }
  const lut = new Map<number, [number, number, number]>();
  for (const e of palette) {
    lut.set(e.index, e.color);
  }
  const out = new Uint8ClampedArray(rgb.length);
  let unknownSeen = false;
  for (let i = 0; i < n; i++) {
    let color = lut.get(classIndices[i]);
    if (!color) {
      color = UNKNOWN_COLOR;
      unknownSeen = true;
    }
    for (let c = 0; c < 3; c++) {
      out[4 * i + c] = (1 - opacity) * rgb[4 * i + c] + opacity * color[c];
    }
    out[4 * i + 3] = 255;
  }
  return { out, unknownSeen };
}

export function legendEntries(palette: PaletteEntry[]): { label: string; css: string }[] {
  return palette.map((p) => ({
    label: p.name,
    css: `rgb(${p.color[0]}, ${p.color[1]}, ${p.color[2]})`,
  }));
}
