export interface SceneInfo {
  id: string;
  width: number;
  height: number;
}

export interface PaletteEntry {
  index: number;
  name: string;
  color: [number, number, number];
}

export interface SegmentationResponse {
  png: string; // base64 indexed PNG
  palette: PaletteEntry[];
}

export interface MetricsReport {
  class_names: string[];
  iou: (number | null)[];
  precision: (number | null)[];
  recall: (number | null)[];
  mean_iou: number;
}

export interface StrokeResponse {
  maskPreview: string; // base64 PNG
  pixelCount: number;
  skipped: { x: number; y: number; reason: string }[];
}

export interface ImprintResponse {
  before: MetricsReport;
  after: MetricsReport;
  elapsedMs: number;
}

export type Method = "map" | "rap";

export interface Point {
  x: number;
  y: number;
}
