import { ApiClient, ApiError } from "./api.js";
import type { MetricsReport, Method, Point } from "./types.js";

export interface Banner {
  kind: "info" | "guidance" | "error";
  text: string;
}

/**
 * Console view state plus the actions that drive it. All server effects go
 * through the injected ApiClient; rendering subscribes to `onChange`.
 * At most one mutating request is in flight at a time.
 */
export class ConsoleState {
  sceneId: string | null = null;
  opacity = 0.5;
  method: Method = "rap";
  strokeBuffer: Point[] = [];
  strokesSent = 0;
  maskPreview: string | null = null;
  maskPixelCount = 0;
  before: MetricsReport | null = null;
  after: MetricsReport | null = null;
  banner: Banner | null = null;
  mutationPending = false;
  segmentationVersion = 0; // bump => overlay refetch

  private listeners: (() => void)[] = [];

  constructor(private readonly api: ApiClient) {}

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) {
      fn();
    }
  }

  get canMutate(): boolean {
    return !this.mutationPending;
  }

  selectScene(id: string): void {
    this.sceneId = id;
    this.strokeBuffer = [];
    this.maskPreview = null;
    this.maskPixelCount = 0;
    this.banner = null;
    this.emit();
  }

  bufferStroke(points: Point[]): void {
    this.strokeBuffer.push(...points);
    this.emit();
  }

  /** Send the buffered stroke (called on stroke end: incremental feedback). */
  async commitStroke(): Promise<void> {
    if (!this.sceneId || this.strokeBuffer.length === 0 || this.mutationPending) {
      return;
    }
    const points = this.strokeBuffer.splice(0);
    this.mutationPending = true;
    this.emit();
    try {
      const res = await this.api.stroke(this.sceneId, points);
      this.strokesSent += points.length;
      this.maskPreview = res.maskPreview;
      this.maskPixelCount = res.pixelCount;
      if (res.skipped.length > 0) {
        this.banner = { kind: "info", text: `${res.skipped.length} point(s) had no depth and were skipped` };
      }
    } catch (err) {
      // keep the points so the user can retry
      this.strokeBuffer.unshift(...points);
      this.banner = { kind: "error", text: describe(err) };
    } finally {
      this.mutationPending = false;
      this.emit();
    }
  }

  /** POST /api/imprint and update the before/after panel. */
  async refineCycle(): Promise<void> {
    if (this.mutationPending) {
      return;
    }
    this.mutationPending = true;
    this.banner = null;
    this.emit();
    try {
      const res = await this.api.imprint(this.method);
      this.before = res.before;
      this.after = res.after;
      this.segmentationVersion += 1; // overlay changed on the server
      this.banner = { kind: "info", text: `imprinted (${this.method}) in ${res.elapsedMs.toFixed(0)} ms` };
    } catch (err) {
      if (err instanceof ApiError && err.isEmptyMask) {
        // strokes are preserved server-side and in the preview; just guide
        this.banner = { kind: "guidance", text: err.detail };
      } else {
        this.banner = { kind: "error", text: describe(err) };
      }
    } finally {
      this.mutationPending = false;
      this.emit();
    }
  }

  async resetModel(): Promise<void> {
    if (this.mutationPending) {
      return;
    }
    this.mutationPending = true;
    this.emit();
    try {
      await this.api.reset();
      this.before = null;
      this.after = null;
      this.maskPreview = null;
      this.maskPixelCount = 0;
      this.strokeBuffer = [];
      this.strokesSent = 0;
      this.segmentationVersion += 1;
      this.banner = { kind: "info", text: "model reset to the pristine checkpoint" };
    } catch (err) {
      this.banner = { kind: "error", text: describe(err) };
    } finally {
      this.mutationPending = false;
      this.emit();
    }
  }
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
