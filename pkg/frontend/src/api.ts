import type {
  ImprintResponse,
  MetricsReport,
  Method,
  Point,
  SceneInfo,
  SegmentationResponse,
  StrokeResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }

  get isEmptyMask(): boolean {
    return this.code === "empty_mask";
  }
}

/** Thin typed client over the refinement service; no math client-side. */
export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      let code = `http_${res.status}`;
      let detail = res.statusText;
      try {
        const body = (await res.json()) as Record<string, string>;
        code = body.error ?? code;
        detail = body.guidance ?? body.detail ?? detail;
      } catch {
        // non-JSON error body; keep status text
      }
      throw new ApiError(res.status, code, detail);
    }
    return (await res.json()) as T;
  }

  async scenes(): Promise<SceneInfo[]> {
    const body = await this.request<{ scenes: SceneInfo[] }>("/api/scenes");
    return body.scenes;
  }

  sceneImageUrl(id: string): string {
    return `${this.baseUrl}/api/scene/${encodeURIComponent(id)}`;
  }

  segmentation(id: string): Promise<SegmentationResponse> {
    return this.request<SegmentationResponse>(`/api/segmentation/${encodeURIComponent(id)}`);
  }

  stroke(sceneId: string, points: Point[]): Promise<StrokeResponse> {
    return this.request<StrokeResponse>("/api/stroke", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ sceneId, points }),
    });
  }

  imprint(method: Method): Promise<ImprintResponse> {
    return this.request<ImprintResponse>("/api/imprint", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ method }),
    });
  }

  async reset(): Promise<void> {
    await this.request<Record<string, never>>("/api/reset", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: "{}",
    });
  }

  metrics(): Promise<MetricsReport> {
    return this.request<MetricsReport>("/api/metrics");
  }
}
