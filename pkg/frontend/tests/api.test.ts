import { describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";

function fetchStub(status: number, body: unknown) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fn = (async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return {
      ok: status >= 200 && status < 300,
      status,
      statusText: `status ${status}`,
      json: async () => body,
    } as Response;
  }) as unknown as typeof fetch;
  return { fn, calls };
}

describe("ApiClient", () => {
  it("posts stroke points as the documented JSON shape", async () => {
    const { fn, calls } = fetchStub(200, { maskPreview: "", pixelCount: 0, skipped: [] });
    const api = new ApiClient("http://h:1", fn);
    await api.stroke("scene_000", [{ x: 1, y: 2 }]);
    expect(calls[0].url).toBe("http://h:1/api/stroke");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      sceneId: "scene_000",
      points: [{ x: 1, y: 2 }],
    });
  });

  it("decodes structured empty-mask errors", async () => {
    const { fn } = fetchStub(409, { error: "empty_mask", guidance: "stroke plants" });
    const api = new ApiClient("", fn);
    const err = await api.imprint("rap").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.isEmptyMask).toBe(true);
    expect(err.detail).toBe("stroke plants");
  });

  it("decodes invalid-input errors", async () => {
    const { fn } = fetchStub(400, { error: "unknown_method", detail: "median" });
    const api = new ApiClient("", fn);
    const err = await api.imprint("rap").catch((e) => e);
    expect(err.code).toBe("unknown_method");
    expect(err.isEmptyMask).toBe(false);
  });

  it("unwraps the scene list", async () => {
    const { fn } = fetchStub(200, { scenes: [{ id: "a", width: 4, height: 4 }] });
    const api = new ApiClient("", fn);
    expect(await api.scenes()).toEqual([{ id: "a", width: 4, height: 4 }]);
  });

  it("builds scene image urls", () => {
    const api = new ApiClient("http://h:9");
    expect(api.sceneImageUrl("scene 1")).toBe("http://h:9/api/scene/scene%201");
  });
});
