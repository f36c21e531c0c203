import { ApiClient } from "./api.js";
import { ConsoleState } from "./state.js";
import { attachStrokeCapture } from "./stroke.js";
import { makeTransform } from "./transform.js";
import { legendEntries } from "./palette.js";
import { renderView } from "./view.js";
import type { MetricsReport, Method, SegmentationResponse } from "./types.js";

const api = new ApiClient("");
const state = new ConsoleState(api);

const el = {
  canvas: document.getElementById("view") as HTMLCanvasElement,
  sceneSelect: document.getElementById("scene") as HTMLSelectElement,
  opacity: document.getElementById("opacity") as HTMLInputElement,
  method: document.getElementById("method") as HTMLSelectElement,
  imprint: document.getElementById("imprint") as HTMLButtonElement,
  reset: document.getElementById("reset") as HTMLButtonElement,
  banner: document.getElementById("banner") as HTMLDivElement,
  legend: document.getElementById("legend") as HTMLDivElement,
  metrics: document.getElementById("metrics") as HTMLDivElement,
  maskInfo: document.getElementById("mask-info") as HTMLSpanElement,
};

let sceneImage: HTMLImageElement | null = null;
let segmentation: SegmentationResponse | null = null;

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

async function refreshScene(): Promise<void> {
  if (!state.sceneId) {
    return;
  }
  sceneImage = await loadImage(api.sceneImageUrl(state.sceneId));
  segmentation = await api.segmentation(state.sceneId);
  renderLegend();
  await redraw();
}

async function refreshSegmentation(): Promise<void> {
  if (!state.sceneId) {
    return;
  }
  segmentation = await api.segmentation(state.sceneId);
  renderLegend();
  await redraw();
}

async function redraw(): Promise<void> {
  if (!sceneImage || !segmentation) {
    return;
  }
  try {
    const res = await renderView(el.canvas, sceneImage, segmentation.png,
                                 segmentation.palette, state.opacity, state.maskPreview);
    if (res.unknownSeen) {
      showBanner("error", "segmentation contains a class index missing from the palette");
    }
  } catch (err) {
    showBanner("error", err instanceof Error ? err.message : String(err));
  }
}

function showBanner(kind: string, text: string): void {
  el.banner.className = `banner ${kind}`;
  el.banner.textContent = text;
  el.banner.style.display = "block";
}

function renderLegend(): void {
  if (!segmentation) {
    return;
  }
  el.legend.innerHTML = "";
  for (const entry of legendEntries(segmentation.palette)) {
    const chip = document.createElement("span");
    chip.className = "chip";
    const swatch = document.createElement("i");
    swatch.style.background = entry.css;
    chip.append(swatch, entry.label);
    el.legend.append(chip);
  }
}

function fmt(v: number | null): string {
  return v === null ? "n/a" : (100 * v).toFixed(2);
}

function metricsTable(before: MetricsReport, after: MetricsReport): string {
  const rows = before.class_names
    .map((name, j) => `
      <tr><td>${name}</td>
        <td>${fmt(before.iou[j])}</td><td>${fmt(after.iou[j])}</td>
        <td>${fmt(before.recall[j])}</td><td>${fmt(after.recall[j])}</td>
        <td>${fmt(before.precision[j])}</td><td>${fmt(after.precision[j])}</td></tr>`)
    .join("");
  return `<table>
    <thead><tr><th></th><th colspan="2">IoU</th><th colspan="2">Recall</th><th colspan="2">Precision</th></tr>
    <tr><th>class</th><th>before</th><th>after</th><th>before</th><th>after</th><th>before</th><th>after</th></tr></thead>
    <tbody>${rows}
    <tr><td>mean IoU</td><td>${fmt(before.mean_iou)}</td><td>${fmt(after.mean_iou)}</td><td colspan="4"></td></tr>
    </tbody></table>`;
}

function render(): void {
  el.imprint.disabled = !state.canMutate;
  el.reset.disabled = !state.canMutate;
  el.maskInfo.textContent = state.maskPixelCount > 0
    ? `interaction mask: ${state.maskPixelCount} px`
    : "no interaction mask yet";
  if (state.banner) {
    showBanner(state.banner.kind, state.banner.text);
  } else {
    el.banner.style.display = "none";
  }
  if (state.before && state.after) {
    el.metrics.innerHTML = metricsTable(state.before, state.after);
  } else {
    el.metrics.innerHTML = "<p>imprint to compare metrics against the pristine checkpoint</p>";
  }
}

let lastSegVersion = 0;

async function main(): Promise<void> {
  const scenes = await api.scenes();
  for (const s of scenes) {
    const opt = document.createElement("option");
    opt.value = s.id;
    opt.textContent = s.id;
    el.sceneSelect.append(opt);
  }

  state.onChange(() => {
    render();
    if (state.segmentationVersion !== lastSegVersion) {
      lastSegVersion = state.segmentationVersion;
      void refreshSegmentation();
    } else {
      void redraw();
    }
  });

  el.sceneSelect.addEventListener("change", () => {
    state.selectScene(el.sceneSelect.value);
    void refreshScene();
  });
  el.opacity.addEventListener("input", () => {
    state.opacity = Number(el.opacity.value) / 100;
    void redraw();
  });
  el.method.addEventListener("change", () => {
    state.method = el.method.value as Method;
  });
  el.imprint.addEventListener("click", () => void state.refineCycle());
  el.reset.addEventListener("click", () => void state.resetModel());

  attachStrokeCapture(
    el.canvas,
    () => makeTransform(sceneImage?.naturalWidth ?? 1, sceneImage?.naturalHeight ?? 1,
                        el.canvas.width, el.canvas.height),
    () => ({ w: sceneImage?.naturalWidth ?? 0, h: sceneImage?.naturalHeight ?? 0 }),
    {
      onPoints: (pts) => state.bufferStroke(pts),
      onStrokeEnd: () => void state.commitStroke(),
    },
  );

  if (scenes.length) {
    state.selectScene(scenes[0].id);
    el.sceneSelect.value = scenes[0].id;
    await refreshScene();
  }
  render();
}

void main();
