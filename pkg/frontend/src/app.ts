/** DOM wiring for the query composer: upload, option selection, guided
 * category, rectangle drawing, and the ranked result gallery. All pure
 * logic lives in api.ts / roi.ts / ppm.ts / results.ts. */

import {
  ApiError,
  QueryDraft,
  RoiRect,
  SearchResponse,
  buildSearchBody,
  fetchHealth,
  fetchTaxonomy,
  postSearch,
  validateDraft,
} from "./api.js";
import { encodePpmBase64 } from "./ppm.js";
import { toResultCards, sequenceChips, formatDistance } from "./results.js";
import { RoiDrag } from "./roi.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

type UiState = {
  image: HTMLImageElement | null;
  imageBase64: string | null;
  roi: RoiRect | null;
  drag: RoiDrag | null;
  inflight: AbortController | null;
};

const state: UiState = {
  image: null,
  imageBase64: null,
  roi: null,
  drag: null,
  inflight: null,
};

function currentOption(): 1 | 2 | 3 {
  const checked = document.querySelector<HTMLInputElement>(
    'input[name="option"]:checked',
  );
  return (checked ? Number(checked.value) : 1) as 1 | 2 | 3;
}

function currentDraft(): QueryDraft {
  const option = currentOption();
  return {
    option,
    imageBase64: state.imageBase64,
    guidedCategory:
      option === 2 ? ($("category") as HTMLSelectElement).value || null : null,
    roi: option === 3 ? state.roi : null,
    k: Number(($("k") as HTMLInputElement).value) || 10,
    appearanceWeight: Number(($("weight") as HTMLInputElement).value),
  };
}

function setMessage(text: string, isError = false): void {
  const node = $("message");
  node.textContent = text;
  node.className = isError ? "message error" : "message";
}

function redrawCanvas(preview: RoiRect | null = null): void {
  const canvas = $("query-canvas") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx || !state.image) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(state.image, 0, 0);
  const box = preview ?? state.roi;
  if (box && currentOption() === 3) {
    ctx.strokeStyle = "#ff3355";
    ctx.lineWidth = Math.max(1, canvas.width / 200);
    ctx.strokeRect(box.x, box.y, box.w, box.h);
  }
}

function canvasScale(canvas: HTMLCanvasElement): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return { x: canvas.width / rect.width, y: canvas.height / rect.height };
}

function pointerPoint(
  canvas: HTMLCanvasElement,
  event: PointerEvent,
): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return { x: event.clientX - rect.left, y: event.clientY - rect.top };
}

async function onFilePicked(file: File): Promise<void> {
  const url = URL.createObjectURL(file);
  const image = new Image();
  await new Promise<void>((resolve, reject) => {
    image.onload = () => resolve();
    image.onerror = () => reject(new Error("could not decode the image"));
    image.src = url;
  });
  URL.revokeObjectURL(url);

  const canvas = $("query-canvas") as HTMLCanvasElement;
  canvas.width = image.naturalWidth;
  canvas.height = image.naturalHeight;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas unavailable");
  ctx.drawImage(image, 0, 0);
  const pixels = ctx.getImageData(0, 0, canvas.width, canvas.height);

  state.image = image;
  state.imageBase64 = encodePpmBase64(pixels);
  state.roi = null;
  state.drag = new RoiDrag(canvas.width, canvas.height);
  redrawCanvas();
  setMessage(`image loaded (${canvas.width}x${canvas.height})`);
  updateControls();
}

function updateControls(): void {
  const option = currentOption();
  ($("category") as HTMLSelectElement).disabled = option !== 2;
  $("roi-hint").style.display = option === 3 ? "block" : "none";
  const problem = validateDraft(currentDraft());
  ($("submit") as HTMLButtonElement).disabled = problem !== null;
  $("draft-status").textContent = problem ?? "ready";
  redrawCanvas();
}

function renderResults(response: SearchResponse): void {
  const chips = sequenceChips(response)
    .map(
      (chip) =>
        `<span class="chip" title="${
          chip.probability === null ? "" : chip.probability.toFixed(3)
        }">${chip.symbol}</span>`,
    )
    .join(" ");
  $("sequence").innerHTML =
    `<b>recognized:</b> ${chips}` +
    (response.category ? ` <i>(category filter: ${response.category})</i>` : "");

  const cards = toResultCards(response.results);
  const grid = $("results");
  grid.innerHTML = "";
  for (const card of cards) {
    const div = document.createElement("div");
    div.className = "card";
    div.innerHTML = `
      <div class="thumb"><canvas width="96" height="96"></canvas></div>
      <div class="card-body">
        <div class="card-title">#${card.rank} ${card.itemId}</div>
        <div>distance ${formatDistance(card.distance)} · ${card.matchCount} shared</div>
        <div class="chips">${card.attributes
          .map((a) => `<span class="chip">${a}</span>`)
          .join(" ")}</div>
      </div>`;
    const thumb = div.querySelector("canvas") as HTMLCanvasElement;
    const ctx = thumb.getContext("2d");
    if (ctx) {
      ctx.fillStyle = "#e8e4da";
      ctx.fillRect(0, 0, 96, 96);
      const span = Math.max(card.roi.x + card.roi.w, card.roi.y + card.roi.h, 1);
      const scale = 88 / span;
      ctx.strokeStyle = "#2b6cb0";
      ctx.lineWidth = 2;
      ctx.strokeRect(
        4 + card.roi.x * scale,
        4 + card.roi.y * scale,
        Math.max(2, card.roi.w * scale),
        Math.max(2, card.roi.h * scale),
      );
    }
    grid.appendChild(div);
  }
}

async function submit(): Promise<void> {
  const draft = currentDraft();
  let body;
  try {
    body = buildSearchBody(draft);
  } catch (err) {
    setMessage((err as Error).message, true);
    return;
  }
  state.inflight?.abort(); // one in-flight search per tab
  const controller = new AbortController();
  state.inflight = controller;
  setMessage("searching...");
  try {
    const response = await postSearch(body, "", controller.signal);
    if (controller.signal.aborted) return;
    renderResults(response);
    setMessage(`${response.results.length} results`);
  } catch (err) {
    if (controller.signal.aborted) return;
    if (err instanceof ApiError) {
      setMessage(`request rejected: ${err.detail}`, true);
    } else {
      setMessage(`search failed: ${(err as Error).message}`, true);
    }
  }
}

async function init(): Promise<void> {
  try {
    const [taxonomy, health] = await Promise.all([
      fetchTaxonomy(),
      fetchHealth(),
    ]);
    const select = $("category") as HTMLSelectElement;
    for (const category of taxonomy.categories) {
      const option = document.createElement("option");
      option.value = category;
      option.textContent = category;
      select.appendChild(option);
    }
    setMessage(`connected: ${health.items} items indexed`);
  } catch (err) {
    setMessage(`service unreachable: ${(err as Error).message}`, true);
  }

  $("file").addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    if (input.files && input.files[0]) {
      onFilePicked(input.files[0]).catch((err) =>
        setMessage((err as Error).message, true),
      );
    }
  });

  for (const radio of document.querySelectorAll('input[name="option"]')) {
    radio.addEventListener("change", updateControls);
  }
  $("category").addEventListener("change", updateControls);
  $("k").addEventListener("input", updateControls);

  const canvas = $("query-canvas") as HTMLCanvasElement;
  canvas.addEventListener("pointerdown", (event) => {
    if (currentOption() !== 3 || !state.drag) return;
    canvas.setPointerCapture(event.pointerId);
    state.drag.begin(pointerPoint(canvas, event));
  });
  canvas.addEventListener("pointermove", (event) => {
    if (!state.drag?.active) return;
    const scale = canvasScale(canvas);
    redrawCanvas(state.drag.preview(pointerPoint(canvas, event), scale.x, scale.y));
  });
  canvas.addEventListener("pointerup", (event) => {
    if (!state.drag?.active) return;
    const scale = canvasScale(canvas);
    state.roi = state.drag.finish(pointerPoint(canvas, event), scale.x, scale.y);
    if (state.roi === null) setMessage("zero-area drag ignored; try again", true);
    updateControls();
  });

  $("submit").addEventListener("click", () => void submit());
  updateControls();
}

document.addEventListener("DOMContentLoaded", () => void init());
