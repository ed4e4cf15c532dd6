import { Match, SigseekClient } from "./api.js";
import { renderGallery, renderPanel, renderToast } from "./gallery.js";
import { AppController } from "./state.js";
import { SliceViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function boot() {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("server") ?? "http://127.0.0.1:8400";
  const api = new SigseekClient(base);

  const canvas = el<HTMLCanvasElement>("viewer");
  const viewer = new SliceViewer(canvas, api, { windowSize: 128, scale: 4 });

  const galleryRoot = el<HTMLDivElement>("gallery");
  const panelRoot = el<HTMLDivElement>("panel");
  const toastRoot = el<HTMLDivElement>("toast");
  const rankInput = el<HTMLInputElement>("rank-n");
  const sliceLabel = el<HTMLSpanElement>("slice-label");

  let lastAction: (() => void) | null = null;

  const controller = new AppController(api, (state) => {
    renderGallery(galleryRoot, state, api, {
      onLabel: (m: Match, verdict: boolean) => {
        lastAction = () => controller.labelMatch(m, verdict);
        void controller.labelMatch(m, verdict);
      },
      onNavigate: (m: Match) => {
        void viewer.centerOn(m.x, m.y, m.z);
        sliceLabel.textContent = `z=${m.z}`;
      },
    });
    renderPanel(panelRoot, state);
    renderToast(toastRoot, state, () => {
      controller.dismissToast();
      lastAction?.();
    });
  }, { rankN: 50 });

  canvas.addEventListener("click", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const voxel = viewer.voxelAt(ev.clientX - rect.left, ev.clientY - rect.top);
    lastAction = () => controller.clickToQuery(voxel);
    void controller.clickToQuery(voxel);
  });

  rankInput.value = "50";
  rankInput.addEventListener("change", () => {
    controller.setRankN(parseInt(rankInput.value, 10) || 50);
    void controller.refreshNext();
  });

  el<HTMLButtonElement>("slice-up").addEventListener("click", () => {
    void viewer.stepSlice(1).then(() => {
      sliceLabel.textContent = `z=${viewer.center.z}`;
    });
  });
  el<HTMLButtonElement>("slice-down").addEventListener("click", () => {
    void viewer.stepSlice(-1).then(() => {
      sliceLabel.textContent = `z=${viewer.center.z}`;
    });
  });
  el<HTMLButtonElement>("label-next-true").addEventListener("click", () => {
    const cand = controller.state.nextCandidate;
    if (cand) void controller.labelMatch(cand, true);
  });
  el<HTMLButtonElement>("label-next-false").addEventListener("click", () => {
    const cand = controller.state.nextCandidate;
    if (cand) void controller.labelMatch(cand, false);
  });

  sliceLabel.textContent = `z=${viewer.center.z}`;
  void viewer.redraw();
}

window.addEventListener("DOMContentLoaded", boot);
