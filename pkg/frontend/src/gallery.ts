// Ranked match gallery and query-set panel rendering. Pure DOM output of
// the controller state; label clicks call back into the controller.

import { Match, SigseekClient } from "./api.js";
import { ViewState, coordKey } from "./state.js";

export interface GalleryCallbacks {
  onLabel: (match: Match, verdict: boolean) => void;
  onNavigate: (match: Match) => void;
}

const THUMB_SIZE = 32;

export function renderGallery(
  root: HTMLElement,
  state: ViewState,
  api: SigseekClient,
  cb: GalleryCallbacks,
): void {
  root.innerHTML = "";
  for (const match of state.gallery) {
    root.appendChild(matchCard(match, state, api, cb));
  }
}

function matchCard(
  match: Match,
  state: ViewState,
  api: SigseekClient,
  cb: GalleryCallbacks,
): HTMLElement {
  const card = document.createElement("div");
  card.className = "match-card";
  card.dataset.coord = coordKey(match);

  const img = document.createElement("img");
  img.src = api.patchUrl(match.x, match.y, match.z, THUMB_SIZE);
  img.width = THUMB_SIZE * 2;
  img.height = THUMB_SIZE * 2;
  img.title = `navigate to (${match.x}, ${match.y}, ${match.z})`;
  img.addEventListener("click", () => cb.onNavigate(match));
  card.appendChild(img);

  const meta = document.createElement("div");
  meta.className = "match-meta";
  const selfTag = match.self ? " [query site]" : "";
  meta.textContent = `#${match.rank} d=${match.distance}${selfTag}`;
  card.appendChild(meta);

  const label = state.labels.get(coordKey(match));
  if (label !== undefined) {
    const verdict = document.createElement("span");
    verdict.className = label ? "label-true" : "label-false";
    verdict.textContent = label ? "true" : "false";
    card.appendChild(verdict);
  } else {
    for (const verdict of [true, false]) {
      const btn = document.createElement("button");
      btn.textContent = verdict ? "✓" : "✗";
      btn.className = verdict ? "btn-true" : "btn-false";
      btn.addEventListener("click", () => cb.onLabel(match, verdict));
      card.appendChild(btn);
    }
  }
  return card;
}

export function renderPanel(root: HTMLElement, state: ViewState): void {
  const next = state.nextCandidate
    ? `#${state.nextCandidate.rank} at (${state.nextCandidate.x}, ` +
      `${state.nextCandidate.y}, ${state.nextCandidate.z}) ` +
      `d=${state.nextCandidate.distance}`
    : state.exhausted
      ? "exhausted"
      : "—";
  root.innerHTML = "";
  const rows: [string, string][] = [
    ["session", state.sessionId ?? "—"],
    ["query set", String(state.querySetSize)],
    ["labels used", String(state.labelsUsed)],
    ["next candidate", next],
  ];
  for (const [k, v] of rows) {
    const row = document.createElement("div");
    row.className = "panel-row";
    row.dataset.field = k.replace(" ", "-");
    row.textContent = `${k}: ${v}`;
    root.appendChild(row);
  }
}

export function renderToast(root: HTMLElement, state: ViewState,
                            onRetry: () => void): void {
  root.innerHTML = "";
  if (!state.toast) {
    root.style.display = "none";
    return;
  }
  root.style.display = "block";
  const msg = document.createElement("span");
  msg.textContent = `${state.toast.category}: ${state.toast.message}`;
  root.appendChild(msg);
  if (state.toast.retryable) {
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.className = "btn-retry";
    retry.addEventListener("click", onRetry);
    root.appendChild(retry);
  }
}
