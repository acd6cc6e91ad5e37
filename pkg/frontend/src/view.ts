/** DOM builders. Pure functions of served data: no client-side re-sorting,
 * no mutation of anything on the server. */

import type {
  BoxCoords,
  FrameRef,
  PopupPayload,
  SessionSummary,
  TimelineEntry,
} from "./api.js";
import { relativeLabel } from "./time.js";

export interface BoxStyle {
  left: string;
  top: string;
  width: string;
  height: string;
}

/** Percent-based placement of a box inside its frame. Percent coordinates
 * scale linearly with the displayed image, so the overlay stays within one
 * rounding pixel of the true position at any display size. */
export function boxStyle(box: BoxCoords, frame: FrameRef): BoxStyle {
  const [x1, y1, x2, y2] = box;
  const pct = (v: number, span: number) => `${((v / span) * 100).toFixed(4)}%`;
  return {
    left: pct(x1, frame.width),
    top: pct(y1, frame.height),
    width: pct(x2 - x1, frame.width),
    height: pct(y2 - y1, frame.height),
  };
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function buildSessionPicker(
  sessions: SessionSummary[],
  onPick: (sessionId: string) => void,
): HTMLElement {
  const panel = el("section", "session-picker");
  panel.appendChild(el("h2", undefined, "Sessions"));
  const list = el("ul", "session-list");
  for (const session of sessions) {
    const item = el("li");
    const button = el("button", "session-button");
    button.textContent = `${session.session_id} (${session.cluster_count} objects)`;
    button.addEventListener("click", () => onPick(session.session_id));
    item.appendChild(button);
    list.appendChild(item);
  }
  panel.appendChild(list);
  return panel;
}

export function buildGrid(
  entries: TimelineEntry[],
  onSelect: (clusterId: number) => void,
): HTMLElement {
  const grid = el("section", "grid");
  const newest = entries.length ? entries[0].last_timestamp_ms : 0;
  for (const entry of entries) {
    const card = el("article", "card");
    card.dataset.clusterId = String(entry.cluster_id);
    card.tabIndex = 0;

    if (entry.thumbnail_url) {
      const img = el("img", "thumb");
      img.src = entry.thumbnail_url;
      img.alt = `object ${entry.cluster_id}`;
      img.addEventListener("error", () => {
        img.replaceWith(el("div", "thumb thumb-missing", "image unavailable"));
      });
      card.appendChild(img);
    } else {
      card.appendChild(el("div", "thumb thumb-missing", "no thumbnail"));
    }

    const caption = el("div", "caption");
    caption.appendChild(
      el("span", "when", relativeLabel(entry.last_timestamp_ms, newest)),
    );
    caption.appendChild(
      el("span", "count", `seen ${entry.member_count}x`),
    );
    card.appendChild(caption);

    const open = () => onSelect(entry.cluster_id);
    card.addEventListener("click", open);
    card.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Enter") open();
    });
    grid.appendChild(card);
  }
  return grid;
}

export function buildPopup(
  payload: PopupPayload,
  onClose: () => void,
): HTMLElement {
  const overlay = el("div", "overlay");
  overlay.addEventListener("click", (ev) => {
    if (ev.target === overlay) onClose();
  });

  const dialog = el("div", "popup");

  const frameBox = el("div", "popup-frame");
  const img = el("img", "popup-image");
  img.src = payload.frame_url;
  img.alt = `last frame of object ${payload.cluster_id}`;
  img.addEventListener("error", () => {
    frameBox.replaceChildren(
      el("div", "frame-missing", "frame image unavailable"),
    );
    const note = el("p", "error-note", "The last frame could not be loaded.");
    frameBox.appendChild(note);
  });
  frameBox.appendChild(img);

  const highlight = el("div", "highlight");
  const style = boxStyle(payload.box, payload.frame);
  highlight.style.left = style.left;
  highlight.style.top = style.top;
  highlight.style.width = style.width;
  highlight.style.height = style.height;
  frameBox.appendChild(highlight);

  dialog.appendChild(frameBox);

  const footer = el("footer", "popup-footer");
  footer.appendChild(el("span", "timestamp", payload.timestamp));
  const close = el("button", "close-button", "Close");
  close.addEventListener("click", onClose);
  footer.appendChild(close);
  dialog.appendChild(footer);

  overlay.appendChild(dialog);
  return overlay;
}

export function buildErrorBanner(message: string, onRetry: () => void): HTMLElement {
  const banner = el("div", "banner");
  banner.setAttribute("role", "alert");
  banner.appendChild(el("span", "banner-text", message));
  const retry = el("button", "retry-button", "Retry");
  retry.addEventListener("click", onRetry);
  banner.appendChild(retry);
  return banner;
}

export function buildEmptyState(text: string): HTMLElement {
  return el("div", "empty-state", text);
}

export function buildLoading(): HTMLElement {
  return el("div", "loading", "loading...");
}
