/** Canned service responses and a recording fetch stub. */

import { vi } from "vitest";
import type {
  BoxCoords,
  PopupPayload,
  SessionSummary,
  TimelineDoc,
  TimelineEntry,
} from "../src/api.js";

export const FRAME = { width: 640, height: 480 };

function frameRef(index: number) {
  return {
    frame_index: index,
    width: FRAME.width,
    height: FRAME.height,
    image_ref: `frames/${String(index).padStart(6, "0")}.png`,
  };
}

export function makeEntry(
  clusterId: number,
  tsMs: number,
  box: BoxCoords,
): TimelineEntry {
  return {
    cluster_id: clusterId,
    thumbnail: `crops/c${clusterId}.raw`,
    thumbnail_url: `/sessions/s1/images/thumbnail/crops/c${clusterId}.raw`,
    last_frame: frameRef(clusterId * 10 + 5),
    last_detection_id: `d${clusterId}`,
    last_timestamp_ms: tsMs,
    last_box: box,
    member_count: clusterId + 1,
  };
}

/** Served order [2, 0, 1]: recency-sorted by the server, and distinct from
 * any client-side id sort, so a re-sorting client fails the order check. */
export const SERVED_ENTRIES: TimelineEntry[] = [
  makeEntry(2, 90_000, [100, 60, 220, 180]),
  makeEntry(0, 30_000, [12, 24, 48, 96]),
  makeEntry(1, 30_000, [300, 200, 400, 360]),
];

export const TIMELINE: TimelineDoc = { session_id: "s1", entries: SERVED_ENTRIES };

export const SESSION: SessionSummary = {
  session_id: "s1",
  created_at: "2024-05-01T12:00:00+00:00",
  cluster_count: SERVED_ENTRIES.length,
};

export function popupFor(entry: TimelineEntry): PopupPayload {
  const total = entry.last_timestamp_ms;
  const ms = total % 1000;
  const s = Math.floor(total / 1000) % 60;
  const m = Math.floor(total / 60_000) % 60;
  const h = Math.floor(total / 3_600_000);
  const pad = (v: number, n = 2) => String(v).padStart(n, "0");
  return {
    cluster_id: entry.cluster_id,
    frame: entry.last_frame,
    box: entry.last_box,
    timestamp: `${pad(h)}:${pad(m)}:${pad(s)}.${pad(ms, 3)}`,
    timestamp_ms: total,
    frame_url: `/sessions/s1/images/frame/${entry.last_frame.image_ref}`,
  };
}

export interface RecordedCall {
  url: string;
  method: string;
}

/** Replace global fetch with a router over exact URL strings. */
export function stubFetch(routes: Record<string, unknown>) {
  const calls: RecordedCall[] = [];
  const fn = vi.fn(async (input: unknown, init?: { method?: string }) => {
    const url = String(input);
    calls.push({ url, method: init?.method ?? "GET" });
    if (url in routes) {
      return {
        ok: true,
        status: 200,
        json: async () => structuredClone(routes[url]),
      };
    }
    return {
      ok: false,
      status: 404,
      json: async () => ({ detail: "not found" }),
    };
  });
  vi.stubGlobal("fetch", fn);
  return { calls, fn };
}

export function standardRoutes(): Record<string, unknown> {
  const routes: Record<string, unknown> = {
    "/sessions": [SESSION],
    "/sessions/s1/timeline": TIMELINE,
  };
  for (const entry of SERVED_ENTRIES) {
    routes[`/sessions/s1/clusters/${entry.cluster_id}/popup`] = popupFor(entry);
  }
  return routes;
}

export async function flush(): Promise<void> {
  for (let i = 0; i < 4; i += 1) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}
