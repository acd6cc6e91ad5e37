/** Typed client for the discovery service. Read-only: GETs exclusively. */

export interface SessionSummary {
  session_id: string;
  created_at: string;
  cluster_count: number;
}

export interface FrameRef {
  frame_index: number;
  width: number;
  height: number;
  image_ref: string;
}

export type BoxCoords = [number, number, number, number];

export interface TimelineEntry {
  cluster_id: number;
  thumbnail: string | null;
  thumbnail_url: string | null;
  last_frame: FrameRef;
  last_detection_id: string;
  last_timestamp_ms: number;
  last_box: BoxCoords;
  member_count: number;
}

export interface TimelineDoc {
  session_id: string;
  entries: TimelineEntry[];
}

export interface PopupPayload {
  cluster_id: number;
  frame: FrameRef;
  box: BoxCoords;
  timestamp: string;
  timestamp_ms: number;
  frame_url: string;
}

export class ApiError extends Error {
  readonly status?: number;

  constructor(message: string, status?: number) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

async function getJson<T>(url: string): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url);
  } catch (err) {
    throw new ApiError(`cannot reach the service: ${String(err)}`);
  }
  if (!resp.ok) {
    throw new ApiError(`${url}: HTTP ${resp.status}`, resp.status);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  listSessions(): Promise<SessionSummary[]> {
    return getJson<SessionSummary[]>(`${this.base}/sessions`);
  }

  fetchTimeline(sessionId: string): Promise<TimelineDoc> {
    return getJson<TimelineDoc>(
      `${this.base}/sessions/${encodeURIComponent(sessionId)}/timeline`,
    );
  }

  fetchPopup(sessionId: string, clusterId: number): Promise<PopupPayload> {
    return getJson<PopupPayload>(
      `${this.base}/sessions/${encodeURIComponent(sessionId)}/clusters/${clusterId}/popup`,
    );
  }

  /** thumbnail_url / frame_url come back as absolute paths on the service. */
  imageUrl(path: string): string {
    return this.base + path;
  }
}
