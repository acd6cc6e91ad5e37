/** Controller: one state object, full re-render on every change. */

import { ApiClient } from "./api.js";
import type { SessionSummary, TimelineEntry } from "./api.js";
import {
  buildEmptyState,
  buildErrorBanner,
  buildGrid,
  buildLoading,
  buildPopup,
  buildSessionPicker,
} from "./view.js";

type Phase = "loading" | "error" | "sessions" | "timeline";

interface AppState {
  phase: Phase;
  error?: string;
  retry?: () => void;
  sessions: SessionSummary[];
  sessionId?: string;
  entries: TimelineEntry[];
}

export class App {
  private state: AppState = { phase: "loading", sessions: [], entries: [] };
  private popup: HTMLElement | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {
    document.addEventListener("keydown", (ev) => {
      if ((ev as KeyboardEvent).key === "Escape") this.closePopup();
    });
  }

  async start(): Promise<void> {
    this.state = { ...this.state, phase: "loading" };
    this.render();
    let sessions: SessionSummary[];
    try {
      sessions = await this.api.listSessions();
    } catch (err) {
      this.fail(String((err as Error).message ?? err), () => void this.start());
      return;
    }
    this.state.sessions = sessions;
    if (sessions.length === 1) {
      await this.openSession(sessions[0].session_id);
      return;
    }
    this.state.phase = "sessions";
    this.render();
  }

  async openSession(sessionId: string): Promise<void> {
    this.state = { ...this.state, phase: "loading", sessionId };
    this.render();
    try {
      const doc = await this.api.fetchTimeline(sessionId);
      this.state.entries = doc.entries;
    } catch (err) {
      this.fail(String((err as Error).message ?? err), () =>
        void this.openSession(sessionId),
      );
      return;
    }
    this.state.phase = "timeline";
    this.render();
  }

  async openPopup(clusterId: number): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId) return;
    try {
      const payload = await this.api.fetchPopup(sessionId, clusterId);
      this.closePopup();
      this.popup = buildPopup(payload, () => this.closePopup());
      document.body.appendChild(this.popup);
    } catch (err) {
      this.fail(String((err as Error).message ?? err), () =>
        void this.openSession(sessionId),
      );
    }
  }

  closePopup(): void {
    if (this.popup) {
      this.popup.remove();
      this.popup = null;
    }
  }

  private fail(message: string, retry: () => void): void {
    this.state = { ...this.state, phase: "error", error: message, retry };
    this.render();
  }

  render(): void {
    this.root.replaceChildren();
    switch (this.state.phase) {
      case "loading":
        this.root.appendChild(buildLoading());
        break;
      case "error":
        this.root.appendChild(
          buildErrorBanner(this.state.error ?? "something went wrong", () =>
            this.state.retry?.(),
          ),
        );
        break;
      case "sessions":
        if (this.state.sessions.length === 0) {
          this.root.appendChild(buildEmptyState("No sessions published yet."));
        } else {
          this.root.appendChild(
            buildSessionPicker(this.state.sessions, (id) =>
              void this.openSession(id),
            ),
          );
        }
        break;
      case "timeline":
        if (this.state.entries.length === 0) {
          this.root.appendChild(
            buildEmptyState("No hand-held objects discovered in this session."),
          );
        } else {
          this.root.appendChild(
            buildGrid(this.state.entries, (cid) => void this.openPopup(cid)),
          );
        }
        break;
    }
  }
}
