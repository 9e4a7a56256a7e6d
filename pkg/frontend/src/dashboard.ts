// Ties the pieces together: one recorder, the stats table, the map and the
// congestion list. Renders into anything with an innerHTML property, so the
// whole thing can run against plain objects in tests and real elements in
// the browser. No state is kept beyond the recorder buffer and the current
// pseudonym; a reload rebuilds everything from the API.

import { ApiClient } from "./api.js";
import { Recorder, RecorderEvent } from "./recorder.js";
import type { PointSource } from "./sources.js";
import { renderStats, statsView } from "./stats.js";
import { congestionViews, renderMapSvg, tripPolylines } from "./map.js";

export interface Slot {
  innerHTML: string;
}

export interface DashboardSlots {
  banner: Slot;
  status: Slot;
  stats: Slot;
  map: Slot;
  congestion: Slot;
}

/** Error strip at the top of the page. Informative, never blocks input. */
export class Banner {
  private slot: Slot;
  message: string | null = null;

  constructor(slot: Slot) {
    this.slot = slot;
    this.clear();
  }

  show(message: string): void {
    this.message = message;
    this.slot.innerHTML = `<div class="banner" role="alert">${message}</div>`;
  }

  clear(): void {
    this.message = null;
    this.slot.innerHTML = "";
  }
}

export interface DashboardOptions {
  client: ApiClient;
  userToken: string;
  slots: DashboardSlots;
  policyVersion?: string;
  now?: () => number;
  recorder?: Partial<{
    batchSize: number;
    debounceMs: number;
    retryDelayMs: number;
    maxAttempts: number;
    sleep: (ms: number) => Promise<void>;
  }>;
}

export class Dashboard {
  client: ApiClient;
  recorder: Recorder;
  banner: Banner;
  pseudonym: string | null = null;

  private userToken: string;
  private slots: DashboardSlots;
  private policyVersion: string;
  private now: () => number;
  private lastEvent: RecorderEvent | null = null;

  constructor(opts: DashboardOptions) {
    this.client = opts.client;
    this.userToken = opts.userToken;
    this.slots = opts.slots;
    this.policyVersion = opts.policyVersion ?? "v1";
    this.now = opts.now ?? Date.now;
    this.banner = new Banner(opts.slots.banner);
    this.recorder = new Recorder({
      client: opts.client,
      userToken: opts.userToken,
      onEvent: (event) => {
        this.lastEvent = event;
        this.renderStatus();
      },
      now: opts.now,
      ...opts.recorder,
    });
    this.renderStatus();
  }

  /** Consent first; uploads are rejected without it. Safe to call again. */
  async init(): Promise<void> {
    try {
      const consent = await this.client.grantConsent(this.userToken, this.policyVersion);
      this.pseudonym = consent.pseudonym;
    } catch (err) {
      this.banner.show(`consent failed: ${describe(err)}`);
      return;
    }
    await this.refresh();
  }

  /**
   * The record button. Starting also kicks off the upload loop for the
   * source; stopping asks the server to process the finished trip and then
   * refreshes every view.
   */
  async recordToggle(source?: PointSource): Promise<void> {
    try {
      const result = await this.recorder.toggle(source);
      this.renderStatus();
      if (!result.changed) return;
      if (result.phase === "Recording") {
        await this.recorder.drain();
        this.renderStatus();
        return;
      }
      if (result.tripId !== null) {
        await this.client.processJobs();
        await this.refresh();
      }
    } catch (err) {
      this.banner.show(`recording problem: ${describe(err)}`);
      this.renderStatus();
    }
  }

  /** Re-fetch everything the page shows. Partial failures turn into a
   * banner message; the views that did load still render. */
  async refresh(): Promise<void> {
    const problems: string[] = [];
    if (this.pseudonym !== null) {
      try {
        const stats = await this.client.userStats(this.pseudonym);
        this.slots.stats.innerHTML = renderStats(statsView(stats));
      } catch (err) {
        problems.push(`stats: ${describe(err)}`);
      }
      try {
        const trips = await this.client.tripsGeoJson(this.pseudonym);
        this.slots.map.innerHTML = renderMapSvg(tripPolylines(trips));
      } catch (err) {
        problems.push(`map: ${describe(err)}`);
      }
    }
    try {
      const at = new Date(this.now()).toISOString().replace(/\.\d{3}Z$/, "Z");
      const entries = await this.client.congestion(at);
      this.slots.congestion.innerHTML = renderCongestion(congestionViews(entries));
    } catch (err) {
      problems.push(`congestion: ${describe(err)}`);
    }
    if (problems.length > 0) {
      this.banner.show(problems.join("; "));
    } else {
      this.banner.clear();
    }
  }

  private renderStatus(): void {
    const phase = this.recorder.phase;
    const parts = [`<strong>${phase}</strong>`];
    if (this.lastEvent !== null) {
      const e = this.lastEvent;
      parts.push(`${e.action} ${e.status}${e.attempt > 1 ? ` (attempt ${e.attempt})` : ""}`);
    }
    if (this.recorder.lastTripId !== null) {
      parts.push(`trip ${this.recorder.lastTripId}`);
    }
    parts.push(`${this.recorder.pointsSent} points uploaded`);
    this.slots.status.innerHTML = parts.join(" · ");
  }
}

function renderCongestion(views: ReturnType<typeof congestionViews>): string {
  if (views.length === 0) {
    return '<p class="congestion-empty">no congestion data for this interval</p>';
  }
  const items = views
    .map(
      (v) =>
        `<li><span class="dot" style="background:${v.color}"></span> ${v.segmentId}: ${v.level} (${(v.speedRatio * 100).toFixed(0)}% of reference speed)</li>`,
    )
    .join("");
  return `<ul class="congestion">${items}</ul>`;
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}
