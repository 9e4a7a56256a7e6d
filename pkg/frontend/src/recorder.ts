// Recording state machine. One button toggles between Idle and Recording;
// points stream to the server in Append batches while recording. Uploads
// that fail are retried from a buffer, and every attempt is reported so the
// UI can show what is going on.

import type { RecordingAction, TraceReceipt, WirePoint } from "./api.js";
import { ApiError } from "./api.js";
import type { PointSource } from "./sources.js";

export type RecorderPhase = "Idle" | "Recording";

export interface RecorderEvent {
  status: "uploading" | "retrying" | "done" | "failed";
  action: RecordingAction;
  attempt: number;
  message?: string;
}

export interface ToggleResult {
  changed: boolean;
  phase: RecorderPhase;
  tripId: string | null;
}

interface TraceSender {
  sendTrace(envelope: {
    client_message_id: string;
    user_token: string;
    recording_action: RecordingAction;
    points: WirePoint[];
  }): Promise<TraceReceipt>;
}

export interface RecorderOptions {
  client: TraceSender;
  userToken: string;
  onEvent?: (event: RecorderEvent) => void;
  batchSize?: number;
  debounceMs?: number;
  maxAttempts?: number;
  retryDelayMs?: number;
  now?: () => number;
  sleep?: (ms: number) => Promise<void>;
  newRecordingId?: () => string;
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

function defaultRecordingId(): string {
  return `rec-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 8)}`;
}

export class Recorder {
  phase: RecorderPhase = "Idle";
  lastTripId: string | null = null;
  pointsSent = 0;

  private client: TraceSender;
  private userToken: string;
  private onEvent: (event: RecorderEvent) => void;
  private batchSize: number;
  private debounceMs: number;
  private maxAttempts: number;
  private retryDelayMs: number;
  private now: () => number;
  private sleep: (ms: number) => Promise<void>;
  private newRecordingId: () => string;

  private source: PointSource | null = null;
  private recordingId = "";
  private seq = 0;
  private lastToggleAt = Number.NEGATIVE_INFINITY;
  // Envelopes go out strictly in the order they were created.
  private chain: Promise<unknown> = Promise.resolve();

  constructor(opts: RecorderOptions) {
    this.client = opts.client;
    this.userToken = opts.userToken;
    this.onEvent = opts.onEvent ?? (() => undefined);
    this.batchSize = opts.batchSize ?? 25;
    this.debounceMs = opts.debounceMs ?? 1000;
    this.maxAttempts = opts.maxAttempts ?? 5;
    this.retryDelayMs = opts.retryDelayMs ?? 1500;
    this.now = opts.now ?? Date.now;
    this.sleep = opts.sleep ?? defaultSleep;
    this.newRecordingId = opts.newRecordingId ?? defaultRecordingId;
  }

  /**
   * Flip between Idle and Recording. Two clicks within the debounce window
   * count as one; the second returns unchanged. Starting needs a point
   * source. Stopping resolves with the trip id the server assigned.
   */
  toggle(source?: PointSource): Promise<ToggleResult> {
    const t = this.now();
    if (t - this.lastToggleAt < this.debounceMs) {
      return Promise.resolve({ changed: false, phase: this.phase, tripId: this.lastTripId });
    }

    if (this.phase === "Idle") {
      if (!source) {
        return Promise.reject(new Error("cannot start recording without a point source"));
      }
      this.lastToggleAt = t;
      this.phase = "Recording";
      this.source = source;
      this.recordingId = this.newRecordingId();
      this.seq = 0;
      this.lastTripId = null;
      return this.send("Start", []).then(() => ({
        changed: true,
        phase: "Recording" as const,
        tripId: null,
      }));
    }

    this.lastToggleAt = t;
    this.phase = "Idle";
    this.source = null;
    return this.send("Stop", []).then((receipt) => {
      this.lastTripId = receipt.trip_id;
      return { changed: true, phase: "Idle" as const, tripId: receipt.trip_id };
    });
  }

  /**
   * Pull one batch from the source and upload it. Resolves with the server
   * receipt, or null when the source is exhausted or recording has stopped.
   */
  step(): Promise<TraceReceipt | null> {
    if (this.phase !== "Recording" || this.source === null) {
      return Promise.resolve(null);
    }
    const batch: WirePoint[] = [];
    while (batch.length < this.batchSize) {
      const point = this.source.next();
      if (point === null) break;
      batch.push(point);
    }
    if (batch.length === 0) {
      return Promise.resolve(null);
    }
    return this.send("Append", batch);
  }

  /** Keep stepping until the source runs dry. */
  async drain(): Promise<void> {
    while ((await this.step()) !== null) {
      // each step uploads one batch
    }
  }

  // The message id is derived from the recording session and a sequence
  // number, so a retried envelope is deduplicated server side.
  private send(action: RecordingAction, points: WirePoint[]): Promise<TraceReceipt> {
    const envelope = {
      client_message_id: `${this.recordingId}:${this.seq++}`,
      user_token: this.userToken,
      recording_action: action,
      points,
    };
    const delivery = this.chain.then(() => this.deliver(envelope));
    this.chain = delivery.catch(() => undefined);
    return delivery;
  }

  private async deliver(envelope: {
    client_message_id: string;
    user_token: string;
    recording_action: RecordingAction;
    points: WirePoint[];
  }): Promise<TraceReceipt> {
    const action = envelope.recording_action;
    for (let attempt = 1; ; attempt++) {
      this.onEvent({ status: "uploading", action, attempt });
      try {
        const receipt = await this.client.sendTrace(envelope);
        if (action !== "Stop") {
          // a Stop receipt reports the whole trip, not this envelope
          this.pointsSent += receipt.points_accepted;
        }
        this.onEvent({ status: "done", action, attempt });
        return receipt;
      } catch (err) {
        const permanent = err instanceof ApiError && err.status < 500;
        if (permanent || attempt >= this.maxAttempts) {
          this.onEvent({ status: "failed", action, attempt, message: String(err) });
          throw err;
        }
        this.onEvent({ status: "retrying", action, attempt, message: String(err) });
        await this.sleep(this.retryDelayMs);
      }
    }
  }
}
