// Typed client for the intermodal mobility HTTP API. Everything the
// dashboard knows about the backend goes through this module.

export type ActivityKind = "Still" | "OnFoot" | "OnBicycle" | "InVehicle" | "Unknown";
export type Mode = "Walk" | "Bicycle" | "Car" | "Tram" | "Bus" | "Unknown";
export type RecordingAction = "Start" | "Append" | "Stop";
export type CongestionLevel = "Heavy" | "Medium" | "Low";

export interface WirePoint {
  t: string;
  lat: number;
  lon: number;
  accuracy_m: number;
  kind: ActivityKind;
  confidence?: number;
  speed_mps?: number;
}

export interface TraceReceipt {
  trip_id: string | null;
  points_accepted: number;
  points_dropped: number;
}

export interface Consent {
  pseudonym: string;
  policy_version: string;
  granted_at: string;
  active: boolean;
}

export interface ModeShareRow {
  trip_count: number;
  total_duration_s: number;
  count_share: number;
  duration_share: number;
}

export interface UserStats {
  total_trips: number;
  rows: { [mode: string]: ModeShareRow };
}

export interface DatasetStats {
  user_count: number;
  trip_count: number;
  average_trip_duration_min: number;
  gps_point_count: number;
}

export interface JobRecord {
  job_id: string;
  trip_id: string;
  stage: string;
  stages: string[];
  error?: string;
}

export interface CongestionEntry {
  segment_id: string;
  interval_start: string;
  level: CongestionLevel;
  speed_ratio: number;
}

export interface GeoJsonFeature {
  type: "Feature";
  geometry: { type: string; coordinates: [number, number][] };
  properties: { [key: string]: unknown };
}

export interface TripCollection {
  type: "FeatureCollection";
  features: GeoJsonFeature[];
}

/** Non-2xx response, with the parsed error body when the server sent one. */
export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, message: string) {
    super(message);
    this.status = status;
    this.code = code;
  }
}

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  baseUrl: string;
  private fetchFn: FetchFn;

  constructor(baseUrl: string, fetchFn?: FetchFn) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    // Bind so a bare window.fetch does not lose its receiver.
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(this.baseUrl + path, init);
    const text = await response.text();
    let parsed: unknown = null;
    if (text.length > 0) {
      try {
        parsed = JSON.parse(text);
      } catch {
        parsed = null;
      }
    }
    if (!response.ok) {
      const err = (parsed ?? {}) as { code?: string; message?: string };
      throw new ApiError(
        response.status,
        err.code ?? "HttpError",
        err.message ?? `request failed with status ${response.status}`,
      );
    }
    return parsed as T;
  }

  grantConsent(userToken: string, policyVersion: string): Promise<Consent> {
    return this.request("POST", "/consents", {
      user_token: userToken,
      policy_version: policyVersion,
    });
  }

  sendTrace(envelope: {
    client_message_id: string;
    user_token: string;
    recording_action: RecordingAction;
    points: WirePoint[];
  }): Promise<TraceReceipt> {
    return this.request("POST", "/traces", envelope);
  }

  processJobs(): Promise<{ results: { [jobId: string]: string } }> {
    return this.request("POST", "/jobs/process");
  }

  getJob(jobId: string): Promise<JobRecord> {
    return this.request("GET", `/jobs/${encodeURIComponent(jobId)}`);
  }

  userStats(pseudonym: string): Promise<UserStats> {
    return this.request("GET", `/users/${encodeURIComponent(pseudonym)}/stats`);
  }

  datasetStats(): Promise<DatasetStats> {
    return this.request("GET", "/stats");
  }

  congestion(at: string): Promise<CongestionEntry[]> {
    return this.request("GET", `/segments/congestion?at=${encodeURIComponent(at)}`);
  }

  tripsGeoJson(pseudonym?: string): Promise<TripCollection> {
    const query = pseudonym ? `?pseudonym=${encodeURIComponent(pseudonym)}` : "";
    return this.request("GET", `/export/trips.geojson${query}`);
  }
}
