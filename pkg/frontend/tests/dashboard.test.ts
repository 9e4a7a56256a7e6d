import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import type { WirePoint } from "../src/api.js";
import { Dashboard, DashboardSlots } from "../src/dashboard.js";
import { ReplaySource, bicycleFixture } from "../src/sources.js";

/**
 * In-memory backend behind a fake fetch. Enough of the real API surface for
 * the dashboard: consent, traces with idempotency, processing, stats,
 * GeoJSON export and congestion.
 */
function fakeApi() {
  const journal = new Map<string, unknown>();
  const trips = new Map<string, WirePoint[]>();
  let open: WirePoint[] | null = null;
  let tripCounter = 0;
  const flags = { failCongestion: false };
  let congestion: unknown[] = [];

  function json(payload: unknown, status = 200): Response {
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "content-type": "application/json" },
    });
  }

  function handleTrace(body: {
    client_message_id: string;
    recording_action: string;
    points: WirePoint[];
  }): Response {
    const cached = journal.get(body.client_message_id);
    if (cached !== undefined) return json(cached);
    let receipt;
    if (body.recording_action === "Start") {
      open = [...body.points];
      receipt = { trip_id: null, points_accepted: body.points.length, points_dropped: 0 };
    } else if (open === null) {
      return json({ code: "InvalidEnvelope", message: "no open recording", detail: {} }, 422);
    } else if (body.recording_action === "Append") {
      open.push(...body.points);
      receipt = { trip_id: null, points_accepted: body.points.length, points_dropped: 0 };
    } else {
      const all = [...open, ...body.points];
      open = null;
      const tripId = `T-${++tripCounter}`;
      trips.set(tripId, all);
      receipt = { trip_id: tripId, points_accepted: all.length, points_dropped: 0 };
    }
    journal.set(body.client_message_id, receipt);
    return json(receipt);
  }

  function stats(): Response {
    if (trips.size === 0) return json({ total_trips: 0, rows: {} });
    let seconds = 0;
    for (const points of trips.values()) {
      seconds += (points.length - 1) * 5;
    }
    return json({
      total_trips: trips.size,
      rows: {
        Bicycle: {
          trip_count: trips.size,
          total_duration_s: seconds,
          count_share: 1.0,
          duration_share: 1.0,
        },
      },
    });
  }

  function geojson(): Response {
    const features = [...trips.entries()].map(([tripId, points]) => ({
      type: "Feature",
      geometry: {
        type: "LineString",
        coordinates: points.map((p) => [p.lon, p.lat]),
      },
      properties: { trip_id: tripId, segment_id: `${tripId}-seg0`, mode: "Bicycle" },
    }));
    return json({ type: "FeatureCollection", features });
  }

  const fetchFn = async (rawUrl: string, init?: RequestInit): Promise<Response> => {
    const url = new URL(rawUrl);
    const method = init?.method ?? "GET";
    const body = typeof init?.body === "string" ? JSON.parse(init.body) : undefined;
    if (method === "POST" && url.pathname === "/consents") {
      return json({
        pseudonym: "p-1",
        policy_version: body.policy_version,
        granted_at: "2025-03-03T09:00:00Z",
        active: true,
      });
    }
    if (method === "POST" && url.pathname === "/traces") {
      return handleTrace(body);
    }
    if (method === "POST" && url.pathname === "/jobs/process") {
      const results: { [id: string]: string } = {};
      for (const tripId of trips.keys()) results[`job-${tripId}`] = "Enriched";
      return json({ results });
    }
    if (method === "GET" && url.pathname === "/users/p-1/stats") {
      return stats();
    }
    if (method === "GET" && url.pathname === "/export/trips.geojson") {
      return geojson();
    }
    if (method === "GET" && url.pathname === "/segments/congestion") {
      if (flags.failCongestion) {
        return json({ code: "Unavailable", message: "fcd archive offline", detail: {} }, 503);
      }
      return json(congestion);
    }
    return json({ code: "NotFound", message: `no route ${method} ${url.pathname}`, detail: {} }, 404);
  };

  return {
    fetchFn,
    trips,
    flags,
    setCongestion(entries: unknown[]) {
      congestion = entries;
    },
  };
}

function makeDashboard(fetchFn: (url: string, init?: RequestInit) => Promise<Response>) {
  const slots: DashboardSlots = {
    banner: { innerHTML: "" },
    status: { innerHTML: "" },
    stats: { innerHTML: "" },
    map: { innerHTML: "" },
    congestion: { innerHTML: "" },
  };
  let t = Date.parse("2025-03-03T12:00:00Z");
  const dashboard = new Dashboard({
    client: new ApiClient("http://fake", fetchFn),
    userToken: "rider@example.org",
    slots,
    now: () => (t += 1500),
    recorder: { sleep: async () => undefined },
  });
  return { dashboard, slots };
}

describe("Dashboard", () => {
  it("grants consent on init and renders the empty state", async () => {
    const api = fakeApi();
    const { dashboard, slots } = makeDashboard(api.fetchFn);
    await dashboard.init();
    expect(dashboard.pseudonym).toBe("p-1");
    expect(slots.stats.innerHTML).toContain("No trips yet");
    expect(slots.congestion.innerHTML).toContain("no congestion data");
    expect(slots.status.innerHTML).toContain("Idle");
    expect(dashboard.banner.message).toBeNull();
  });

  it("records a replayed fixture into a stored trip and refreshes the views", async () => {
    const api = fakeApi();
    const { dashboard, slots } = makeDashboard(api.fetchFn);
    await dashboard.init();

    await dashboard.recordToggle(new ReplaySource("fixture", bicycleFixture()));
    expect(dashboard.recorder.phase).toBe("Recording");
    expect(slots.status.innerHTML).toContain("Recording");

    await dashboard.recordToggle();
    expect(dashboard.recorder.phase).toBe("Idle");
    expect(api.trips.size).toBe(1);
    expect(api.trips.get("T-1")).toHaveLength(90);
    expect(slots.stats.innerHTML).toContain("<td>Bicycle</td>");
    expect(slots.stats.innerHTML).toContain("1 trips total");
    expect(slots.map.innerHTML).toContain("<polyline");
    expect(slots.status.innerHTML).toContain("trip T-1");
    expect(dashboard.banner.message).toBeNull();
  });

  it("shows congestion entries with their colors", async () => {
    const api = fakeApi();
    api.setCongestion([
      { segment_id: "s9", interval_start: "2025-03-03T11:45:00Z", level: "Heavy", speed_ratio: 0.4 },
    ]);
    const { dashboard, slots } = makeDashboard(api.fetchFn);
    await dashboard.init();
    expect(slots.congestion.innerHTML).toContain("s9: Heavy");
    expect(slots.congestion.innerHTML).toContain("background:red");
  });

  it("turns a failing endpoint into a banner without losing the other views", async () => {
    const api = fakeApi();
    const { dashboard, slots } = makeDashboard(api.fetchFn);
    await dashboard.init();
    expect(dashboard.banner.message).toBeNull();

    api.flags.failCongestion = true;
    await dashboard.refresh();
    expect(dashboard.banner.message).toContain("congestion");
    expect(dashboard.banner.message).toContain("fcd archive offline");
    expect(slots.banner.innerHTML).toContain("fcd archive offline");
    // the rest of the page still rendered
    expect(slots.stats.innerHTML).toContain("No trips yet");

    api.flags.failCongestion = false;
    await dashboard.refresh();
    expect(dashboard.banner.message).toBeNull();
    expect(slots.banner.innerHTML).toBe("");
  });

  it("reconstructs everything from the api after a reload", async () => {
    const api = fakeApi();
    const first = makeDashboard(api.fetchFn);
    await first.dashboard.init();
    await first.dashboard.recordToggle(new ReplaySource("fixture", bicycleFixture()));
    await first.dashboard.recordToggle();

    // fresh dashboard over the same backend, as after a page reload
    const second = makeDashboard(api.fetchFn);
    await second.dashboard.init();
    expect(second.slots.stats.innerHTML).toContain("<td>Bicycle</td>");
    expect(second.slots.map.innerHTML).toContain("<polyline");
  });
});
