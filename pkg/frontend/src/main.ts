// Browser entry point. Reads ?api= and ?user= from the query string, wires
// the buttons and hands everything to Dashboard. No logic lives here.

import { ApiClient } from "./api.js";
import { Dashboard } from "./dashboard.js";
import { bicycleFixture, RandomWalkSource, ReplaySource } from "./sources.js";
import type { PointSource } from "./sources.js";

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el;
}

function pickSource(kind: string): PointSource {
  if (kind === "bicycle") {
    return new ReplaySource("bicycle fixture", bicycleFixture());
  }
  return new RandomWalkSource({
    seed: 42,
    lat: 52.37,
    lon: 9.73,
    startTime: new Date().toISOString(),
  });
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const apiBase = params.get("api") ?? "http://127.0.0.1:8099";
  const userToken = params.get("user") ?? "demo-user@example.org";

  const dashboard = new Dashboard({
    client: new ApiClient(apiBase),
    userToken,
    slots: {
      banner: byId("banner"),
      status: byId("status"),
      stats: byId("stats"),
      map: byId("map"),
      congestion: byId("congestion"),
    },
  });

  const sourceSelect = byId("source") as HTMLSelectElement;
  byId("record").addEventListener("click", () => {
    void dashboard.recordToggle(pickSource(sourceSelect.value));
  });
  byId("refresh").addEventListener("click", () => {
    void dashboard.refresh();
  });

  void dashboard.init();
}

window.addEventListener("DOMContentLoaded", start);
