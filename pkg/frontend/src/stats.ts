// Stats view: absolute trip numbers and mode shares for one user, shaped
// for rendering. Kept free of DOM access so it is easy to test.

import type { UserStats } from "./api.js";

export interface StatsRowView {
  mode: string;
  tripCount: number;
  durationMin: number;
  countShare: number;
  durationShare: number;
  percent: string;
  barWidth: string;
}

export interface StatsView {
  empty: boolean;
  totalTrips: number;
  rows: StatsRowView[];
}

export function statsView(stats: UserStats | null): StatsView {
  if (stats === null || stats.total_trips === 0) {
    return { empty: true, totalTrips: 0, rows: [] };
  }
  const rows = Object.entries(stats.rows).map(([mode, row]) => ({
    mode,
    tripCount: row.trip_count,
    durationMin: row.total_duration_s / 60,
    countShare: row.count_share,
    durationShare: row.duration_share,
    percent: `${(row.count_share * 100).toFixed(1)}%`,
    barWidth: `${(row.count_share * 100).toFixed(1)}%`,
  }));
  // busiest mode first; name breaks ties so the order is stable
  rows.sort((a, b) => b.tripCount - a.tripCount || a.mode.localeCompare(b.mode));
  return { empty: false, totalTrips: stats.total_trips, rows };
}

function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderStats(view: StatsView): string {
  if (view.empty) {
    return '<p class="stats-empty">No trips yet. Record one to see your mode split.</p>';
  }
  const body = view.rows
    .map(
      (row) => `
    <tr>
      <td>${escapeHtml(row.mode)}</td>
      <td class="num">${row.tripCount}</td>
      <td class="num">${row.durationMin.toFixed(1)}</td>
      <td class="num">${row.percent}</td>
      <td><div class="bar" style="width:${row.barWidth}"></div></td>
    </tr>`,
    )
    .join("");
  return `
  <p>${view.totalTrips} trips total</p>
  <table class="stats">
    <thead>
      <tr><th>Mode</th><th>Trips</th><th>Minutes</th><th>Share</th><th></th></tr>
    </thead>
    <tbody>${body}
    </tbody>
  </table>`;
}
