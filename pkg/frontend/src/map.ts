// Map view helpers. Trip geometry arrives as GeoJSON with (lon, lat)
// positions; everything here works in (lat, lon) like the rest of the UI.

import type { CongestionEntry, CongestionLevel, TripCollection } from "./api.js";

export const MODE_COLORS: { [mode: string]: string } = {
  Walk: "#8e6e53",
  Bicycle: "#2d7d46",
  Car: "#b0413e",
  Tram: "#3c6fb0",
  Bus: "#a06cb5",
  Unknown: "#777777",
};

export const CONGESTION_COLORS: { [level in CongestionLevel]: string } = {
  Heavy: "red",
  Medium: "yellow",
  Low: "green",
};

export interface TripPolyline {
  tripId: string;
  segmentId: string;
  mode: string;
  color: string;
  path: [number, number][];
}

export interface CongestionView {
  segmentId: string;
  level: CongestionLevel;
  color: string;
  speedRatio: number;
  intervalStart: string;
}

export function tripPolylines(collection: TripCollection): TripPolyline[] {
  return collection.features
    .filter((f) => f.geometry.type === "LineString")
    .map((f) => {
      const mode = String(f.properties.mode ?? "Unknown");
      return {
        tripId: String(f.properties.trip_id ?? ""),
        segmentId: String(f.properties.segment_id ?? ""),
        mode,
        color: MODE_COLORS[mode] ?? MODE_COLORS.Unknown,
        path: f.geometry.coordinates.map(([lon, lat]) => [lat, lon] as [number, number]),
      };
    });
}

export function congestionViews(entries: CongestionEntry[]): CongestionView[] {
  return entries.map((entry) => ({
    segmentId: entry.segment_id,
    level: entry.level,
    color: CONGESTION_COLORS[entry.level],
    speedRatio: entry.speed_ratio,
    intervalStart: entry.interval_start,
  }));
}

/**
 * Render polylines into a self-contained SVG string. Equirectangular fit of
 * the bounding box into the viewport; good enough at city scale.
 */
export function renderMapSvg(
  lines: TripPolyline[],
  width = 640,
  height = 480,
): string {
  if (lines.length === 0) {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"><text x="12" y="24">no trips to draw</text></svg>`;
  }
  let minLat = Infinity;
  let maxLat = -Infinity;
  let minLon = Infinity;
  let maxLon = -Infinity;
  for (const line of lines) {
    for (const [lat, lon] of line.path) {
      if (lat < minLat) minLat = lat;
      if (lat > maxLat) maxLat = lat;
      if (lon < minLon) minLon = lon;
      if (lon > maxLon) maxLon = lon;
    }
  }
  const latSpan = Math.max(maxLat - minLat, 1e-6);
  const lonSpan = Math.max(maxLon - minLon, 1e-6);
  const pad = 16;
  const sx = (width - 2 * pad) / lonSpan;
  const sy = (height - 2 * pad) / latSpan;
  const toX = (lon: number) => pad + (lon - minLon) * sx;
  const toY = (lat: number) => height - pad - (lat - minLat) * sy;
  const shapes = lines
    .map((line) => {
      const points = line.path
        .map(([lat, lon]) => `${toX(lon).toFixed(1)},${toY(lat).toFixed(1)}`)
        .join(" ");
      return `<polyline fill="none" stroke="${line.color}" stroke-width="3" data-trip="${line.tripId}" data-mode="${line.mode}" points="${points}"/>`;
    })
    .join("");
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">${shapes}</svg>`;
}
