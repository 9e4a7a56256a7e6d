// Where recorded points come from. The dashboard has no real sensors, so a
// recording session is driven either by replaying a canned trace or by a
// seeded random walk.

import type { ActivityKind, WirePoint } from "./api.js";

export interface PointSource {
  /** Short human-readable name shown next to the record button. */
  label: string;
  /** Next point, or null when the source is exhausted. */
  next(): WirePoint | null;
}

export class ReplaySource implements PointSource {
  label: string;
  private points: WirePoint[];
  private cursor = 0;

  constructor(label: string, points: WirePoint[]) {
    this.label = label;
    this.points = points;
  }

  next(): WirePoint | null {
    if (this.cursor >= this.points.length) return null;
    return this.points[this.cursor++];
  }
}

// mulberry32: small deterministic PRNG, good enough for a demo walk.
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function isoSeconds(ms: number): string {
  return new Date(Math.floor(ms / 1000) * 1000).toISOString().replace(".000Z", "Z");
}

const METERS_PER_DEG_LAT = 111320;

/**
 * Simulated pedestrian wandering away from a start position. Heading drifts
 * a little every step; speed stays near walking pace. Same seed, same walk.
 */
export class RandomWalkSource implements PointSource {
  label = "simulated walk";
  private rng: () => number;
  private lat: number;
  private lon: number;
  private heading: number;
  private t: number;
  private remaining: number;
  private stepSeconds: number;

  constructor(opts: {
    seed: number;
    lat: number;
    lon: number;
    startTime: string;
    steps?: number;
    stepSeconds?: number;
  }) {
    this.rng = mulberry32(opts.seed);
    this.lat = opts.lat;
    this.lon = opts.lon;
    this.heading = this.rng() * 2 * Math.PI;
    this.t = Date.parse(opts.startTime);
    this.remaining = opts.steps ?? 120;
    this.stepSeconds = opts.stepSeconds ?? 5;
  }

  next(): WirePoint | null {
    if (this.remaining <= 0) return null;
    this.remaining -= 1;
    const point: WirePoint = {
      t: isoSeconds(this.t),
      lat: this.lat,
      lon: this.lon,
      accuracy_m: 8 + this.rng() * 6,
      kind: "OnFoot" as ActivityKind,
      confidence: 0.9,
      speed_mps: 0,
    };
    const speed = 1.2 + this.rng() * 0.5;
    point.speed_mps = speed;
    this.heading += (this.rng() - 0.5) * 0.6;
    const meters = speed * this.stepSeconds;
    this.lat += (meters * Math.cos(this.heading)) / METERS_PER_DEG_LAT;
    this.lon +=
      (meters * Math.sin(this.heading)) /
      (METERS_PER_DEG_LAT * Math.cos((this.lat * Math.PI) / 180));
    this.t += this.stepSeconds * 1000;
    return point;
  }
}

/**
 * Canned bicycle ride: 90 points at 5 s cadence heading steadily north at
 * about 4.2 m/s, with a gentle wobble so the track is not a perfect line.
 */
export function bicycleFixture(): WirePoint[] {
  const start = Date.parse("2025-03-03T12:00:00Z");
  const lat0 = 52.365;
  const lon0 = 9.74;
  const speed = 4.2;
  const step = 5;
  const points: WirePoint[] = [];
  for (let i = 0; i < 90; i++) {
    points.push({
      t: isoSeconds(start + i * step * 1000),
      lat: lat0 + (i * speed * step) / METERS_PER_DEG_LAT,
      lon: lon0 + Math.sin(i / 7) * 0.00004,
      accuracy_m: 6,
      kind: "OnBicycle",
      confidence: 0.95,
      speed_mps: speed,
    });
  }
  return points;
}
