/** Per-window metric trend lines from the persisted backtest series. */

import type { WindowReport } from "./api.js";

export interface Polyline {
  metric: "weighted_recall" | "weighted_fbeta";
  points: Array<{ x: number; y: number }>;
  labels: string[];
}

export function toPolyline(
  windows: WindowReport[],
  metric: "weighted_recall" | "weighted_fbeta",
  width: number,
  height: number,
  pad = 24,
): Polyline {
  const usable = windows.filter((w) => !w.degenerate);
  const n = usable.length;
  const points = usable.map((w, i) => {
    const value = w[metric];
    return {
      x: n <= 1 ? pad : pad + (i * (width - 2 * pad)) / (n - 1),
      // metric values live in [0, 1]; y axis is top-down
      y: height - pad - value * (height - 2 * pad),
    };
  });
  return { metric, points, labels: usable.map((w) => w.window_id) };
}

export function toSvgPoints(line: Polyline): string {
  return line.points.map((p) => `${p.x.toFixed(1)},${p.y.toFixed(1)}`).join(" ");
}
