/** Signed horizontal bar layout for per-prediction attributions.
 *
 * Values are on the margin (log-odds) scale — the label is part of the
 * contract so the UI never implies probabilities. Bars sit on a shared zero
 * axis: positive contributions extend right, negative extend left, ordered
 * by absolute value descending.
 */

import type { AttributionEntry } from "./api.js";

export const SCALE_LABEL = "contribution (log-odds)";

export interface Bar {
  feature: string;
  component: string | null;
  value: number;
  side: "left" | "right";
  /** bar length as a fraction (0..1] of the half-width, scaled to max |value| */
  widthFraction: number;
}

export function layoutBars(entries: AttributionEntry[], limit = 10): Bar[] {
  const ordered = [...entries]
    .sort((a, b) => Math.abs(b.value) - Math.abs(a.value) || a.feature.localeCompare(b.feature))
    .slice(0, limit);
  const maxAbs = ordered.reduce((m, e) => Math.max(m, Math.abs(e.value)), 0);
  return ordered.map((e) => ({
    feature: e.feature,
    component: e.component,
    value: e.value,
    side: e.value >= 0 ? "right" : "left",
    widthFraction: maxAbs === 0 ? 0 : Math.abs(e.value) / maxAbs,
  }));
}
