/** Queue view model: rows exactly as served, with client-side what-if
 * threshold exploration. The service's ordering (score descending, ties by
 * change id) is authoritative; the client never re-sorts. What-if flags and
 * counts are recomputed locally with the same `score >= threshold` rule the
 * service applies, so a slider move is instant and must agree with a fresh
 * GET /v1/queue?threshold= recomputation.
 */

import type { QueueItem } from "./api.js";

export interface WhatIfRow extends QueueItem {
  flagged: boolean;
}

export interface WhatIfView {
  rows: WhatIfRow[];
  threshold: number;
  counts: { total: number; flagged: number };
}

/** Same decision rule the service uses: flagged iff score >= threshold. */
export function isFlagged(item: QueueItem, threshold: number): boolean {
  return item.score >= threshold;
}

export function applyThreshold(items: QueueItem[], threshold: number): WhatIfView {
  if (!Number.isInteger(threshold) || threshold < 0 || threshold > 100) {
    throw new RangeError(`threshold must be an integer in 0..100, got ${threshold}`);
  }
  const rows = items.map((item) => ({ ...item, flagged: isFlagged(item, threshold) }));
  return {
    rows,
    threshold,
    counts: { total: rows.length, flagged: rows.filter((r) => r.flagged).length },
  };
}

/** True when the rows are in the service's serving order. */
export function isServiceOrder(items: QueueItem[]): boolean {
  for (let i = 1; i < items.length; i++) {
    const prev = items[i - 1]!;
    const cur = items[i]!;
    if (prev.score < cur.score) return false;
    if (prev.score === cur.score && prev.change_id > cur.change_id) return false;
  }
  return true;
}
