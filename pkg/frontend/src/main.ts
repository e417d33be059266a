/** Dashboard wiring: review queue with what-if threshold slider, per-change
 * attribution bars, decision buttons with optimistic rollback, and the
 * per-window metric trend view. All data flows through the /v1 API client;
 * browsing never mutates server state.
 */

import { ApiClient, type QueueItem, type ScoreResponse } from "./api.js";
import { layoutBars, SCALE_LABEL } from "./attribution.js";
import {
  buildFeedbackBody,
  INITIAL_STATE,
  pendingState,
  submitDecision,
  type RowDecisionState,
} from "./feedback.js";
import { applyThreshold } from "./queue.js";
import { toPolyline, toSvgPoints } from "./trends.js";

const client = new ApiClient("");
const decisionStates = new Map<string, RowDecisionState>();
let servedItems: QueueItem[] = [];
let activeThreshold = 50;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.hidden = message === null;
}

function renderQueue(): void {
  const view = applyThreshold(servedItems, activeThreshold);
  el<HTMLSpanElement>("threshold-value").textContent = String(view.threshold);
  el<HTMLSpanElement>("counts").textContent =
    `${view.counts.flagged} flagged of ${view.counts.total}`;

  const tbody = el<HTMLTableSectionElement>("queue-body");
  tbody.replaceChildren();
  for (const row of view.rows) {
    const tr = document.createElement("tr");
    tr.className = row.flagged ? "flagged" : "";
    const state = decisionStates.get(row.change_id) ?? INITIAL_STATE;
    tr.innerHTML = `
      <td class="mono">${row.change_id}</td>
      <td class="num">${row.score}</td>
      <td><span class="band band-${row.band}">${row.band}</span></td>
      <td>${row.flagged ? "yes" : "no"}</td>
      <td class="decision">${state.status === "acknowledged"
        ? `${state.decision} (#${state.seq})`
        : state.status === "pending" ? `${state.decision}…` : "—"}</td>
      <td class="actions"></td>`;
    const actions = tr.querySelector(".actions")!;
    for (const decision of ["approve", "reject", "flag"] as const) {
      const btn = document.createElement("button");
      btn.textContent = decision;
      btn.addEventListener("click", () => void decide(row.change_id, decision));
      actions.appendChild(btn);
    }
    tr.addEventListener("click", (ev) => {
      if (!(ev.target instanceof HTMLButtonElement)) void explain(row.change_id);
    });
    tbody.appendChild(tr);
  }
}

async function decide(changeId: string, decision: "approve" | "reject" | "flag"): Promise<void> {
  const verdictInput = document.querySelector<HTMLInputElement>(
    'input[name="verdict"]:checked',
  );
  const verdict = verdictInput?.value === "not_useful" ? "not_useful" : "useful";
  const reviewer = el<HTMLInputElement>("reviewer").value || "reviewer";
  const previous = decisionStates.get(changeId) ?? INITIAL_STATE;
  const body = buildFeedbackBody(changeId, decision, verdict, reviewer);
  decisionStates.set(changeId, pendingState(body));
  renderQueue();
  const result = await submitDecision(client, previous, body);
  decisionStates.set(changeId, result.state);
  if (result.error) {
    showBanner(`feedback rejected: ${result.error.code} — ${result.error.message}`);
  }
  renderQueue();
}

async function explain(changeId: string): Promise<void> {
  const raw = el<HTMLTextAreaElement>("change-json").value.trim();
  let payload: Record<string, unknown> | null = null;
  if (raw) {
    try {
      payload = JSON.parse(raw) as Record<string, unknown>;
    } catch {
      showBanner("change JSON is not valid JSON");
      return;
    }
  }
  if (!payload || payload["id"] !== changeId) return; // explanation needs the full ticket
  let scored: ScoreResponse;
  try {
    scored = await client.score(payload);
  } catch (err) {
    showBanner(`scoring failed: ${String(err)}`);
    return;
  }
  renderAttribution(scored);
}

function renderAttribution(scored: ScoreResponse): void {
  el<HTMLSpanElement>("attr-title").textContent =
    `${scored.change_id} — score ${scored.score} (${scored.band}), base ${scored.base_value.toFixed(3)}`;
  el<HTMLSpanElement>("attr-scale").textContent = SCALE_LABEL;
  const list = el<HTMLDivElement>("attr-bars");
  list.replaceChildren();
  for (const bar of layoutBars(scored.top_attributions)) {
    const row = document.createElement("div");
    row.className = "bar-row";
    const width = (bar.widthFraction * 50).toFixed(1);
    row.innerHTML = `
      <span class="bar-label">${bar.feature}${bar.component ? ` (${bar.component})` : ""}</span>
      <span class="bar-track">
        <span class="bar bar-${bar.side}" style="width:${width}%"></span>
      </span>
      <span class="bar-value num">${bar.value >= 0 ? "+" : ""}${bar.value.toFixed(3)}</span>`;
    list.appendChild(row);
  }
}

async function renderTrends(): Promise<void> {
  const { windows } = await client.getWindows();
  const svg = el<HTMLElement>("trend-svg");
  const width = 640;
  const height = 200;
  const lines = (["weighted_recall", "weighted_fbeta"] as const).map((metric) =>
    toPolyline(windows, metric, width, height),
  );
  svg.innerHTML =
    `<line x1="24" y1="${height - 24}" x2="${width - 24}" y2="${height - 24}" stroke="#888"/>` +
    lines
      .map(
        (line, i) =>
          `<polyline fill="none" stroke="${i === 0 ? "#1f77b4" : "#ff7f0e"}" ` +
          `stroke-width="2" points="${toSvgPoints(line)}"/>`,
      )
      .join("");
}

async function refresh(): Promise<void> {
  const start = el<HTMLInputElement>("window-start").value || "2023-01-01";
  const end = el<HTMLInputElement>("window-end").value || "2024-01-01";
  try {
    const queue = await client.getQueue(start, end);
    servedItems = queue.items;
    if (queue.threshold !== null) activeThreshold = queue.threshold;
    el<HTMLInputElement>("threshold-slider").value = String(activeThreshold);
    showBanner(null);
  } catch (err) {
    showBanner(`service unreachable or window invalid — read-only view (${String(err)})`);
  }
  renderQueue();
  void renderTrends().catch(() => undefined);
}

export function init(): void {
  el<HTMLInputElement>("threshold-slider").addEventListener("input", (ev) => {
    activeThreshold = Number((ev.target as HTMLInputElement).value);
    renderQueue();
  });
  el<HTMLButtonElement>("refresh").addEventListener("click", () => void refresh());
  void refresh();
}

if (typeof document !== "undefined" && document.getElementById("queue-body")) {
  init();
}
