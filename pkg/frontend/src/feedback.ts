/** Optimistic decision state for queue rows.
 *
 * A decision flips the row immediately to "pending"; the POST's
 * acknowledgment (201 with a sequence number) commits it, any rejection
 * (404 unknown change, 409, validation failure) rolls the row back to its
 * previous committed state. All mutation flows through POST /v1/feedback.
 */

import { ApiClient, ApiError, type Decision, type FeedbackBody, type Verdict } from "./api.js";

export const VERDICTS: readonly Verdict[] = ["useful", "not_useful"];
export const DECISIONS: readonly Decision[] = ["approve", "reject", "flag"];

export interface RowDecisionState {
  decision: Decision | null;
  verdict: Verdict | null;
  status: "none" | "pending" | "acknowledged";
  seq: number | null;
}

export const INITIAL_STATE: RowDecisionState = {
  decision: null,
  verdict: null,
  status: "none",
  seq: null,
};

export function buildFeedbackBody(
  changeId: string,
  decision: Decision,
  verdict: Verdict,
  reviewer: string,
): FeedbackBody {
  if (!DECISIONS.includes(decision)) throw new RangeError(`bad decision: ${decision}`);
  if (!VERDICTS.includes(verdict)) throw new RangeError(`bad verdict: ${verdict}`);
  if (!changeId || !reviewer) throw new RangeError("change_id and reviewer are required");
  return { change_id: changeId, verdict, decision, reviewer };
}

export interface SubmitResult {
  state: RowDecisionState;
  error: ApiError | null;
}

/** Optimistically apply a decision, then reconcile with the service.
 * Returns the committed state: acknowledged on 201, the previous state on
 * rejection (with the error attached for the toast).
 */
export async function submitDecision(
  client: ApiClient,
  previous: RowDecisionState,
  body: FeedbackBody,
): Promise<SubmitResult> {
  try {
    const ack = await client.postFeedback(body);
    return {
      state: {
        decision: body.decision,
        verdict: body.verdict,
        status: "acknowledged",
        seq: ack.seq,
      },
      error: null,
    };
  } catch (err) {
    if (err instanceof ApiError) {
      return { state: previous, error: err };
    }
    throw err;
  }
}

/** The transient state shown while the POST is in flight. */
export function pendingState(body: FeedbackBody): RowDecisionState {
  return { decision: body.decision, verdict: body.verdict, status: "pending", seq: null };
}
