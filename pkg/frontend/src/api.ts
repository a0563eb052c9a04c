import type { JudgmentBody, Stage, TaskAssignment } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export interface SubmitResult {
  status: number;
  outcome: "created" | "duplicate";
}

/** GET /api/tasks/next; null when the queue is exhausted (204). */
export async function fetchNextTask(
  base: string,
  annotatorId: string,
  stage: Stage,
): Promise<TaskAssignment | null> {
  const url = `${base}/api/tasks/next?annotator=${encodeURIComponent(annotatorId)}&stage=${stage}`;
  const resp = await fetch(url);
  if (resp.status === 204) return null;
  if (!resp.ok) throw new ApiError(resp.status, await errorText(resp));
  return (await resp.json()) as TaskAssignment;
}

/** POST /api/judgments; 409/422 raise ApiError carrying the server's reason. */
export async function submitJudgment(
  base: string,
  body: JudgmentBody,
): Promise<SubmitResult> {
  const resp = await fetch(`${base}/api/judgments`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (resp.status === 201) return { status: 201, outcome: "created" };
  if (resp.status === 200) return { status: 200, outcome: "duplicate" };
  throw new ApiError(resp.status, await errorText(resp));
}

export async function fetchStats(base: string): Promise<Record<string, unknown>> {
  const resp = await fetch(`${base}/api/stats`);
  if (!resp.ok) throw new ApiError(resp.status, await errorText(resp));
  return (await resp.json()) as Record<string, unknown>;
}

async function errorText(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    if (body && typeof body.error === "string") return body.error;
  } catch {
    // fall through to the generic message
  }
  return `server returned HTTP ${resp.status}`;
}
