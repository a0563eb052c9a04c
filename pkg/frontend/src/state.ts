import type {
  FormValues,
  JudgmentBody,
  Screen,
  Stage,
  TaskAssignment,
  ViewState,
} from "./types.js";

export const LIKERT_SCALE = [1, 2, 3, 4, 5] as const;
export const CONSISTENCY_VALUES = [0, 0.5, 1] as const;

export function emptyForm(): FormValues {
  return {
    appropriateness: null,
    verifiability: null,
    consistency: null,
    hallucination: null,
  };
}

export function initialState(annotatorId: string, stage: Stage): ViewState {
  return { annotatorId, stage, screen: { kind: "loading" } };
}

export function withTask(state: ViewState, task: TaskAssignment | null): ViewState {
  const screen: Screen = task === null
    ? { kind: "done" }
    : { kind: "task", task, form: emptyForm(), error: null };
  return { ...state, screen };
}

export function withNetworkError(state: ViewState, message: string): ViewState {
  return { ...state, screen: { kind: "network-error", message } };
}

/** Radio-group updates; values outside the fixed domains are ignored. */
export function setField(
  state: ViewState,
  field: keyof FormValues,
  value: number | string,
): ViewState {
  if (state.screen.kind !== "task") return state;
  const form = { ...state.screen.form };
  switch (field) {
    case "appropriateness":
    case "verifiability":
      if (!LIKERT_SCALE.includes(value as 1)) return state;
      form[field] = value as number;
      break;
    case "consistency":
      if (!CONSISTENCY_VALUES.includes(value as 0)) return state;
      form.consistency = value as number;
      break;
    case "hallucination":
      if (value !== "yes" && value !== "no") return state;
      form.hallucination = value;
      break;
  }
  return { ...state, screen: { ...state.screen, form, error: null } };
}

export function withServerRejection(state: ViewState, message: string): ViewState {
  if (state.screen.kind !== "task") return state;
  // form values survive a 409/422 so nothing the annotator chose is lost
  return { ...state, screen: { ...state.screen, error: message } };
}

/** Submit stays disabled until every field the stage requires is chosen. */
export function isComplete(stage: Stage, form: FormValues): boolean {
  if (stage === 1) {
    return form.appropriateness !== null && form.verifiability !== null;
  }
  return form.consistency !== null && form.hallucination !== null;
}

export function judgmentBody(task: TaskAssignment, form: FormValues): JudgmentBody {
  const body: JudgmentBody = {
    item_id: task.item_id,
    annotator_id: task.annotator_id,
    stage: task.stage,
  };
  if (task.stage === 1) {
    if (form.appropriateness === null || form.verifiability === null) {
      throw new Error("stage-1 form incomplete");
    }
    body.appropriateness = form.appropriateness;
    body.verifiability = form.verifiability;
  } else {
    if (form.consistency === null || form.hallucination === null) {
      throw new Error("stage-2 form incomplete");
    }
    body.consistency = form.consistency;
    body.hallucination = form.hallucination;
  }
  return body;
}
