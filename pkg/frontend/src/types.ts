export type Stage = 1 | 2;

export interface TaskPayload {
  id: string;
  context: string[];
  response: string;
  /** Present on stage-2 assignments only; stage 1 never sees it. */
  knowledge?: string;
}

export interface TaskAssignment {
  item_id: string;
  stage: Stage;
  annotator_id: string;
  payload: TaskPayload;
}

export type Hallucination = "yes" | "no";

/** Form values mirror the judgment record; null means "not yet chosen". */
export interface FormValues {
  appropriateness: number | null;
  verifiability: number | null;
  consistency: number | null;
  hallucination: Hallucination | null;
}

export interface JudgmentBody {
  item_id: string;
  annotator_id: string;
  stage: Stage;
  appropriateness?: number;
  verifiability?: number;
  consistency?: number;
  hallucination?: Hallucination;
}

export type Screen =
  | { kind: "loading" }
  | { kind: "task"; task: TaskAssignment; form: FormValues; error: string | null }
  | { kind: "done" }
  | { kind: "network-error"; message: string };

export interface ViewState {
  annotatorId: string;
  stage: Stage;
  screen: Screen;
}
