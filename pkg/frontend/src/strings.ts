/** All annotator-facing wording lives here. */

export const STAGE1_TITLE = "Stage 1: Appropriateness and Verifiability";
export const STAGE2_TITLE = "Stage 2: Factual Consistency and Hallucination";

export const APPROPRIATENESS_QUESTION =
  "Appropriateness: how relevant is the response to the dialog context?";
export const VERIFIABILITY_QUESTION =
  "Verifiability: to what degree does the response need to be verified?";
export const LIKERT_LOW = "1 (lowest)";
export const LIKERT_HIGH = "5 (highest)";

export const CONSISTENCY_QUESTION =
  "Is the response generated factually accurate with regards to the input knowledge?";
export const CONSISTENCY_CHOICES: ReadonlyArray<[number, string]> = [
  [0, "factually incorrect (0)"],
  [0.5, "partially correct (0.5)"],
  [1, "completely correct (1)"],
];

export const HALLUCINATION_QUESTION =
  "Is the response generated making up more information than what is provided " +
  "in the conversational context and input knowledge?";

export const NO_TASKS_REMAINING = "No tasks remaining. Thank you!";
export const SUBMIT_LABEL = "Submit judgment";
export const RETRY_LABEL = "Retry";
export const KNOWLEDGE_HEADING = "Knowledge";
export const RESPONSE_HEADING = "Response";
export const DIALOG_HEADING = "Dialog";
