import * as strings from "./strings.js";
import { LIKERT_SCALE, isComplete } from "./state.js";
import type { FormValues, Screen, TaskAssignment, ViewState } from "./types.js";

export interface Handlers {
  onSelect(field: keyof FormValues, value: number | string): void;
  onSubmit(): void;
  onRetry(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function radioRow(
  doc: Document,
  name: string,
  question: string,
  choices: ReadonlyArray<[number | string, string]>,
  selected: number | string | null,
  onSelect: (value: number | string) => void,
): HTMLElement {
  const row = el(doc, "fieldset", "question");
  row.appendChild(el(doc, "legend", "question-text", question));
  for (const [value, label] of choices) {
    const wrap = el(doc, "label", "choice");
    const input = doc.createElement("input");
    input.type = "radio";
    input.name = name;
    input.value = String(value);
    input.checked = selected !== null && String(selected) === String(value);
    input.addEventListener("change", () => onSelect(value));
    wrap.appendChild(input);
    wrap.appendChild(doc.createTextNode(" " + label));
    row.appendChild(wrap);
  }
  return row;
}

function dialogPanel(doc: Document, task: TaskAssignment): HTMLElement {
  const panel = el(doc, "section", "dialog-panel");
  panel.appendChild(el(doc, "h2", "heading", strings.DIALOG_HEADING));
  task.payload.context.forEach((utterance, i) => {
    const turn = el(doc, "p", "turn");
    const speaker = i % 2 === 0 ? "Speaker 1" : "Speaker 2";
    turn.appendChild(el(doc, "strong", "speaker", speaker + ": "));
    turn.appendChild(doc.createTextNode(utterance));
    panel.appendChild(turn);
  });
  const response = el(doc, "section", "response-panel");
  response.appendChild(el(doc, "h2", "heading", strings.RESPONSE_HEADING));
  response.appendChild(el(doc, "p", "response-text", task.payload.response));
  panel.appendChild(response);
  return panel;
}

function knowledgePanel(doc: Document, task: TaskAssignment): HTMLElement | null {
  if (task.stage !== 2 || task.payload.knowledge === undefined) return null;
  const panel = el(doc, "section", "knowledge-panel");
  panel.appendChild(el(doc, "h2", "heading", strings.KNOWLEDGE_HEADING));
  panel.appendChild(el(doc, "p", "knowledge-text", task.payload.knowledge));
  return panel;
}

function formPanel(
  doc: Document,
  task: TaskAssignment,
  form: FormValues,
  error: string | null,
  handlers: Handlers,
): HTMLElement {
  const panel = el(doc, "section", "form-panel");
  const likert: ReadonlyArray<[number | string, string]> = LIKERT_SCALE.map(
    (v) => [v, v === 1 ? strings.LIKERT_LOW : v === 5 ? strings.LIKERT_HIGH : String(v)],
  );
  if (task.stage === 1) {
    panel.appendChild(radioRow(doc, "appropriateness",
      strings.APPROPRIATENESS_QUESTION, likert, form.appropriateness,
      (v) => handlers.onSelect("appropriateness", v)));
    panel.appendChild(radioRow(doc, "verifiability",
      strings.VERIFIABILITY_QUESTION, likert, form.verifiability,
      (v) => handlers.onSelect("verifiability", v)));
  } else {
    panel.appendChild(radioRow(doc, "consistency", strings.CONSISTENCY_QUESTION,
      strings.CONSISTENCY_CHOICES.map(([v, label]) => [v, label] as [number, string]),
      form.consistency, (v) => handlers.onSelect("consistency", v)));
    panel.appendChild(radioRow(doc, "hallucination", strings.HALLUCINATION_QUESTION,
      [["yes", "Yes"], ["no", "No"]], form.hallucination,
      (v) => handlers.onSelect("hallucination", v)));
  }
  if (error !== null) {
    panel.appendChild(el(doc, "p", "server-error", error));
  }
  const submit = doc.createElement("button");
  submit.className = "submit";
  submit.textContent = strings.SUBMIT_LABEL;
  submit.disabled = !isComplete(task.stage, form);
  submit.addEventListener("click", () => {
    if (!submit.disabled) handlers.onSubmit();
  });
  panel.appendChild(submit);
  return panel;
}

function screenNode(doc: Document, screen: Screen, handlers: Handlers): HTMLElement {
  switch (screen.kind) {
    case "loading":
      return el(doc, "p", "loading", "Loading…");
    case "done":
      return el(doc, "p", "done", strings.NO_TASKS_REMAINING);
    case "network-error": {
      const panel = el(doc, "section", "network-error");
      panel.appendChild(el(doc, "p", "error-text", screen.message));
      const retry = doc.createElement("button");
      retry.className = "retry";
      retry.textContent = strings.RETRY_LABEL;
      retry.addEventListener("click", () => handlers.onRetry());
      panel.appendChild(retry);
      return panel;
    }
    case "task": {
      const panel = el(doc, "section", "task");
      panel.appendChild(el(doc, "h1", "title",
        screen.task.stage === 1 ? strings.STAGE1_TITLE : strings.STAGE2_TITLE));
      panel.appendChild(dialogPanel(doc, screen.task));
      const knowledge = knowledgePanel(doc, screen.task);
      if (knowledge) panel.appendChild(knowledge);
      panel.appendChild(formPanel(doc, screen.task, screen.form, screen.error,
        handlers));
      return panel;
    }
  }
}

/** Replace the root's contents with the rendering of the current state. */
export function render(root: HTMLElement, state: ViewState, handlers: Handlers): void {
  const doc = root.ownerDocument;
  root.textContent = "";
  root.appendChild(screenNode(doc, state.screen, handlers));
}
