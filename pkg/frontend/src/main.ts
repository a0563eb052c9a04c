import { ApiError, fetchNextTask, submitJudgment } from "./api.js";
import { render } from "./render.js";
import {
  initialState,
  judgmentBody,
  setField,
  withNetworkError,
  withServerRejection,
  withTask,
} from "./state.js";
import type { FormValues, Stage, ViewState } from "./types.js";

/**
 * One annotator session: fetch a task, collect the form, submit, advance.
 * The server resolves races; a 409/422 is shown without losing form state.
 */
export class AnnotationSession {
  state: ViewState;

  constructor(
    private root: HTMLElement,
    private base: string,
    annotatorId: string,
    stage: Stage,
  ) {
    this.state = initialState(annotatorId, stage);
  }

  private repaint(): void {
    render(this.root, this.state, {
      onSelect: (field: keyof FormValues, value: number | string) => {
        this.state = setField(this.state, field, value);
        this.repaint();
      },
      onSubmit: () => {
        void this.submit();
      },
      onRetry: () => {
        void this.next();
      },
    });
  }

  async next(): Promise<void> {
    try {
      const task = await fetchNextTask(this.base, this.state.annotatorId,
        this.state.stage);
      this.state = withTask(this.state, task);
    } catch (err) {
      this.state = withNetworkError(this.state, describe(err));
    }
    this.repaint();
  }

  async submit(): Promise<void> {
    if (this.state.screen.kind !== "task") return;
    const { task, form } = this.state.screen;
    try {
      await submitJudgment(this.base, judgmentBody(task, form));
      await this.next();
      return;
    } catch (err) {
      if (err instanceof ApiError) {
        this.state = withServerRejection(this.state, describe(err));
      } else {
        this.state = withNetworkError(this.state, describe(err));
      }
    }
    this.repaint();
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `Rejected (${err.status}): ${err.message}`;
  if (err instanceof Error) return `Network problem: ${err.message}`;
  return "Network problem";
}

function param(name: string, fallback: string): string {
  const params = new URLSearchParams(window.location.search);
  return params.get(name) ?? fallback;
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const base = param("server", window.location.origin);
  const annotator = param("annotator", "");
  const stage = (Number(param("stage", "1")) === 2 ? 2 : 1) as Stage;
  if (!annotator) {
    root.textContent = "Add ?annotator=<your id> (and optional &stage=2, " +
      "&server=<base url>) to the address to begin.";
    return;
  }
  const session = new AnnotationSession(root, base, annotator, stage);
  void session.next();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
