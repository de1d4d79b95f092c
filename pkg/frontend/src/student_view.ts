// Student client: polls for an active exam, renders one question at a time,
// submits the chosen answers, then shows the grade once results publish.
// Every number on screen is taken verbatim from an API response.

import { ApiClient, ApiError, ExamView, ResultView } from "./api.js";

export type StudentPhase = "waiting" | "answering" | "submitted" | "result" | "blocked";

export class StudentClient {
  phase: StudentPhase = "waiting";
  exam: ExamView | null = null;
  answers: Record<string, number> = {};
  questionIndex = 0;
  notice = "";
  result: ResultView | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly identity: string,
    private readonly pollMs = 2000,
  ) {}

  start() {
    this.render();
    void this.refresh();
    this.timer = setInterval(() => void this.refresh(), this.pollMs);
  }

  stop() {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** One poll step; safe to call directly from tests. */
  async refresh(): Promise<void> {
    try {
      if (this.phase === "waiting") {
        const active = await this.api.activeExams(this.identity);
        const open = active.exams[0];
        if (open !== undefined) {
          this.exam = open;
          if (open.already_submitted) {
            this.phase = "submitted";
            this.notice = "Submission already recorded.";
          } else {
            this.phase = "answering";
          }
        }
      } else if (this.phase === "submitted" && this.exam !== null) {
        const result = await this.api.myResult(this.exam.exam_id, this.identity);
        this.result = result;
        this.phase = "result";
        this.stop();
      }
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 404)) {
        this.notice = err instanceof ApiError ? err.code : String(err);
      }
    }
    this.render();
  }

  choose(qid: string, index: number) {
    this.answers[qid] = index;
    this.render();
  }

  move(delta: number) {
    if (this.exam === null) return;
    const last = this.exam.questions.length - 1;
    this.questionIndex = Math.min(Math.max(this.questionIndex + delta, 0), last);
    this.render();
  }

  async submit(): Promise<void> {
    if (this.exam === null) return;
    try {
      await this.api.submit(this.exam.exam_id, this.identity, this.answers);
      this.phase = "submitted";
      this.notice = "Submitted. Waiting for results.";
    } catch (err) {
      if (err instanceof ApiError && err.code === "DuplicateSubmission") {
        this.phase = "blocked";
        this.notice = "DuplicateSubmission: this exam was already submitted.";
      } else if (err instanceof ApiError && err.code === "ExamNotOpen") {
        this.phase = "blocked";
        this.notice = "ExamNotOpen: the submission window has closed.";
      } else {
        this.notice = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
      }
    }
    this.render();
  }

  render() {
    const exam = this.exam;
    if (this.phase === "waiting" || exam === null) {
      this.root.innerHTML = `<p class="waiting">Waiting for an exam to open…</p>
        <p class="notice">${escapeHtml(this.notice)}</p>`;
      return;
    }
    if (this.phase === "result" && this.result !== null) {
      const rows = Object.entries(this.result.per_question)
        .map(([qid, verdict]) => `<tr><td>${escapeHtml(qid)}</td><td class="verdict">${escapeHtml(verdict)}</td></tr>`)
        .join("");
      this.root.innerHTML = `
        <h2>${escapeHtml(exam.title)}</h2>
        <p class="score">Score: <span class="score-value">${this.result.score}</span> /
           <span class="max-score">${this.result.max_score}</span></p>
        <table class="per-question">${rows}</table>`;
      return;
    }
    if (this.phase === "submitted" || this.phase === "blocked") {
      this.root.innerHTML = `
        <h2>${escapeHtml(exam.title)}</h2>
        <p class="notice">${escapeHtml(this.notice)}</p>
        <button class="submit" disabled>Submit</button>`;
      return;
    }
    const question = exam.questions[this.questionIndex];
    const chosen = this.answers[question.qid];
    const choices = question.choices
      .map(
        (choice, i) =>
          `<button class="choice${i === chosen ? " chosen" : ""}" data-index="${i}">
             ${escapeHtml(choice)}</button>`,
      )
      .join("");
    const answered = Object.keys(this.answers).length;
    this.root.innerHTML = `
      <h2>${escapeHtml(exam.title)}</h2>
      <p class="progress">Question <span class="q-number">${this.questionIndex + 1}</span>
         of <span class="q-total">${exam.questions.length}</span>
         (answered: <span class="answered">${answered}</span>)</p>
      <p class="prompt">${escapeHtml(question.prompt)}</p>
      <div class="choices">${choices}</div>
      <nav>
        <button class="prev">Back</button>
        <button class="next">Next</button>
        <button class="submit">Submit</button>
      </nav>
      <p class="notice">${escapeHtml(this.notice)}</p>`;
    this.root.querySelectorAll<HTMLButtonElement>(".choice").forEach((button) => {
      button.addEventListener("click", () => this.choose(question.qid, Number(button.dataset.index)));
    });
    this.root.querySelector<HTMLButtonElement>(".prev")?.addEventListener("click", () => this.move(-1));
    this.root.querySelector<HTMLButtonElement>(".next")?.addEventListener("click", () => this.move(1));
    this.root.querySelector<HTMLButtonElement>(".submit")?.addEventListener("click", () => void this.submit());
  }
}

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}
