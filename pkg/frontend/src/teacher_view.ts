// Teacher console: exam builder form, schedule picker, live submission
// counter while the exam runs, and the results table after grading. The
// console displays API values verbatim; validation verdicts come back from
// the server as inline errors.

import { ApiError } from "./api.js";
import { ExamReport, ExamSpec, QuestionSpec, TeacherApi, TeacherExamView } from "./teacher_api.js";

export class TeacherConsole {
  examId: string | null = null;
  view: TeacherExamView | null = null;
  report: ExamReport | null = null;
  error = "";
  questionCount = 0;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: TeacherApi,
    private readonly pollMs = 2000,
  ) {}

  start() {
    this.renderForm();
  }

  stop() {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Reads the builder form into an exam spec; the server validates it. */
  readSpec(): ExamSpec {
    const field = (name: string) =>
      this.root.querySelector<HTMLInputElement>(`[name="${name}"]`)?.value ?? "";
    const questions: QuestionSpec[] = [];
    for (let i = 0; i < this.questionCount; i++) {
      const choices = field(`q${i}-choices`)
        .split("\n")
        .map((line) => line.trim())
        .filter((line) => line.length > 0);
      questions.push({
        qid: `q${i + 1}`,
        prompt: field(`q${i}-prompt`),
        choices,
        correct_index: Number(field(`q${i}-correct`)),
        points: Number(field(`q${i}-points`) || "1"),
      });
    }
    return {
      title: field("title"),
      group_uri: field("group"),
      open_at_ms: Date.parse(field("open-at")),
      close_at_ms: Date.parse(field("close-at")),
      questions,
    };
  }

  async create(): Promise<void> {
    this.error = "";
    try {
      this.examId = await this.api.createExam(this.readSpec());
      this.renderDashboard();
      void this.refresh();
      this.timer = setInterval(() => void this.refresh(), this.pollMs);
    } catch (err) {
      this.error = err instanceof ApiError ? `${err.code}: ${err.detail}` : String(err);
      this.renderForm(true);
    }
  }

  /** One dashboard poll; drives the counter and, once graded, the report. */
  async refresh(): Promise<void> {
    if (this.examId === null) return;
    try {
      this.view = await this.api.examView(this.examId);
      if (this.view.state === "graded" && this.report === null) {
        this.report = await this.api.report(this.examId);
        this.stop();
      }
    } catch (err) {
      if (!(err instanceof ApiError && err.status === 404)) {
        this.error = err instanceof ApiError ? err.code : String(err);
      }
    }
    this.renderDashboard();
  }

  addQuestion() {
    this.questionCount += 1;
    const editor = this.root.querySelector(".questions");
    if (editor === null) return;
    const i = this.questionCount - 1;
    const block = document.createElement("fieldset");
    block.className = "question";
    block.innerHTML = `
      <legend>Question ${i + 1}</legend>
      <input name="q${i}-prompt" placeholder="prompt">
      <textarea name="q${i}-choices" placeholder="one choice per line"></textarea>
      <label>correct index <input name="q${i}-correct" type="number" value="0"></label>
      <label>points <input name="q${i}-points" type="number" value="1"></label>`;
    editor.appendChild(block);
  }

  renderForm(keepValues = false) {
    if (!keepValues) {
      this.root.innerHTML = `
        <h2>New exam</h2>
        <form class="builder">
          <input name="title" placeholder="title">
          <input name="group" value="sip:cs101@ims.kau.test">
          <label>opens <input name="open-at" type="datetime-local" step="1"></label>
          <label>closes <input name="close-at" type="datetime-local" step="1"></label>
          <div class="questions"></div>
          <button type="button" class="add-question">Add question</button>
          <button type="button" class="create">Create exam</button>
        </form>
        <p class="error"></p>`;
      this.questionCount = 0;
      this.root.querySelector<HTMLButtonElement>(".add-question")
        ?.addEventListener("click", () => this.addQuestion());
      this.root.querySelector<HTMLButtonElement>(".create")
        ?.addEventListener("click", () => void this.create());
    }
    const errorBox = this.root.querySelector(".error");
    if (errorBox !== null) {
      errorBox.textContent = this.error;
    }
  }

  renderDashboard() {
    if (this.report !== null) {
      const rows = this.report.results
        .map(
          (r) => `<tr><td>${r.student}</td>
            <td class="row-score">${r.score}</td><td>${r.max_score}</td></tr>`,
        )
        .join("");
      this.root.innerHTML = `
        <h2>Exam ${this.examId} — results</h2>
        <p class="summary">
          submitted <span class="submitted">${this.report.submitted}</span>
          of <span class="members">${this.report.members}</span>,
          mean <span class="mean-score">${this.report.mean_score}</span>
          / <span class="max-score">${this.report.max_score}</span></p>
        <table class="results"><tr><th>student</th><th>score</th><th>max</th></tr>${rows}</table>`;
      return;
    }
    const state = this.view?.state ?? "…";
    const counter = this.view?.submitted_count ?? 0;
    this.root.innerHTML = `
      <h2>Exam ${this.examId}</h2>
      <p>state: <span class="state">${state}</span></p>
      <p>submissions so far: <span class="counter">${counter}</span></p>
      <p class="error">${this.error}</p>`;
  }
}
