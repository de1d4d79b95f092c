// Typed client for the exam service HTTP API. This module covers login and
// the student-facing endpoints; teacher-only calls live in teacher_api.ts so
// the student page never imports them.

export type Role = "teacher" | "student";

export interface Session {
  token: string;
  role: Role;
  identity: string;
}

export interface QuestionView {
  qid: string;
  prompt: string;
  choices: string[];
}

export interface ExamView {
  exam_id: string;
  title: string;
  close_at_ms: number;
  questions: QuestionView[];
  state?: string;
  already_submitted?: boolean;
}

export interface ActiveExams {
  now_ms: number;
  exams: ExamView[];
}

export interface SubmissionAck {
  accepted: boolean;
  submitted_at_ms: number;
}

export interface ResultView {
  kind: "result";
  exam_id: string;
  student: string;
  score: number;
  max_score: number;
  per_question: Record<string, string>;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(`${status} ${code}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  token: string | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token !== null) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiError(
        response.status,
        typeof payload.error === "string" ? payload.error : "Unknown",
        typeof payload.detail === "string" ? payload.detail : "",
      );
    }
    return payload as T;
  }

  get<T>(path: string): Promise<T> {
    return this.request<T>("GET", path);
  }

  post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>("POST", path, body);
  }

  async login(user: string, passkey: string): Promise<Session> {
    const session = await this.post<Session>("/api/login", { user, passkey });
    this.token = session.token;
    return session;
  }

  activeExams(student: string): Promise<ActiveExams> {
    return this.get<ActiveExams>(`/api/exams/active?student=${encodeURIComponent(student)}`);
  }

  getExam(examId: string): Promise<ExamView> {
    return this.get<ExamView>(`/api/exams/${encodeURIComponent(examId)}`);
  }

  submit(examId: string, student: string, answers: Record<string, number>): Promise<SubmissionAck> {
    return this.post<SubmissionAck>(`/api/exams/${encodeURIComponent(examId)}/submissions`, {
      student,
      answers,
    });
  }

  myResult(examId: string, student: string): Promise<ResultView> {
    return this.get<ResultView>(
      `/api/exams/${encodeURIComponent(examId)}/results?student=${encodeURIComponent(student)}`,
    );
  }
}
