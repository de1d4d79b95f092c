// Teacher-only endpoints, kept out of api.ts so the student page's import
// graph contains no path to them.

import { ApiClient, ResultView } from "./api.js";

export interface QuestionSpec {
  qid: string;
  prompt: string;
  choices: string[];
  correct_index: number;
  points: number;
}

export interface ExamSpec {
  title: string;
  group_uri: string;
  open_at_ms: number;
  close_at_ms: number;
  questions: QuestionSpec[];
}

export interface TeacherExamView {
  exam_id: string;
  title: string;
  state: string;
  open_at_ms: number;
  close_at_ms: number;
  group_uri: string;
  submitted_count: number;
  questions: QuestionSpec[];
}

export interface ExamReport {
  kind: "summary";
  exam_id: string;
  submitted: number;
  members: number;
  mean_score: number;
  max_score: number;
  results: ResultView[];
}

export class TeacherApi {
  constructor(private readonly client: ApiClient) {}

  async createExam(spec: ExamSpec): Promise<string> {
    const created = await this.client.post<{ exam_id: string }>("/api/exams", spec);
    return created.exam_id;
  }

  examView(examId: string): Promise<TeacherExamView> {
    return this.client.get<TeacherExamView>(`/api/exams/${encodeURIComponent(examId)}`);
  }

  report(examId: string): Promise<ExamReport> {
    return this.client.get<ExamReport>(`/api/exams/${encodeURIComponent(examId)}/report`);
  }
}
