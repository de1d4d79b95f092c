import { describe, expect, it } from "vitest";
import { ApiClient, ApiError, FetchLike } from "../src/api.js";
import { TeacherApi } from "../src/teacher_api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeFetch(routes: Record<string, [number, unknown]>): { fetchFn: FetchLike; calls: Call[] } {
  const calls: Call[] = [];
  const fetchFn: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const key = `${init?.method ?? "GET"} ${url}`;
    const hit = routes[key];
    if (hit === undefined) {
      return new Response(JSON.stringify({ error: "NoSuchEndpoint", detail: key }), { status: 404 });
    }
    return new Response(JSON.stringify(hit[1]), { status: hit[0] });
  };
  return { fetchFn, calls };
}

describe("ApiClient", () => {
  it("stores the bearer token from login and sends it on later calls", async () => {
    const { fetchFn, calls } = fakeFetch({
      "POST http://as/api/login": [200, { token: "tok1", role: "student", identity: "sip:s1@x" }],
      "GET http://as/api/exams/active?student=sip%3As1%40x": [200, { now_ms: 5, exams: [] }],
    });
    const api = new ApiClient("http://as", fetchFn);
    const session = await api.login("sip:s1@x", "pk");
    expect(session.role).toBe("student");
    await api.activeExams("sip:s1@x");
    const headers = calls[1].init?.headers as Record<string, string>;
    expect(headers["Authorization"]).toBe("Bearer tok1");
  });

  it("maps error payloads to typed ApiError values", async () => {
    const { fetchFn } = fakeFetch({
      "POST http://as/api/login": [401, { error: "BadCredential", detail: "wrong passkey" }],
    });
    const api = new ApiClient("http://as", fetchFn);
    await expect(api.login("sip:s1@x", "nope")).rejects.toMatchObject({
      status: 401,
      code: "BadCredential",
    });
  });

  it("posts submissions with student and answers", async () => {
    const { fetchFn, calls } = fakeFetch({
      "POST http://as/api/exams/exam-0001/submissions": [201, { accepted: true, submitted_at_ms: 9 }],
    });
    const api = new ApiClient("http://as", fetchFn);
    const ack = await api.submit("exam-0001", "sip:s1@x", { q1: 0 });
    expect(ack.accepted).toBe(true);
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      student: "sip:s1@x",
      answers: { q1: 0 },
    });
  });

  it("surfaces the duplicate-submission conflict", async () => {
    const { fetchFn } = fakeFetch({
      "POST http://as/api/exams/exam-0001/submissions": [
        409,
        { error: "DuplicateSubmission", detail: "already submitted" },
      ],
    });
    const api = new ApiClient("http://as", fetchFn);
    const failure = await api.submit("exam-0001", "sip:s1@x", { q1: 0 }).catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect(failure.status).toBe(409);
    expect(failure.code).toBe("DuplicateSubmission");
  });
});

describe("TeacherApi", () => {
  it("creates exams and reads reports through the shared client", async () => {
    const { fetchFn, calls } = fakeFetch({
      "POST http://as/api/exams": [201, { exam_id: "exam-0042" }],
      "GET http://as/api/exams/exam-0042/report": [
        200,
        { kind: "summary", exam_id: "exam-0042", submitted: 2, members: 3, mean_score: 2.5, max_score: 3, results: [] },
      ],
    });
    const api = new TeacherApi(new ApiClient("http://as", fetchFn));
    const examId = await api.createExam({
      title: "t",
      group_uri: "sip:cs101@x",
      open_at_ms: 1,
      close_at_ms: 2,
      questions: [{ qid: "q1", prompt: "?", choices: ["a", "b"], correct_index: 0, points: 1 }],
    });
    expect(examId).toBe("exam-0042");
    const report = await api.report(examId);
    expect(report.mean_score).toBe(2.5);
    expect(calls.map((c) => c.init?.method ?? "GET")).toEqual(["POST", "GET"]);
  });
});
