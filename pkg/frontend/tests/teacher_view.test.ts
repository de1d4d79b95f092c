// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient, FetchLike } from "../src/api.js";
import { TeacherApi } from "../src/teacher_api.js";
import { TeacherConsole } from "../src/teacher_view.js";

function routedFetch(routes: Record<string, [number, unknown]>): FetchLike {
  return async (url, init) => {
    const key = `${init?.method ?? "GET"} ${url}`;
    const hit = routes[key];
    if (hit === undefined) {
      return new Response(JSON.stringify({ error: "NoSuchEndpoint", detail: key }), { status: 404 });
    }
    return new Response(JSON.stringify(hit[1]), { status: hit[0] });
  };
}

function console_(routes: Record<string, [number, unknown]>): TeacherConsole {
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  const api = new TeacherApi(new ApiClient("http://as", routedFetch(routes)));
  const tc = new TeacherConsole(root, api);
  tc.start();
  return tc;
}

function setField(name: string, value: string) {
  const input = document.querySelector(`[name="${name}"]`) as HTMLInputElement;
  input.value = value;
}

function fillForm(tc: TeacherConsole) {
  setField("title", "midterm");
  setField("group", "sip:cs101@ims.kau.test");
  setField("open-at", "2026-08-10T10:00:00");
  setField("close-at", "2026-08-10T11:00:00");
  tc.addQuestion();
  setField("q0-prompt", "first?");
  (document.querySelector('[name="q0-choices"]') as HTMLTextAreaElement).value = "a\nb\nc";
  setField("q0-correct", "1");
  setField("q0-points", "2");
}

describe("TeacherConsole", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("reads the builder form into the exam spec the API expects", () => {
    const tc = console_({});
    fillForm(tc);
    const spec = tc.readSpec();
    expect(spec.title).toBe("midterm");
    expect(spec.questions).toEqual([
      { qid: "q1", prompt: "first?", choices: ["a", "b", "c"], correct_index: 1, points: 2 },
    ]);
    expect(spec.close_at_ms - spec.open_at_ms).toBe(3_600_000);
  });

  it("shows the API's InvalidSchedule verdict inline instead of computing its own", async () => {
    const tc = console_({
      "POST http://as/api/exams": [400, { error: "InvalidSchedule", detail: "open_at must precede close_at" }],
    });
    fillForm(tc);
    await tc.create();
    expect(tc.examId).toBeNull();
    expect(document.querySelector(".error")?.textContent).toContain("InvalidSchedule");
  });

  it("polls the live submission counter straight from the exam view", async () => {
    const tc = console_({
      "POST http://as/api/exams": [201, { exam_id: "exam-0007" }],
      "GET http://as/api/exams/exam-0007": [
        200,
        { exam_id: "exam-0007", title: "midterm", state: "open", submitted_count: 5,
          open_at_ms: 0, close_at_ms: 1, group_uri: "sip:cs101@x", questions: [] },
      ],
    });
    fillForm(tc);
    await tc.create();
    tc.stop();
    await tc.refresh();
    expect(document.querySelector(".counter")?.textContent).toBe("5");
    expect(document.querySelector(".state")?.textContent).toBe("open");
  });

  it("renders the graded report with every number taken from the API", async () => {
    const report = {
      kind: "summary",
      exam_id: "exam-0007",
      submitted: 2,
      members: 3,
      mean_score: 2.5,
      max_score: 3,
      results: [
        { kind: "result", exam_id: "exam-0007", student: "sip:s1@x", score: 3, max_score: 3, per_question: {} },
        { kind: "result", exam_id: "exam-0007", student: "sip:s2@x", score: 2, max_score: 3, per_question: {} },
      ],
    };
    const tc = console_({
      "POST http://as/api/exams": [201, { exam_id: "exam-0007" }],
      "GET http://as/api/exams/exam-0007": [
        200,
        { exam_id: "exam-0007", title: "midterm", state: "graded", submitted_count: 2,
          open_at_ms: 0, close_at_ms: 1, group_uri: "sip:cs101@x", questions: [] },
      ],
      "GET http://as/api/exams/exam-0007/report": [200, report],
    });
    fillForm(tc);
    await tc.create();
    tc.stop();
    await tc.refresh();
    expect(document.querySelector(".submitted")?.textContent).toBe("2");
    expect(document.querySelector(".members")?.textContent).toBe("3");
    expect(document.querySelector(".mean-score")?.textContent).toBe("2.5");
    const rows = Array.from(document.querySelectorAll(".row-score")).map((r) => r.textContent);
    expect(rows).toEqual(["3", "2"]);
  });
});

describe("student bundle redaction", () => {
  it("keeps teacher-only endpoints out of the student page's import graph", async () => {
    const fs = await import("node:fs");
    const path = await import("node:path");
    const src = (name: string) =>
      fs.readFileSync(path.join(__dirname, "..", "src", name), "utf-8");
    // the student page imports only api.ts and student_view.ts
    const studentGraph = src("student_view.ts") + src("api.ts");
    expect(studentGraph).not.toContain("/report");
    expect(studentGraph).not.toContain('from "./teacher_api');
    expect(studentGraph).not.toContain("createExam");
  });
});
