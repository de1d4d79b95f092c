// @vitest-environment jsdom
//
// Scripted end-to-end session against the real exam server: spawns the
// Python demo cluster (full IMS core on loopback), then drives the teacher
// console and a student client through login, exam creation, submission,
// the duplicate-409 path, and the graded views — asserting that everything
// rendered equals the API's numbers.

import { spawn, ChildProcess } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { StudentClient } from "../src/student_view.js";
import { TeacherApi } from "../src/teacher_api.js";
import { TeacherConsole } from "../src/teacher_view.js";

const PORT = 18642;
const BASE = `http://127.0.0.1:${PORT}`;
const TEACHER = "sip:teacher@ims.kau.test";
const STUDENT = "sip:s1@ims.kau.test";

let server: ChildProcess;

async function sleep(ms: number) {
  await new Promise((resolve) => setTimeout(resolve, ms));
}

async function waitForServer(timeoutMs = 20_000) {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/api/login`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ user: TEACHER, passkey: "pk-teacher" }),
      });
      if (response.status === 200) return;
    } catch {
      // not up yet
    }
    await sleep(200);
  }
  throw new Error("exam server did not come up");
}

beforeAll(async () => {
  server = spawn("python3", ["-m", "imslab.cli", "examas", "--demo", "--listen-http", `127.0.0.1:${PORT}`], {
    stdio: "ignore",
  });
  await waitForServer();
}, 30_000);

afterAll(() => {
  server?.kill();
});

describe("scripted end-to-end session", () => {
  it("teacher creates an exam, student submits, duplicate hits 409, views match the API", async () => {
    // teacher side: real console against the real API
    const teacherRoot = document.createElement("div");
    document.body.appendChild(teacherRoot);
    const teacherClient = new ApiClient(BASE);
    const teacherSession = await teacherClient.login(TEACHER, "pk-teacher");
    expect(teacherSession.role).toBe("teacher");
    const teacherApi = new TeacherApi(teacherClient);
    const consoleView = new TeacherConsole(teacherRoot, teacherApi, 500);
    consoleView.start();
    consoleView.addQuestion();
    const set = (name: string, value: string) => {
      (teacherRoot.querySelector(`[name="${name}"]`) as HTMLInputElement).value = value;
    };
    set("title", "integration quiz");
    set("group", "sip:cs101@ims.kau.test");
    const opens = new Date(Date.now() + 700);
    const closes = new Date(Date.now() + 4500);
    const local = (d: Date) =>
      new Date(d.getTime() - d.getTimezoneOffset() * 60_000).toISOString().slice(0, 19);
    set("open-at", local(opens));
    set("close-at", local(closes));
    set("q0-prompt", "pick the first choice");
    (teacherRoot.querySelector('[name="q0-choices"]') as HTMLTextAreaElement).value = "right\nwrong";
    set("q0-correct", "0");
    set("q0-points", "3");
    await consoleView.create();
    consoleView.stop();
    expect(consoleView.examId).not.toBeNull();
    const examId = consoleView.examId!;

    // student side: poll until the exam opens, answer, submit
    const studentRoot = document.createElement("div");
    document.body.appendChild(studentRoot);
    const studentClient = new ApiClient(BASE);
    const studentSession = await studentClient.login(STUDENT, "pk-s1");
    expect(studentSession.role).toBe("student");
    const student = new StudentClient(studentRoot, studentClient, STUDENT);
    const opened = Date.now();
    while (student.phase === "waiting" && Date.now() - opened < 10_000) {
      await student.refresh();
      if (student.phase === "waiting") await sleep(250);
    }
    expect(student.phase).toBe("answering");
    expect(student.exam?.exam_id).toBe(examId);
    // the rendered question equals what the API returned, key redacted
    const apiView = await studentClient.getExam(examId);
    expect(studentRoot.querySelector(".prompt")?.textContent?.trim()).toBe(
      apiView.questions[0].prompt,
    );
    expect(JSON.stringify(apiView)).not.toContain("correct_index");

    (studentRoot.querySelectorAll(".choice")[0] as HTMLButtonElement).click();
    await student.submit();
    expect(student.phase).toBe("submitted");

    // duplicate submission: blocked client-side state and a server-side 409
    const duplicate = await studentClient.submit(examId, STUDENT, { q1: 0 }).catch((e) => e);
    expect(duplicate.status).toBe(409);
    expect(duplicate.code).toBe("DuplicateSubmission");

    // teacher's live counter reflects the accepted submission
    await consoleView.refresh();
    expect(teacherRoot.querySelector(".counter")?.textContent).toBe("1");

    // wait for the close job to grade, then check both graded views
    const gradedBy = Date.now();
    while (student.phase !== "result" && Date.now() - gradedBy < 15_000) {
      await sleep(400);
      await student.refresh();
    }
    expect(student.phase).toBe("result");
    const apiResult = await studentClient.myResult(examId, STUDENT);
    expect(studentRoot.querySelector(".score-value")?.textContent).toBe(String(apiResult.score));
    expect(studentRoot.querySelector(".max-score")?.textContent).toBe(String(apiResult.max_score));
    expect(apiResult.score).toBe(3); // chose the correct first answer, 3 points

    await consoleView.refresh();
    const apiReport = await teacherApi.report(examId);
    expect(teacherRoot.querySelector(".mean-score")?.textContent).toBe(String(apiReport.mean_score));
    expect(teacherRoot.querySelector(".submitted")?.textContent).toBe(String(apiReport.submitted));
    expect(teacherRoot.querySelector(".members")?.textContent).toBe(String(apiReport.members));
  }, 40_000);
});
