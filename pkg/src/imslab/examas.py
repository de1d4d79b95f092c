"""The mass-examination application server.

Domain core (ExamService) is transport-free: exams, submissions, grading and
result publication, with ports for the clock, the XDMS store, HSS credential
checks (in-process Cx-lite MAR) and an outbound instant-message sender.  The
SIP face (ExamAsNode) receives answer MESSAGEs on the service URI and sends
exam/result MESSAGEs via the S-CSCF; the HTTP face (http_api) serves the
JSON endpoints the web clients use.  Both faces funnel every mutation
through the same service methods, so a submission is accepted exactly once
no matter which channel carried it.

Exam payloads on the wire and in student API views never include
correct_index before grading.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from .endpoint import ClientTransaction, Endpoint, NetAddress, SimNetwork, TimerConfig, TokenSource
from .hss import CxMessage, HssStore, SUCCESS
from .sip import Method, SipMessage, SipUri, make_request, make_response
from .xdms import EXAM_DOCS_AUID, UnknownGroup, XdmDocument, XdmsStore
from .cscf import identity_of

EXAM_CONTENT_TYPE = "application/exam+json"
ANSWERS_CONTENT_TYPE = "application/exam-answers+json"
ACK_CONTENT_TYPE = "application/exam-ack+json"
RESULT_CONTENT_TYPE = "application/exam-result+json"

DRAFT = "draft"
SCHEDULED = "scheduled"
OPEN = "open"
CLOSED = "closed"
GRADED = "graded"

CORRECT = "correct"
WRONG = "wrong"
UNANSWERED = "unanswered"


class ExamError(Exception):
    pass


class NotTeacher(ExamError):
    pass


class InvalidSchedule(ExamError):
    pass


class InvalidExamSpec(ExamError):
    pass


class UnknownExam(ExamError):
    pass


class WrongState(ExamError):
    pass


class ExamNotOpen(ExamError):
    pass


class NotAMember(ExamError):
    pass


class DuplicateSubmission(ExamError):
    pass


class MalformedAnswers(ExamError):
    pass


@dataclass(frozen=True)
class Question:
    qid: str
    prompt: str
    choices: tuple[str, ...]
    correct_index: int
    points: float

    def __post_init__(self):
        if len(self.choices) < 2:
            raise InvalidExamSpec(f"question {self.qid}: needs at least two choices")
        if not 0 <= self.correct_index < len(self.choices):
            raise InvalidExamSpec(f"question {self.qid}: correct_index out of range")
        if self.points < 0:
            raise InvalidExamSpec(f"question {self.qid}: negative points")


@dataclass
class Exam:
    exam_id: str
    title: str
    group_uri: SipUri
    questions: list[Question]
    open_at_ms: int
    close_at_ms: int
    state: str = DRAFT
    teacher: str = ""

    def __post_init__(self):
        if self.open_at_ms >= self.close_at_ms:
            raise InvalidSchedule(f"{self.exam_id}: open_at must precede close_at")

    @property
    def max_score(self) -> float:
        return sum(q.points for q in self.questions)

    def question(self, qid: str) -> Optional[Question]:
        for q in self.questions:
            if q.qid == qid:
                return q
        return None

    def delivery_payload(self) -> dict:
        """The student-facing form: no correct_index anywhere."""
        return {
            "exam_id": self.exam_id,
            "title": self.title,
            "close_at_ms": self.close_at_ms,
            "questions": [
                {"qid": q.qid, "prompt": q.prompt, "choices": list(q.choices)} for q in self.questions
            ],
        }

    def full_payload(self) -> dict:
        data = self.delivery_payload()
        data["group_uri"] = self.group_uri.render()
        data["open_at_ms"] = self.open_at_ms
        data["state"] = self.state
        for q_out, q in zip(data["questions"], self.questions):
            q_out["correct_index"] = q.correct_index
            q_out["points"] = q.points
        return data


@dataclass(frozen=True)
class Submission:
    exam_id: str
    student: str
    answers: dict[str, int]
    submitted_at_ms: int
    channel: str  # "sip" | "http"

    def journal_line(self) -> str:
        return json.dumps(
            {
                "exam_id": self.exam_id,
                "student": self.student,
                "answers": self.answers,
                "submitted_at_ms": self.submitted_at_ms,
                "channel": self.channel,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class GradeReport:
    exam_id: str
    student: str
    per_question: dict[str, str]
    score: float
    max_score: float

    def payload(self) -> dict:
        return {
            "kind": "result",
            "exam_id": self.exam_id,
            "student": self.student,
            "score": self.score,
            "max_score": self.max_score,
            "per_question": self.per_question,
        }


@dataclass(frozen=True)
class ScheduledJob:
    fire_at_ms: int
    action: str  # "open_and_deliver" | "close_and_grade"
    exam_id: str


def grade(exam: Exam, submission: Submission) -> GradeReport:
    """Per question: correct iff the chosen index equals the answer key;
    absent answers count unanswered.  Score is the sum of points over
    correct answers, exactly."""
    per_question: dict[str, str] = {}
    score = 0.0
    for q in exam.questions:
        if q.qid not in submission.answers:
            per_question[q.qid] = UNANSWERED
        elif submission.answers[q.qid] == q.correct_index:
            per_question[q.qid] = CORRECT
            score += q.points
        else:
            per_question[q.qid] = WRONG
    return GradeReport(
        exam_id=exam.exam_id,
        student=submission.student,
        per_question=per_question,
        score=score,
        max_score=exam.max_score,
    )


def unanswered_report(exam: Exam, student: str) -> GradeReport:
    return GradeReport(
        exam_id=exam.exam_id,
        student=student,
        per_question={q.qid: UNANSWERED for q in exam.questions},
        score=0.0,
        max_score=exam.max_score,
    )


# Sender port: (recipient uri, content_type, body, on_final) -> None.
# on_final receives the final SIP status code, or None on timeout.
Messenger = Callable[[SipUri, str, bytes, Callable[[Optional[int]], None]], None]


class ExamService:
    """Exam lifecycle state machine behind both the SIP and HTTP faces."""

    def __init__(
        self,
        clock: Callable[[], int],
        xdms: XdmsStore,
        tokens: TokenSource,
        auth: Optional[Callable[[str, str], CxMessage]] = None,
        journal_path: Optional[Union[str, Path]] = None,
        request_wakeup: Optional[Callable[[int], None]] = None,
    ):
        self.clock = clock
        self.xdms = xdms
        self.tokens = tokens
        self.auth = auth
        self.journal_path = Path(journal_path) if journal_path is not None else None
        self.request_wakeup = request_wakeup
        self.messenger: Optional[Messenger] = None
        self.exams: dict[str, Exam] = {}
        self.jobs: list[ScheduledJob] = []
        self.submissions: dict[tuple[str, str], Submission] = {}
        self.reports: dict[str, dict[str, GradeReport]] = {}
        self.delivery_reports: dict[str, dict[str, str]] = {}
        self.published: set[str] = set()
        self.sessions: dict[str, dict] = {}  # bearer token -> {identity, role}
        self.on_transition: Callable[[str, str, str, str], None] = lambda *a: None
        self._replay_journal()

    # ------------------------------------------------------------------
    # provisioning and scheduling
    # ------------------------------------------------------------------

    def provision_exam(self, spec: dict, teacher: str, roles: set[str]) -> str:
        if "teacher" not in roles:
            raise NotTeacher(teacher)
        try:
            questions = [
                Question(
                    qid=str(q["qid"]),
                    prompt=str(q.get("prompt", "")),
                    choices=tuple(str(c) for c in q["choices"]),
                    correct_index=int(q["correct_index"]),
                    points=float(q.get("points", 1)),
                )
                for q in spec["questions"]
            ]
            group_uri = SipUri.parse(spec["group_uri"])
            open_at = int(spec["open_at_ms"])
            close_at = int(spec["close_at_ms"])
            title = str(spec.get("title", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidExamSpec(str(exc)) from None
        if not questions:
            raise InvalidExamSpec("an exam needs at least one question")
        if len({q.qid for q in questions}) != len(questions):
            raise InvalidExamSpec("duplicate qid")
        self.xdms.resolve_group(group_uri)  # raises UnknownGroup
        exam_id = f"exam-{len(self.exams) + 1:04d}"
        exam = Exam(
            exam_id=exam_id,
            title=title,
            group_uri=group_uri,
            questions=questions,
            open_at_ms=open_at,
            close_at_ms=close_at,
            teacher=teacher,
        )
        self.exams[exam_id] = exam
        self._transition(exam, SCHEDULED, "provisioned")
        self._store_exam_document(exam)
        self._enqueue_job(ScheduledJob(open_at, "open_and_deliver", exam_id))
        self._enqueue_job(ScheduledJob(close_at, "close_and_grade", exam_id))
        return exam_id

    def _store_exam_document(self, exam: Exam):
        doc = XdmDocument(
            auid=EXAM_DOCS_AUID,
            owner="sip:exam-service",
            doc_name=exam.exam_id,
            content_type=EXAM_CONTENT_TYPE,
            body=json.dumps(exam.full_payload(), sort_keys=True).encode("utf-8"),
            etag="",
        )
        self.xdms.put_document(doc)

    def _enqueue_job(self, job: ScheduledJob):
        self.jobs.append(job)
        if self.request_wakeup is not None:
            self.request_wakeup(job.fire_at_ms)

    def _transition(self, exam: Exam, to_state: str, cause: str):
        from_state = exam.state
        exam.state = to_state
        self.on_transition(exam.exam_id, from_state, to_state, cause)

    def scheduler_tick(self, now_ms: int) -> list[ScheduledJob]:
        """Fire every due job, ordered by (fire_at, exam_id); each exactly once."""
        due = sorted(
            (j for j in self.jobs if j.fire_at_ms <= now_ms),
            key=lambda j: (j.fire_at_ms, j.exam_id),
        )
        fired = []
        for job in due:
            self.jobs.remove(job)
            exam = self.exams[job.exam_id]
            if job.action == "open_and_deliver":
                if exam.state == SCHEDULED:
                    self._transition(exam, OPEN, "scheduler-open")
                    self.deliver_exam(job.exam_id)
            else:
                if exam.state == OPEN:
                    self._transition(exam, CLOSED, "scheduler-close")
                    self._grade_all(exam)
                    self._transition(exam, GRADED, "grading-complete")
                    self.publish_results(job.exam_id)
            fired.append(job)
        return fired

    # ------------------------------------------------------------------
    # delivery
    # ------------------------------------------------------------------

    def deliver_exam(self, exam_id: str) -> dict[str, str]:
        exam = self.exams.get(exam_id)
        if exam is None:
            raise UnknownExam(exam_id)
        if exam.state != OPEN:
            raise WrongState(f"{exam_id} is {exam.state}, not open")
        members = self.xdms.resolve_group(exam.group_uri)
        report: dict[str, str] = {}
        self.delivery_reports[exam_id] = report
        body = json.dumps(exam.delivery_payload(), sort_keys=True).encode("utf-8")
        for member in members:
            identity = identity_of(member)
            report[identity] = "pending"
            self._send(member, EXAM_CONTENT_TYPE, body, self._delivery_done(report, identity))
        return report

    def _delivery_done(self, report: dict[str, str], identity: str) -> Callable[[Optional[int]], None]:
        def done(status: Optional[int]):
            if status == 200:
                report[identity] = "delivered"
            else:
                report[identity] = f"undeliverable({status if status is not None else 'timeout'})"

        return done

    def _send(self, to_uri: SipUri, content_type: str, body: bytes, on_final: Callable[[Optional[int]], None]):
        if self.messenger is None:
            on_final(None)
            return
        self.messenger(to_uri.without_params(), content_type, body, on_final)

    # ------------------------------------------------------------------
    # submissions and grading
    # ------------------------------------------------------------------

    def accept_submission(self, exam_id: str, student: str, answers: dict, channel: str) -> Submission:
        exam = self.exams.get(exam_id)
        if exam is None:
            raise UnknownExam(exam_id)
        if exam.state != OPEN:
            raise ExamNotOpen(f"{exam_id} is {exam.state}")
        members = {identity_of(m) for m in self.xdms.resolve_group(exam.group_uri)}
        if student not in members:
            raise NotAMember(student)
        if (exam_id, student) in self.submissions:
            raise DuplicateSubmission(f"{student} already submitted {exam_id}")
        clean: dict[str, int] = {}
        if not isinstance(answers, dict):
            raise MalformedAnswers("answers must be a qid -> index map")
        for qid, index in answers.items():
            question = exam.question(str(qid))
            if question is None:
                raise MalformedAnswers(f"unknown qid {qid!r}")
            if not isinstance(index, int) or isinstance(index, bool):
                raise MalformedAnswers(f"{qid}: index must be an integer")
            if not 0 <= index < len(question.choices):
                raise MalformedAnswers(f"{qid}: choice index {index} out of range")
            clean[str(qid)] = index
        submission = Submission(
            exam_id=exam_id,
            student=student,
            answers=clean,
            submitted_at_ms=self.clock(),
            channel=channel,
        )
        self.submissions[(exam_id, student)] = submission
        self._journal(submission)
        return submission

    def _grade_all(self, exam: Exam):
        reports: dict[str, GradeReport] = {}
        for member in self.xdms.resolve_group(exam.group_uri):
            identity = identity_of(member)
            submission = self.submissions.get((exam.exam_id, identity))
            if submission is None:
                reports[identity] = unanswered_report(exam, identity)
            else:
                reports[identity] = grade(exam, submission)
        self.reports[exam.exam_id] = reports

    def publish_results(self, exam_id: str) -> dict[str, int]:
        """One result MESSAGE per group member plus a summary to the teacher
        who provisioned the exam."""
        exam = self.exams.get(exam_id)
        if exam is None:
            raise UnknownExam(exam_id)
        if exam.state != GRADED or exam_id in self.published:
            raise WrongState(f"{exam_id}: results already published or not graded")
        self.published.add(exam_id)
        members = self.xdms.resolve_group(exam.group_uri)
        reports = self.reports[exam_id]
        counts = {"students": 0, "teacher": 0}
        for member in members:
            identity = identity_of(member)
            body = json.dumps(reports[identity].payload(), sort_keys=True).encode("utf-8")
            self._send(member, RESULT_CONTENT_TYPE, body, lambda status: None)
            counts["students"] += 1
        if exam.teacher:
            body = json.dumps(self.exam_summary(exam_id), sort_keys=True).encode("utf-8")
            self._send(SipUri.parse(exam.teacher), RESULT_CONTENT_TYPE, body, lambda status: None)
            counts["teacher"] += 1
        return counts

    def exam_summary(self, exam_id: str) -> dict:
        exam = self.exams.get(exam_id)
        if exam is None:
            raise UnknownExam(exam_id)
        if exam.state != GRADED:
            raise WrongState(f"{exam_id} is {exam.state}, not graded")
        submitted = [s for (eid, _), s in self.submissions.items() if eid == exam_id]
        scores = [self.reports[exam_id][s.student].score for s in submitted]
        mean = sum(scores) / len(scores) if scores else 0.0
        return {
            "kind": "summary",
            "exam_id": exam_id,
            "submitted": len(scores),
            "members": len(self.xdms.resolve_group(exam.group_uri)),
            "mean_score": mean,
            "max_score": exam.max_score,
        }

    # ------------------------------------------------------------------
    # journal
    # ------------------------------------------------------------------

    def _journal(self, submission: Submission):
        if self.journal_path is None:
            return
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(submission.journal_line() + "\n")

    def _replay_journal(self):
        if self.journal_path is None or not self.journal_path.exists():
            return
        for line in self.journal_path.read_text().splitlines():
            if not line.strip():
                continue
            data = json.loads(line)
            submission = Submission(
                exam_id=data["exam_id"],
                student=data["student"],
                answers={str(k): int(v) for k, v in data["answers"].items()},
                submitted_at_ms=int(data["submitted_at_ms"]),
                channel=data["channel"],
            )
            self.submissions.setdefault((submission.exam_id, submission.student), submission)

    # ------------------------------------------------------------------
    # HTTP face
    # ------------------------------------------------------------------

    def login(self, user: str, passkey: str) -> Optional[dict]:
        if self.auth is None:
            return None
        answer = self.auth(user, passkey)
        if answer.result != SUCCESS or answer.profile is None:
            return None
        role = "teacher" if "teacher" in answer.profile.get("roles", []) else "student"
        token = self.tokens.bearer()
        session = {"token": token, "identity": user, "role": role}
        self.sessions[token] = {"identity": user, "role": role}
        return session

    def http_api(self, request: "HttpRequest") -> "HttpResponse":
        try:
            return self._dispatch(request)
        except UnknownExam as exc:
            return HttpResponse.error(404, "UnknownExam", str(exc))
        except UnknownGroup as exc:
            return HttpResponse.error(404, "UnknownGroup", str(exc))
        except NotTeacher as exc:
            return HttpResponse.error(403, "NotTeacher", str(exc))
        except NotAMember as exc:
            return HttpResponse.error(403, "NotAMember", str(exc))
        except DuplicateSubmission as exc:
            return HttpResponse.error(409, "DuplicateSubmission", str(exc))
        except ExamNotOpen as exc:
            return HttpResponse.error(400, "ExamNotOpen", str(exc))
        except (InvalidSchedule, InvalidExamSpec, MalformedAnswers) as exc:
            return HttpResponse.error(400, type(exc).__name__, str(exc))
        except WrongState as exc:
            return HttpResponse.error(404, "NotReady", str(exc))

    def _session(self, request: "HttpRequest") -> Optional[dict]:
        token = request.bearer_token()
        return self.sessions.get(token) if token else None

    def _dispatch(self, request: "HttpRequest") -> "HttpResponse":
        method, path = request.method.upper(), request.path
        if method == "POST" and path == "/api/login":
            body = request.json()
            if not isinstance(body, dict) or "user" not in body or "passkey" not in body:
                return HttpResponse.error(400, "Malformed", "user and passkey required")
            session = self.login(str(body["user"]), str(body["passkey"]))
            if session is None:
                return HttpResponse.error(401, "BadCredential", "unknown user or wrong passkey")
            return HttpResponse(200, session)

        session = self._session(request)
        if session is None:
            return HttpResponse.error(401, "BadCredential", "missing or invalid bearer token")

        if method == "POST" and path == "/api/exams":
            spec = request.json()
            if not isinstance(spec, dict):
                return HttpResponse.error(400, "Malformed", "exam spec must be an object")
            if session["role"] != "teacher":
                raise NotTeacher(session["identity"])
            exam_id = self.provision_exam(spec, session["identity"], {session["role"]})
            return HttpResponse(201, {"exam_id": exam_id})

        if method == "GET" and path == "/api/exams/active":
            student = request.params.get("student", session["identity"])
            if session["role"] != "teacher" and student != session["identity"]:
                return HttpResponse.error(403, "Forbidden", "students may only list their own exams")
            now = self.clock()
            active = []
            for exam in self.exams.values():
                if exam.state != OPEN:
                    continue
                members = {identity_of(m) for m in self.xdms.resolve_group(exam.group_uri)}
                if student in members:
                    payload = exam.delivery_payload()
                    payload["already_submitted"] = (exam.exam_id, student) in self.submissions
                    active.append(payload)
            return HttpResponse(200, {"now_ms": now, "exams": active})

        if method == "GET" and path.startswith("/api/exams/") and path.endswith("/results"):
            exam_id = path[len("/api/exams/") : -len("/results")]
            exam = self.exams.get(exam_id)
            if exam is None:
                raise UnknownExam(exam_id)
            if exam.state != GRADED:
                raise WrongState(f"{exam_id} not graded yet")
            student = request.params.get("student", session["identity"])
            if session["role"] != "teacher" and student != session["identity"]:
                return HttpResponse.error(403, "Forbidden", "students may only read their own result")
            report = self.reports[exam_id].get(student)
            if report is None:
                return HttpResponse.error(404, "NoResult", f"no report for {student}")
            return HttpResponse(200, report.payload())

        if method == "GET" and path.startswith("/api/exams/") and path.endswith("/report"):
            exam_id = path[len("/api/exams/") : -len("/report")]
            if session["role"] != "teacher":
                raise NotTeacher(session["identity"])
            exam = self.exams.get(exam_id)
            if exam is None:
                raise UnknownExam(exam_id)
            if exam.state != GRADED:
                raise WrongState(f"{exam_id} not graded yet")
            summary = self.exam_summary(exam_id)
            summary["results"] = [self.reports[exam_id][k].payload() for k in sorted(self.reports[exam_id])]
            return HttpResponse(200, summary)

        if method == "POST" and path.startswith("/api/exams/") and path.endswith("/submissions"):
            exam_id = path[len("/api/exams/") : -len("/submissions")]
            body = request.json()
            if not isinstance(body, dict) or "answers" not in body:
                return HttpResponse.error(400, "Malformed", "answers required")
            student = str(body.get("student", session["identity"]))
            if session["role"] != "teacher" and student != session["identity"]:
                return HttpResponse.error(403, "Forbidden", "token does not match student")
            submission = self.accept_submission(exam_id, student, body["answers"], "http")
            return HttpResponse(201, {"accepted": True, "submitted_at_ms": submission.submitted_at_ms})

        if method == "GET" and path.startswith("/api/exams/"):
            exam_id = path[len("/api/exams/") :]
            exam = self.exams.get(exam_id)
            if exam is None:
                raise UnknownExam(exam_id)
            if session["role"] == "teacher" or exam.state == GRADED:
                payload = exam.full_payload()
                payload["submitted_count"] = len(
                    [1 for (eid, _) in self.submissions if eid == exam_id]
                )
                return HttpResponse(200, payload)
            payload = exam.delivery_payload()
            payload["state"] = exam.state
            return HttpResponse(200, payload)

        return HttpResponse.error(404, "NoSuchEndpoint", f"{method} {path}")


@dataclass
class HttpRequest:
    method: str
    path: str
    params: dict[str, str] = field(default_factory=dict)
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    def bearer_token(self) -> Optional[str]:
        auth = ""
        for name, value in self.headers.items():
            if name.lower() == "authorization":
                auth = value
                break
        if auth.lower().startswith("bearer "):
            return auth[7:].strip()
        return None

    def json(self):
        if not self.body:
            return None
        try:
            return json.loads(self.body.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return None


@dataclass
class HttpResponse:
    status: int
    body: dict

    @classmethod
    def error(cls, status: int, code: str, detail: str) -> "HttpResponse":
        return cls(status, {"error": code, "detail": detail})

    def to_bytes(self) -> bytes:
        return json.dumps(self.body, sort_keys=True).encode("utf-8")


class ExamAsNode:
    """SIP face of the exam service on the simulated network."""

    def __init__(
        self,
        name: str,
        address: NetAddress,
        network: SimNetwork,
        tokens: TokenSource,
        scscf_address: NetAddress,
        xdms_store: XdmsStore,
        hss_store: Optional[HssStore] = None,
        home_domain: str = "ims.kau.test",
        journal_path: Optional[Union[str, Path]] = None,
        timers: TimerConfig = TimerConfig(),
    ):
        self.name = name
        self.address = address
        self.network = network
        self.tokens = tokens
        self.scscf_address = scscf_address
        self.home_domain = home_domain
        self.service_uri = SipUri(user="exam", host=home_domain)
        self.endpoint = Endpoint(name, address, network, tokens, timers)
        self.endpoint.on_request = self.on_request
        self.endpoint.on_response = self._on_response
        self.endpoint.on_transaction_timeout = self._on_timeout
        self._cseq = 0
        self._finals: dict[tuple[str, str], Callable[[Optional[int]], None]] = {}

        auth = None
        if hss_store is not None:
            auth = lambda impu, passkey: hss_store.handle_mar(
                CxMessage(op="MAR", cid=tokens.cx_id(), impu=impu, passkey_offer=passkey)
            )
        self.service = ExamService(
            clock=lambda: network.scheduler.now_ms,
            xdms=xdms_store,
            tokens=tokens,
            auth=auth,
            journal_path=journal_path,
            request_wakeup=lambda at: network.scheduler.call_at(
                at, lambda: self.service.scheduler_tick(network.scheduler.now_ms)
            ),
        )
        self.service.messenger = self.send_instant_message
        self.service.on_transition = lambda exam_id, frm, to, cause: network.record_transition(
            name, exam_id, frm, to, cause
        )

    # -- outbound ------------------------------------------------------------

    def send_instant_message(
        self,
        to_uri: SipUri,
        content_type: str,
        body: bytes,
        on_final: Callable[[Optional[int]], None],
    ):
        self._cseq += 1
        req = make_request(
            Method.MESSAGE,
            to_uri,
            self.service_uri,
            to_uri,
            self.tokens.call_id(),
            self._cseq,
            sent_by=(self.address.host, self.address.port),
            branch=self.tokens.branch(),
            from_tag=self.tokens.tag(),
            content_type=content_type,
            body=body,
        )
        tx = self.endpoint.send_request(req, self.scscf_address)
        if tx is not None:
            self._finals[tx.key] = on_final

    def _on_response(self, tx: ClientTransaction, resp: SipMessage):
        if resp.status_class == 1:
            return
        done = self._finals.pop(tx.key, None)
        if done is not None:
            done(resp.status)

    def _on_timeout(self, tx: ClientTransaction):
        done = self._finals.pop(tx.key, None)
        if done is not None:
            done(None)

    # -- inbound ------------------------------------------------------------

    def on_request(self, msg: SipMessage, src: NetAddress):
        if msg.method == Method.ACK:
            return
        if msg.method != Method.MESSAGE or msg.content_type != ANSWERS_CONTENT_TYPE:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))
            return
        self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
        student = identity_of(msg.from_.uri)
        try:
            data = json.loads(msg.body.decode("utf-8"))
            exam_id = str(data["exam_id"])
            answers = data["answers"]
        except (ValueError, KeyError, UnicodeDecodeError):
            self._ack_submission(msg.from_.uri.without_params(), "?", "MalformedAnswers")
            return
        try:
            self.service.accept_submission(exam_id, student, answers, "sip")
            self._ack_submission(msg.from_.uri.without_params(), exam_id, None)
        except ExamError as exc:
            self._ack_submission(msg.from_.uri.without_params(), exam_id, type(exc).__name__)

    def _ack_submission(self, to_uri: SipUri, exam_id: str, error: Optional[str]):
        payload = {"exam_id": exam_id, "outcome": "accepted" if error is None else "rejected"}
        if error is not None:
            payload["error"] = error
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_instant_message(to_uri, ACK_CONTENT_TYPE, body, lambda status: None)
