"""IMS user agent for students and teachers.

Every request leaves through the configured P-CSCF.  Registration carries
the passkey in the X-Passkey header and is answered in one round; on
success an optional refresh timer re-registers at 80% of the granted expiry
(scripted scenarios leave it off so runs quiesce).  Incoming MESSAGEs are
answered 200 and sorted by content type: exam announcements and results land
in the inbox in arrival order, submission acks resolve the pending submit
outcome, anything else is rejected.  In scripted mode an exam announcement
triggers an automatic submission from the configured answer map.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

from .endpoint import (
    ClientTransaction,
    Endpoint,
    NetAddress,
    SimNetwork,
    Subscription,
    TimerConfig,
    TokenSource,
)
from .examas import ACK_CONTENT_TYPE, ANSWERS_CONTENT_TYPE, EXAM_CONTENT_TYPE, RESULT_CONTENT_TYPE, HttpRequest, HttpResponse
from .cscf import EXAM_EVENT, PASSKEY_HEADER, identity_of
from .sip import Method, SipMessage, SipUri, make_request, make_response

IDLE = "idle"
REGISTERING = "registering"
REGISTERED = "registered"
FAILED = "failed"


class NotRegistered(Exception):
    pass


@dataclass
class UaConfig:
    identity: SipUri
    passkey: str
    pcscf: NetAddress
    local: NetAddress
    expires_s: int = 3600
    auto_answer: Optional[dict[str, int]] = None
    auto_submit_channel: str = "sip"
    refresh_registration: bool = False


@dataclass
class InboxEntry:
    kind: str  # "exam" | "result"
    received_at_ms: int
    payload: dict


class UserAgent:
    """One student or teacher device attached to the simulated network."""

    def __init__(
        self,
        name: str,
        network: SimNetwork,
        tokens: TokenSource,
        config: UaConfig,
        timers: TimerConfig = TimerConfig(),
        http_port: Optional[Callable[[HttpRequest], HttpResponse]] = None,
    ):
        self.name = name
        self.network = network
        self.tokens = tokens
        self.config = config
        self.http_port = http_port
        self.registration = IDLE
        self.failure: Optional[str] = None
        self.granted_expires_s: Optional[int] = None
        self.subscription: Optional[Subscription] = None
        self.subscribe_outcome: Optional[str] = None
        self.inbox: list[InboxEntry] = []
        self.submit_outcomes: dict[str, str] = {}
        self._cseq = 0
        self._register_call_id: Optional[str] = None
        self._subscribe_call_id: Optional[str] = None
        self._http_token: Optional[str] = None
        self._refresh_timer = None
        self.endpoint = Endpoint(name, config.local, network, tokens, timers)
        self.endpoint.on_request = self.on_message
        self.endpoint.on_response = self._on_response
        self.endpoint.on_transaction_timeout = self._on_timeout

    # ------------------------------------------------------------------
    # registration
    # ------------------------------------------------------------------

    @property
    def identity_key(self) -> str:
        return identity_of(self.config.identity)

    def _set_registration(self, state: str, cause: str):
        if state != self.registration:
            self.network.record_transition(self.name, self.identity_key, self.registration, state, cause)
        self.registration = state

    def _next_cseq(self) -> int:
        self._cseq += 1
        return self._cseq

    def _contact(self) -> SipUri:
        return SipUri(user=self.config.identity.user, host=self.config.local.host, port=self.config.local.port)

    def register(self, expires_s: Optional[int] = None):
        if self.registration == REGISTERED and expires_s != 0:
            pass  # refresh is allowed
        elif self.registration not in (IDLE, FAILED, REGISTERED):
            return
        offered = self.config.expires_s if expires_s is None else expires_s
        if self._register_call_id is None:
            self._register_call_id = self.tokens.call_id()
        req = make_request(
            Method.REGISTER,
            SipUri(user=None, host=self.config.identity.host),
            self.config.identity,
            self.config.identity,
            self._register_call_id,
            self._next_cseq(),
            sent_by=(self.config.local.host, self.config.local.port),
            branch=self.tokens.branch(),
            from_tag=self.tokens.tag(),
            contact=self._contact(),
            expires=offered,
            extra_headers=((PASSKEY_HEADER, self.config.passkey),),
        )
        self._set_registration(REGISTERING, "register-sent")
        self.endpoint.send_request(req, self.config.pcscf)

    def deregister(self):
        self.register(expires_s=0)
        if self._refresh_timer is not None:
            self.network.scheduler.cancel(self._refresh_timer)
            self._refresh_timer = None

    def _on_register_final(self, resp: SipMessage):
        if resp.status == 200:
            granted = resp.expires if resp.expires is not None else 0
            if granted == 0:
                self._set_registration(IDLE, "deregistered")
                return
            self.granted_expires_s = granted
            self._set_registration(REGISTERED, "register-200")
            if self.config.refresh_registration:
                delay_ms = int(granted * 1000 * 0.8)
                self._refresh_timer = self.network.scheduler.call_later(delay_ms, self.register)
        elif resp.status == 403:
            self.failure = "bad_passkey"
            self._set_registration(FAILED, "register-403")
        else:
            self.failure = f"register-{resp.status}"
            self._set_registration(FAILED, f"register-{resp.status}")

    # ------------------------------------------------------------------
    # exam service subscription
    # ------------------------------------------------------------------

    def subscribe_exam_service(self, expires_s: int = 3600):
        if self.registration != REGISTERED:
            raise NotRegistered("subscribe requires an active registration")
        if self._subscribe_call_id is None:
            self._subscribe_call_id = self.tokens.call_id()
        service = SipUri(user="exam", host=self.config.identity.host)
        local_tag = self.tokens.tag()
        req = make_request(
            Method.SUBSCRIBE,
            service,
            self.config.identity,
            service,
            self._subscribe_call_id,
            self._next_cseq(),
            sent_by=(self.config.local.host, self.config.local.port),
            branch=self.tokens.branch(),
            from_tag=local_tag,
            contact=self._contact(),
            expires=expires_s,
            event=EXAM_EVENT,
        )
        self.subscription = Subscription(
            call_id=self._subscribe_call_id,
            local_tag=local_tag,
            remote_tag=None,
            event=EXAM_EVENT,
            expires_at_ms=self.network.scheduler.now_ms + expires_s * 1000,
            state="pending",
        )
        self.endpoint.send_request(req, self.config.pcscf)

    def _on_subscribe_final(self, resp: SipMessage):
        if self.subscription is None:
            return
        if resp.status in (200, 202):
            self.subscription.remote_tag = resp.to.tag
            if resp.expires == 0:
                self.subscription.state = "terminated"
                self.subscribe_outcome = "terminated"
            else:
                self.subscription.state = "active"
                self.subscribe_outcome = "active"
            self.network.record_transition(
                self.name, self.identity_key, "pending", self.subscription.state, f"subscribe-{resp.status}"
            )
        elif resp.status == 403:
            self.subscribe_outcome = "not_authorized"
            self.subscription = None
        else:
            self.subscribe_outcome = f"failed-{resp.status}"
            self.subscription = None

    def unsubscribe(self):
        """In-dialog SUBSCRIBE with Expires: 0; the XDMS answers with a final
        NOTIFY(terminated)."""
        if self.subscription is None or self.subscription.state != "active":
            return
        service = SipUri(user="exam", host=self.config.identity.host)
        req = make_request(
            Method.SUBSCRIBE,
            service,
            self.config.identity,
            service,
            self.subscription.call_id,
            self._next_cseq(),
            sent_by=(self.config.local.host, self.config.local.port),
            branch=self.tokens.branch(),
            from_tag=self.subscription.local_tag,
            to_tag=self.subscription.remote_tag,
            expires=0,
            event=EXAM_EVENT,
        )
        self.endpoint.send_request(req, self.config.pcscf)

    # ------------------------------------------------------------------
    # instant messages
    # ------------------------------------------------------------------

    def on_message(self, msg: SipMessage, src: NetAddress):
        if msg.method == Method.NOTIFY:
            self._on_notify(msg)
            return
        if msg.method == Method.ACK:
            return
        if msg.method != Method.MESSAGE:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))
            return
        if msg.content_type == EXAM_CONTENT_TYPE:
            self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
            payload = self._decode(msg.body)
            entry = InboxEntry("exam", self.network.scheduler.now_ms, payload)
            self.inbox.append(entry)
            if self.config.auto_answer is not None:
                self._auto_submit(payload)
        elif msg.content_type == RESULT_CONTENT_TYPE:
            self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
            self.inbox.append(InboxEntry("result", self.network.scheduler.now_ms, self._decode(msg.body)))
        elif msg.content_type == ACK_CONTENT_TYPE:
            self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
            data = self._decode(msg.body)
            exam_id = str(data.get("exam_id", "?"))
            outcome = data.get("outcome", "rejected")
            self.submit_outcomes[exam_id] = (
                "accepted" if outcome == "accepted" else f"rejected:{data.get('error', 'unknown')}"
            )
        else:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))

    @staticmethod
    def _decode(body: bytes) -> dict:
        try:
            data = json.loads(body.decode("utf-8"))
            return data if isinstance(data, dict) else {}
        except (ValueError, UnicodeDecodeError):
            return {}

    def _on_notify(self, msg: SipMessage):
        self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
        if self.subscription is None:
            return
        token = msg.body.decode("utf-8", "replace").strip()
        if token == "terminated":
            self.subscription.state = "terminated"
            self.network.record_transition(self.name, self.identity_key, "active", "terminated", "notify")
        elif self.subscription.state == "pending" and token == "active":
            # normally the 202 arrives first; accept the NOTIFY as confirmation
            self.subscription.state = "active"

    # ------------------------------------------------------------------
    # submissions
    # ------------------------------------------------------------------

    def _auto_submit(self, exam_payload: dict):
        exam_id = str(exam_payload.get("exam_id", ""))
        qids = [str(q.get("qid")) for q in exam_payload.get("questions", [])]
        answers = {qid: self.config.auto_answer[qid] for qid in qids if qid in self.config.auto_answer}
        self.submit_answers(exam_id, answers, self.config.auto_submit_channel)

    def exam_in_inbox(self, exam_id: str) -> Optional[dict]:
        for entry in self.inbox:
            if entry.kind == "exam" and entry.payload.get("exam_id") == exam_id:
                return entry.payload
        return None

    def submit_answers(self, exam_id: str, answers: dict[str, int], channel: str = "sip") -> str:
        """Submit once; the returned (or later stored) outcome is one of
        accepted / rejected:<Reason> / pending."""
        if self.exam_in_inbox(exam_id) is None:
            raise ValueError(f"exam {exam_id} not in inbox")
        if channel == "http":
            outcome = self._submit_http(exam_id, answers)
            self.submit_outcomes[exam_id] = outcome
            return outcome
        if self.registration != REGISTERED:
            raise NotRegistered("SIP submissions require an active registration")
        service = SipUri(user="exam", host=self.config.identity.host)
        body = json.dumps({"exam_id": exam_id, "answers": answers}, sort_keys=True).encode("utf-8")
        req = make_request(
            Method.MESSAGE,
            service,
            self.config.identity,
            service,
            self.tokens.call_id(),
            self._next_cseq(),
            sent_by=(self.config.local.host, self.config.local.port),
            branch=self.tokens.branch(),
            from_tag=self.tokens.tag(),
            content_type=ANSWERS_CONTENT_TYPE,
            body=body,
        )
        self.submit_outcomes[exam_id] = "pending"
        self.endpoint.send_request(req, self.config.pcscf)
        return "pending"

    def _submit_http(self, exam_id: str, answers: dict[str, int]) -> str:
        if self.http_port is None:
            return "rejected:NoHttpPort"
        if self._http_token is None:
            login = self.http_port(
                HttpRequest(
                    method="POST",
                    path="/api/login",
                    body=json.dumps(
                        {"user": self.identity_key, "passkey": self.config.passkey}
                    ).encode("utf-8"),
                )
            )
            if login.status != 200:
                return f"rejected:Login{login.status}"
            self._http_token = login.body["token"]
        resp = self.http_port(
            HttpRequest(
                method="POST",
                path=f"/api/exams/{exam_id}/submissions",
                headers={"Authorization": f"Bearer {self._http_token}"},
                body=json.dumps({"student": self.identity_key, "answers": answers}).encode("utf-8"),
            )
        )
        if resp.status == 201:
            return "accepted"
        return f"rejected:{resp.body.get('error', resp.status)}"

    # ------------------------------------------------------------------
    # transaction callbacks
    # ------------------------------------------------------------------

    def _on_response(self, tx: ClientTransaction, resp: SipMessage):
        if resp.status_class == 1:
            return
        if resp.cseq.method == Method.REGISTER:
            self._on_register_final(resp)
        elif resp.cseq.method == Method.SUBSCRIBE:
            self._on_subscribe_final(resp)
        elif resp.cseq.method == Method.MESSAGE:
            if resp.status != 200 and resp.status is not None:
                # transport-level rejection of a submission MESSAGE
                body = tx.request.body
                try:
                    exam_id = str(json.loads(body.decode("utf-8")).get("exam_id", "?"))
                except ValueError:
                    exam_id = "?"
                if self.submit_outcomes.get(exam_id) == "pending":
                    self.submit_outcomes[exam_id] = f"rejected:{resp.status}"

    def _on_timeout(self, tx: ClientTransaction):
        if tx.request.method == Method.REGISTER:
            self.failure = "unreachable"
            self._set_registration(FAILED, "register-timeout")
        elif tx.request.method == Method.SUBSCRIBE:
            self.subscribe_outcome = "failed-timeout"
