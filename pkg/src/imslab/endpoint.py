"""Transport abstraction, transaction state machines and the event loop.

Two transports share the node logic: a single-threaded simulated network
driven by a virtual millisecond clock (the default; fully deterministic for a
given seed) and real UDP sockets on loopback (live demo mode, see live.py).

Reliability model: every non-ACK, non-NOTIFY request opens a client
transaction that retransmits with doubling intervals (t1, capped at t2) until
a response arrives or the retransmit/timeout budget is exhausted.  The
receiving side keeps a server transaction per (branch, CSeq-method) that
replays the last response to duplicate requests and never re-delivers a
request to node logic.  Responses are matched by top-Via branch + CSeq
method; duplicate final responses are absorbed.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from .sip import BRANCH_PREFIX, Method, SipMessage, serialize_message


@dataclass(frozen=True, order=True)
class NetAddress:
    host: str
    port: int

    @classmethod
    def parse(cls, raw: str) -> "NetAddress":
        host, _, port = raw.rpartition(":")
        return cls(host, int(port))

    def render(self) -> str:
        return f"{self.host}:{self.port}"

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class TimerConfig:
    t1_ms: int = 500
    t2_ms: int = 4000
    max_retransmits: int = 5
    transaction_timeout_ms: int = 32000

    def __post_init__(self):
        if self.t1_ms < 1 or self.t2_ms < self.t1_ms or self.max_retransmits < 0:
            raise ValueError("invalid timer configuration")

    def interval_after(self, retransmit_count: int) -> int:
        """Wait before the (retransmit_count+1)-th transmission: t1 doubling,
        capped at t2."""
        return min(self.t1_ms * (2**retransmit_count), self.t2_ms)


class TokenSource:
    """Run-scoped generator of branch/tag/call-id/correlation tokens.

    Within one run every token is unique; two runs of the same scenario see
    identical sequences, which keeps traces byte-stable.  When every node
    owns its own source (live mode) the label keeps tokens globally unique.
    """

    def __init__(self, seed: int = 0, label: str = ""):
        self.seed = seed
        self.label = label
        self._counters: dict[str, int] = {}

    def _next(self, kind: str) -> str:
        value = self._counters.get(kind, 0) + 1
        self._counters[kind] = value
        return f"{self.label}{value:06d}" if self.label else f"{value:06d}"

    def branch(self) -> str:
        return f"{BRANCH_PREFIX}b{self._next('branch')}"

    def tag(self) -> str:
        return f"t{self._next('tag')}"

    def call_id(self) -> str:
        return f"c{self._next('call')}"

    def cx_id(self) -> str:
        return f"x{self._next('cx')}"

    def etag(self) -> str:
        return f"e{self._next('etag')}"

    def bearer(self) -> str:
        return f"tok{self._next('bearer')}"


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class Scheduler:
    """Virtual-time event loop: a heap of (time, seq) ordered callbacks."""

    def __init__(self):
        self.now_ms = 0
        self._heap: list[tuple[int, int, TimerHandle, Callable[[], None]]] = []
        self._seq = 0
        self._live = 0

    def call_at(self, at_ms: int, fn: Callable[[], None]) -> TimerHandle:
        if at_ms < self.now_ms:
            at_ms = self.now_ms
        handle = TimerHandle()
        self._seq += 1
        heapq.heappush(self._heap, (at_ms, self._seq, handle, fn))
        self._live += 1
        return handle

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self.now_ms + delay_ms, fn)

    def cancel(self, handle: TimerHandle):
        if not handle.cancelled:
            handle.cancel()
            self._live -= 1

    @property
    def pending(self) -> int:
        return self._live

    def run(self, t_max_ms: Optional[int] = None) -> bool:
        """Dispatch events in (time, seq) order.  Returns True when the queue
        drained (quiescence), False when t_max_ms cut the run short."""
        while self._heap:
            at_ms, _, handle, fn = self._heap[0]
            if t_max_ms is not None and at_ms > t_max_ms:
                return False
            heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._live -= 1
            self.now_ms = max(self.now_ms, at_ms)
            fn()
        return True


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass
class NodeSpec:
    name: str
    role: str
    host: str
    port: int

    @property
    def address(self) -> NetAddress:
        return NetAddress(self.host, self.port)


@dataclass
class Topology:
    """Node registry plus per-link latency and the loss model."""

    nodes: list[NodeSpec]
    latency: dict[frozenset, int] = field(default_factory=dict)
    default_latency_ms: int = 10
    p_loss: float = 0.0
    loss_seed: int = 0
    domain: str = "ims.kau.test"

    def __post_init__(self):
        self._by_name = {n.name: n for n in self.nodes}
        self._by_addr = {n.address: n for n in self.nodes}

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        nodes = [NodeSpec(n["name"], n["role"], n["host"], int(n["port"])) for n in data["nodes"]]
        latency = {}
        for link in data.get("links", []):
            latency[frozenset((link["a"], link["b"]))] = int(link["latency_ms"])
        loss = data.get("loss", {})
        return cls(
            nodes=nodes,
            latency=latency,
            default_latency_ms=int(data.get("default_latency_ms", 10)),
            p_loss=float(loss.get("p", 0.0)),
            loss_seed=int(loss.get("seed", 0)),
            domain=data.get("domain", "ims.kau.test"),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Topology":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "nodes": [{"name": n.name, "role": n.role, "host": n.host, "port": n.port} for n in self.nodes],
            "links": [
                {"a": a, "b": b, "latency_ms": ms}
                for (a, b), ms in sorted((tuple(sorted(k)), v) for k, v in self.latency.items())
            ],
            "default_latency_ms": self.default_latency_ms,
            "loss": {"p": self.p_loss, "seed": self.loss_seed},
        }

    def node(self, name: str) -> NodeSpec:
        return self._by_name[name]

    def name_of(self, addr: NetAddress) -> Optional[str]:
        spec = self._by_addr.get(addr)
        return spec.name if spec else None

    def role_of(self, addr: NetAddress) -> Optional[str]:
        spec = self._by_addr.get(addr)
        return spec.role if spec else None

    def by_role(self, role: str) -> list[NodeSpec]:
        return [n for n in self.nodes if n.role == role]

    def one(self, role: str) -> NodeSpec:
        specs = self.by_role(role)
        if len(specs) != 1:
            raise ValueError(f"expected exactly one {role!r} node, found {len(specs)}")
        return specs[0]

    def link_latency(self, a: NetAddress, b: NetAddress) -> int:
        na, nb = self.name_of(a), self.name_of(b)
        return self.latency.get(frozenset((na, nb)), self.default_latency_ms)

    def knows(self, addr: NetAddress) -> bool:
        return addr in self._by_addr


# ---------------------------------------------------------------------------
# Wire events / trace substrate
# ---------------------------------------------------------------------------

Payload = Union[SipMessage, "CxPayload"]


@dataclass(frozen=True)
class CxPayload:
    """Cx-lite message as carried on the simulated wire (see hss module for
    the semantics; this wrapper only exists so traces can tag it)."""

    fields: tuple[tuple[str, object], ...]

    @classmethod
    def from_dict(cls, data: dict) -> "CxPayload":
        return cls(tuple(sorted(data.items())))

    def to_dict(self) -> dict:
        return dict(self.fields)

    def label(self) -> str:
        return str(self.to_dict().get("op", "CX"))


@dataclass
class WireEvent:
    seq: int
    time_ms: int
    src: NetAddress
    dst: NetAddress
    msg: Payload
    disposition: str  # "delivered" | "dropped"

    def to_dict(self) -> dict:
        if isinstance(self.msg, SipMessage):
            payload = {"proto": "sip", "text": serialize_message(self.msg).decode("utf-8", "replace")}
        else:
            payload = {"proto": "cx", "fields": self.msg.to_dict()}
        return {
            "seq": self.seq,
            "time_ms": self.time_ms,
            "src": self.src.render(),
            "dst": self.dst.render(),
            "disposition": self.disposition,
            "msg": payload,
        }


@dataclass
class Transition:
    time_ms: int
    node: str
    subject: str
    from_state: str
    to_state: str
    cause: str

    def to_dict(self) -> dict:
        return {
            "time_ms": self.time_ms,
            "node": self.node,
            "subject": self.subject,
            "from": self.from_state,
            "to": self.to_state,
            "cause": self.cause,
        }


class UnknownDestination(Exception):
    pass


class SimNetwork:
    """In-process network: applies per-link latency, seeded loss for SIP
    datagrams, and records every delivery/drop as a WireEvent."""

    def __init__(self, topology: Topology, scheduler: Scheduler, loss_seed: Optional[int] = None):
        self.topology = topology
        self.scheduler = scheduler
        self.wire_events: list[WireEvent] = []
        self.transitions: list[Transition] = []
        self._handlers: dict[NetAddress, Callable[[Payload, NetAddress], None]] = {}
        self._rng = random.Random(loss_seed if loss_seed is not None else topology.loss_seed)
        self._seq = 0
        self.on_event: Optional[Callable[[WireEvent], None]] = None

    def attach(self, addr: NetAddress, handler: Callable[[Payload, NetAddress], None]):
        self._handlers[addr] = handler

    def record_transition(self, node: str, subject: str, from_state: str, to_state: str, cause: str):
        self.transitions.append(
            Transition(self.scheduler.now_ms, node, subject, from_state, to_state, cause)
        )

    def send(self, src: NetAddress, dst: NetAddress, msg: Payload, *, reliable: bool = False):
        """Enqueue one message.  Loss applies only to unreliable (SIP/UDP)
        sends; Cx-lite models a TCP link and is always delivered."""
        if not self.topology.knows(dst):
            raise UnknownDestination(dst.render())
        latency = self.topology.link_latency(src, dst)
        dropped = (not reliable) and self.topology.p_loss > 0 and self._rng.random() < self.topology.p_loss

        def arrive():
            self._seq += 1
            event = WireEvent(
                seq=self._seq,
                time_ms=self.scheduler.now_ms,
                src=src,
                dst=dst,
                msg=msg,
                disposition="dropped" if dropped else "delivered",
            )
            self.wire_events.append(event)
            if self.on_event is not None:
                self.on_event(event)
            if not dropped:
                handler = self._handlers.get(dst)
                if handler is not None:
                    handler(msg, src)

        self.scheduler.call_later(latency, arrive)

    def transport_step(self, now_ms: int) -> list[WireEvent]:
        """Advance the shared event loop to now_ms and return the wire events
        recorded on the way: every in-flight message whose delivery time is
        due gets delivered (or dropped by the seeded loss draw).  Node timers
        share the same clock, so they fire interleaved, as in a full run."""
        mark = len(self.wire_events)
        self.scheduler.run(now_ms)
        if self.scheduler.now_ms < now_ms:
            self.scheduler.now_ms = now_ms
        return self.wire_events[mark:]


# ---------------------------------------------------------------------------
# Transactions
# ---------------------------------------------------------------------------

TRYING = "trying"
PROCEEDING = "proceeding"
COMPLETED = "completed"
TERMINATED = "terminated"

UNMATCHED = object()
ABSORBED = object()


@dataclass
class ClientTransaction:
    key: tuple[str, str]  # (branch, cseq method)
    request: SipMessage
    dst: NetAddress
    state: str = TRYING
    retransmit_count: int = 0
    next_fire_ms: int = 0
    started_ms: int = 0
    timer: Optional[TimerHandle] = None
    context: object = None  # caller correlation (e.g. proxy server-tx key)


@dataclass
class ServerTransaction:
    key: tuple[str, str]
    request: SipMessage
    src: NetAddress
    state: str = TRYING
    last_response: Optional[SipMessage] = None
    created_ms: int = 0


class Endpoint:
    """Per-node SIP endpoint: sends through the transport, owns the client
    and server transaction tables, and hands deduplicated messages to the
    node callbacks ``on_request(msg, src)``, ``on_response(tx, msg)`` and
    ``on_transaction_timeout(tx)``."""

    def __init__(
        self,
        name: str,
        address: NetAddress,
        network: SimNetwork,
        tokens: TokenSource,
        timers: TimerConfig = TimerConfig(),
    ):
        self.name = name
        self.address = address
        self.network = network
        self.scheduler = network.scheduler
        self.tokens = tokens
        self.timers = timers
        self.client_tx: dict[tuple[str, str], ClientTransaction] = {}
        self.server_tx: dict[tuple[str, str], ServerTransaction] = {}
        self.on_request: Callable[[SipMessage, NetAddress], None] = lambda m, s: None
        self.on_response: Callable[[ClientTransaction, SipMessage], None] = lambda t, m: None
        self.on_transaction_timeout: Callable[[ClientTransaction], None] = lambda t: None
        self.on_cx: Callable[[CxPayload, NetAddress], None] = lambda m, s: None
        self.on_unmatched_response: Callable[[SipMessage, NetAddress], None] = lambda m, s: None
        network.attach(address, self._on_wire)

    # -- sending ---------------------------------------------------------

    def send_request(self, req: SipMessage, dst: NetAddress, context: object = None) -> Optional[ClientTransaction]:
        """Transmit a request.  ACK and NOTIFY are fire-and-forget; anything
        else opens a retransmitting client transaction."""
        self.network.send(self.address, dst, req)
        if req.method in (Method.ACK, Method.NOTIFY):
            return None
        branch = req.top_via.branch or ""
        tx = ClientTransaction(
            key=(branch, req.cseq.method.value),
            request=req,
            dst=dst,
            state=TRYING,
            started_ms=self.scheduler.now_ms,
            context=context,
        )
        tx.next_fire_ms = self.scheduler.now_ms + self.timers.t1_ms
        tx.timer = self.scheduler.call_at(tx.next_fire_ms, lambda: self._on_timer(tx))
        self.client_tx[tx.key] = tx
        return tx

    def send_response(self, resp: SipMessage, server_key: Optional[tuple[str, str]] = None):
        """Send a response toward the top Via; remembered on the matching
        server transaction so duplicate requests can be answered."""
        dst = NetAddress(*resp.top_via.sent_by)
        key = server_key if server_key is not None else (resp.top_via.branch or "", resp.cseq.method.value)
        stx = self.server_tx.get(key)
        if stx is not None:
            stx.last_response = resp
            if resp.status is not None and resp.status >= 200:
                stx.state = COMPLETED
        self.network.send(self.address, dst, resp)

    # -- timers ----------------------------------------------------------

    def _on_timer(self, tx: ClientTransaction):
        if tx.state not in (TRYING,):
            return
        now = self.scheduler.now_ms
        budget_spent = now - tx.started_ms >= self.timers.transaction_timeout_ms
        if tx.retransmit_count >= self.timers.max_retransmits or budget_spent:
            tx.state = TERMINATED
            self.on_transaction_timeout(tx)
            return
        self.network.send(self.address, tx.dst, tx.request)
        tx.retransmit_count += 1
        interval = self.timers.interval_after(tx.retransmit_count)
        tx.next_fire_ms = now + interval
        tx.timer = self.scheduler.call_at(tx.next_fire_ms, lambda: self._on_timer(tx))

    # -- receiving -------------------------------------------------------

    def _on_wire(self, msg: Payload, src: NetAddress):
        if not isinstance(msg, SipMessage):
            self.on_cx(msg, src)
            return
        if msg.is_request:
            self._on_request_wire(msg, src)
        else:
            result = self.match_response(msg)
            if result is UNMATCHED:
                self.on_unmatched_response(msg, src)
                return
            if result is ABSORBED:
                return
            tx: ClientTransaction = result  # type: ignore[assignment]
            self.on_response(tx, msg)
            if tx.state == COMPLETED:
                tx.state = TERMINATED

    def _sweep_transactions(self):
        """Terminated state is kept around only as a duplicate-absorb window
        one transaction timeout long; stale entries are dropped so long-lived
        live nodes cannot mismatch an unrelated later branch."""
        now = self.scheduler.now_ms
        horizon = self.timers.transaction_timeout_ms
        for key in [k for k, s in self.server_tx.items() if now - s.created_ms > horizon]:
            del self.server_tx[key]
        for key in [
            k
            for k, t in self.client_tx.items()
            if t.state == TERMINATED and now - t.started_ms > horizon
        ]:
            del self.client_tx[key]

    def _on_request_wire(self, msg: SipMessage, src: NetAddress):
        self._sweep_transactions()
        if msg.method == Method.ACK:
            self.on_request(msg, src)
            return
        key = (msg.top_via.branch or "", msg.cseq.method.value)
        stx = self.server_tx.get(key)
        if stx is not None:
            # retransmission: replay the last response, never re-deliver
            if stx.last_response is not None:
                self.network.send(self.address, src, stx.last_response)
            return
        self.server_tx[key] = ServerTransaction(
            key=key, request=msg, src=src, created_ms=self.scheduler.now_ms
        )
        self.on_request(msg, src)

    def match_response(self, resp: SipMessage):
        """Match by top-Via branch + CSeq method.  Returns the transaction to
        deliver, ABSORBED for duplicate finals, or UNMATCHED."""
        key = (resp.top_via.branch or "", resp.cseq.method.value)
        tx = self.client_tx.get(key)
        if tx is None:
            return UNMATCHED
        if tx.state in (COMPLETED, TERMINATED):
            return ABSORBED
        if resp.status_class == 1:
            if tx.state == TRYING:
                tx.state = PROCEEDING
                if tx.timer is not None:
                    self.scheduler.cancel(tx.timer)
            return tx
        tx.state = COMPLETED
        if tx.timer is not None:
            self.scheduler.cancel(tx.timer)
        # delivered exactly once; the table entry then only absorbs duplicates
        return tx


@dataclass
class Subscription:
    """Event subscription dialog state shared by subscriber and notifier."""

    call_id: str
    local_tag: str
    remote_tag: Optional[str]
    event: str
    expires_at_ms: int
    state: str = "pending"  # pending | active | terminated

    def dialog_id(self) -> tuple[str, str, Optional[str]]:
        return (self.call_id, self.local_tag, self.remote_tag)
