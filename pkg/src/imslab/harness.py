"""Scenario runner and flow-conformance checker.

A scenario bundles a topology, subscriber/group fixtures, a timeline of
actor steps, the expected message flows and a seed. Running one boots every
node on the simulated network, replays the timeline in virtual time until
quiescence, and returns a Trace whose canonical JSON is byte-identical
across runs with the same scenario and seed.

Flow patterns assert ladder shapes: in exact mode the delivered events
between the pattern's roles must equal the steps one for one; in subsequence
mode the steps must embed in order. Mismatches report the first divergence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from .basic import BasicUa, ForwardingProxy, RedirectServer
from .cscf import IcscfNode, PcscfNode, ScscfNode, identity_of
from .endpoint import (
    NetAddress,
    Scheduler,
    SimNetwork,
    TimerConfig,
    TokenSource,
    Topology,
    Transition,
    WireEvent,
)
from .examas import ExamAsNode, HttpRequest
from .hss import HssNode, HssStore, SubscriberProfile, TriggerRule
from .sip import SipMessage, SipUri
from .ua import UaConfig, UserAgent
from .xdms import RESOURCE_LISTS_AUID, GroupList, XdmDocument, XdmsNode, XdmsStore

IMS_ROLES = ("ua", "pcscf", "icscf", "scscf", "hss", "xdms", "examas")


class ConfigInvalid(Exception):
    pass


class ScenarioStuck(Exception):
    pass


@dataclass(frozen=True)
class FlowStep:
    src: str  # node name or role
    dst: str
    kind: str  # method ("REGISTER"), status ("200"/"2xx"), or Cx op ("UAR")
    event: Optional[str] = None
    content_type: Optional[str] = None

    def to_dict(self) -> dict:
        out: dict = {"src": self.src, "dst": self.dst, "kind": self.kind}
        if self.event is not None:
            out["event"] = self.event
        if self.content_type is not None:
            out["content_type"] = self.content_type
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FlowStep":
        return cls(
            src=data["src"],
            dst=data["dst"],
            kind=data["kind"],
            event=data.get("event"),
            content_type=data.get("content_type"),
        )


@dataclass(frozen=True)
class FlowPattern:
    steps: tuple[FlowStep, ...]
    mode: str = "exact"  # "exact" | "subsequence"
    name: str = ""

    def __post_init__(self):
        if not self.steps:
            raise ConfigInvalid("a flow pattern needs at least one step")
        if self.mode not in ("exact", "subsequence"):
            raise ConfigInvalid(f"unknown match mode {self.mode!r}")

    def roles(self) -> set[str]:
        out = set()
        for step in self.steps:
            out.add(step.src)
            out.add(step.dst)
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "mode": self.mode, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, data: dict) -> "FlowPattern":
        return cls(
            steps=tuple(FlowStep.from_dict(s) for s in data["steps"]),
            mode=data.get("mode", "exact"),
            name=data.get("name", ""),
        )


@dataclass
class FlowMatch:
    ok: bool
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class Trace:
    name: str
    seed: int
    config_hash: str
    nodes: list[dict]
    wire_events: list[WireEvent]
    node_transitions: list[Transition]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "nodes": self.nodes,
            "wire_events": [e.to_dict() for e in self.wire_events],
            "node_transitions": [t.to_dict() for t in self.node_transitions],
        }

    def to_canonical_json(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    def names_of(self, addr: NetAddress) -> tuple[str, str]:
        for node in self.nodes:
            if node["host"] == addr.host and node["port"] == addr.port:
                return node["name"], node["role"]
        return (addr.render(), "")

    def delivered(self) -> list[WireEvent]:
        return [e for e in self.wire_events if e.disposition == "delivered"]


@dataclass(frozen=True)
class SubscriberSpec:
    impi: str
    impu: str
    passkey: str
    roles: tuple[str, ...] = ("student",)
    trigger_rules: tuple[dict, ...] = ()

    def to_dict(self) -> dict:
        return {
            "impi": self.impi,
            "impu": self.impu,
            "passkey": self.passkey,
            "roles": list(self.roles),
            "trigger_rules": [dict(r) for r in self.trigger_rules],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubscriberSpec":
        return cls(
            impi=data["impi"],
            impu=data["impu"],
            passkey=data["passkey"],
            roles=tuple(data.get("roles", ["student"])),
            trigger_rules=tuple(data.get("trigger_rules", [])),
        )


@dataclass(frozen=True)
class TimelineAction:
    at_ms: int
    actor: str
    action: str
    args: tuple[tuple[str, object], ...] = ()

    @classmethod
    def make(cls, at_ms: int, actor: str, action: str, **args) -> "TimelineAction":
        return cls(at_ms, actor, action, tuple(sorted(args.items())))

    def arg_dict(self) -> dict:
        return dict(self.args)

    def to_dict(self) -> dict:
        return {"at_ms": self.at_ms, "actor": self.actor, "action": self.action, "args": self.arg_dict()}

    @classmethod
    def from_dict(cls, data: dict) -> "TimelineAction":
        return cls.make(int(data["at_ms"]), data["actor"], data["action"], **data.get("args", {}))


@dataclass
class Scenario:
    name: str
    topology: Topology
    subscribers: list[SubscriberSpec] = field(default_factory=list)
    groups: dict[str, list[str]] = field(default_factory=dict)  # group uri -> member uris
    ua_options: dict[str, dict] = field(default_factory=dict)  # ua node name -> options
    timeline: list[TimelineAction] = field(default_factory=list)
    expectations: list[FlowPattern] = field(default_factory=list)
    seed: int = 1
    t_max_ms: int = 600_000
    allow_truncation: bool = False
    timers: TimerConfig = TimerConfig()

    def validate(self):
        names = {n.name for n in self.topology.nodes}
        last = None
        for action in self.timeline:
            if action.actor not in names:
                raise ConfigInvalid(f"timeline actor {action.actor!r} not in topology")
            if last is not None and action.at_ms < last:
                raise ConfigInvalid("timeline must be sorted by at_ms")
            last = action.at_ms

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "topology": self.topology.to_dict(),
            "subscribers": [s.to_dict() for s in self.subscribers],
            "groups": self.groups,
            "ua_options": self.ua_options,
            "timeline": [a.to_dict() for a in self.timeline],
            "expectations": [p.to_dict() for p in self.expectations],
            "seed": self.seed,
            "t_max_ms": self.t_max_ms,
            "allow_truncation": self.allow_truncation,
            "timers": {
                "t1_ms": self.timers.t1_ms,
                "t2_ms": self.timers.t2_ms,
                "max_retransmits": self.timers.max_retransmits,
                "transaction_timeout_ms": self.timers.transaction_timeout_ms,
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        timers = data.get("timers", {})
        return cls(
            name=data["name"],
            topology=Topology.from_dict(data["topology"]),
            subscribers=[SubscriberSpec.from_dict(s) for s in data.get("subscribers", [])],
            groups={k: list(v) for k, v in data.get("groups", {}).items()},
            ua_options={k: dict(v) for k, v in data.get("ua_options", {}).items()},
            timeline=[TimelineAction.from_dict(a) for a in data.get("timeline", [])],
            expectations=[FlowPattern.from_dict(p) for p in data.get("expectations", [])],
            seed=int(data.get("seed", 1)),
            t_max_ms=int(data.get("t_max_ms", 600_000)),
            allow_truncation=bool(data.get("allow_truncation", False)),
            timers=TimerConfig(
                t1_ms=int(timers.get("t1_ms", 500)),
                t2_ms=int(timers.get("t2_ms", 4000)),
                max_retransmits=int(timers.get("max_retransmits", 5)),
                transaction_timeout_ms=int(timers.get("transaction_timeout_ms", 32000)),
            ),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Scenario":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def build_nodes(
    scenario: Scenario,
    network_for: Callable[..., object],
    tokens_for: Callable[..., TokenSource],
) -> tuple[dict[str, object], Optional[HssStore]]:
    """Instantiate and wire every topology node.

    network_for(spec)/tokens_for(spec) let the caller decide whether nodes
    share one simulated network (SimRun) or each get a socket-backed one
    (live mode); the node classes are identical either way.
    """
    topo = scenario.topology
    timers = scenario.timers
    domain = topo.domain
    nodes: dict[str, object] = {}
    hss_store: Optional[HssStore] = None

    def optional_one(role: str) -> Optional[NetAddress]:
        specs = topo.by_role(role)
        return specs[0].address if specs else None

    hss_spec = topo.by_role("hss")
    if hss_spec:
        store = HssStore()
        for sub in scenario.subscribers:
            rules = []
            for rule in sub.trigger_rules:
                rule = dict(rule)
                if "target_node" in rule:
                    rule["target"] = topo.node(rule.pop("target_node")).address.render()
                rules.append(TriggerRule.from_dict(rule))
            store.provision_subscriber(
                SubscriberProfile.provisioned(
                    impi=sub.impi,
                    impus=[SipUri.parse(sub.impu)],
                    passkey=sub.passkey,
                    roles=set(sub.roles),
                    trigger_rules=rules,
                )
            )
        hss_store = store
        spec = hss_spec[0]
        nodes[spec.name] = HssNode(spec.name, spec.address, network_for(spec), tokens_for(spec), store)

    scscf_addr = optional_one("scscf")
    xdms_addr = optional_one("xdms")
    as_addr = optional_one("examas")
    hss_addr = optional_one("hss")

    for spec in topo.by_role("xdms"):
        node = XdmsNode(
            spec.name, spec.address, network_for(spec), tokens_for(spec),
            scscf_address=scscf_addr if scscf_addr else spec.address,
            home_domain=domain, timers=timers,
        )
        for group_uri, members in scenario.groups.items():
            group = GroupList(SipUri.parse(group_uri), tuple(SipUri.parse(m) for m in members))
            node.store.put_document(
                XdmDocument(
                    auid=RESOURCE_LISTS_AUID,
                    owner="sip:groups",
                    doc_name=SipUri.parse(group_uri).user or "group",
                    content_type="application/resource-lists+xml",
                    body=group.to_xml(),
                    etag="",
                )
            )
        nodes[spec.name] = node

    for spec in topo.by_role("scscf"):
        nodes[spec.name] = ScscfNode(
            spec.name, spec.address, network_for(spec), tokens_for(spec),
            hss_address=hss_addr if hss_addr else spec.address,
            as_address=as_addr, xdms_address=xdms_addr,
            home_domain=domain, timers=timers,
        )

    for spec in topo.by_role("icscf"):
        directory = {s.name: s.address for s in topo.by_role("scscf")}
        nodes[spec.name] = IcscfNode(
            spec.name, spec.address, network_for(spec), tokens_for(spec),
            hss_address=hss_addr if hss_addr else spec.address,
            scscf_directory=directory, timers=timers,
        )

    icscf_addr = optional_one("icscf")
    for spec in topo.by_role("pcscf"):
        nodes[spec.name] = PcscfNode(
            spec.name, spec.address, network_for(spec), tokens_for(spec),
            home_icscf=icscf_addr if icscf_addr else spec.address, timers=timers,
        )

    for spec in topo.by_role("examas"):
        xdms_nodes = [nodes[s.name] for s in topo.by_role("xdms")]
        nodes[spec.name] = ExamAsNode(
            spec.name, spec.address, network_for(spec), tokens_for(spec),
            scscf_address=scscf_addr if scscf_addr else spec.address,
            xdms_store=xdms_nodes[0].store if xdms_nodes else XdmsStore(tokens_for(spec)),
            hss_store=hss_store, home_domain=domain, timers=timers,
        )

    examas_nodes = [n for n in nodes.values() if isinstance(n, ExamAsNode)]
    http_port = examas_nodes[0].service.http_api if examas_nodes else None

    pcscf_addr = optional_one("pcscf")
    for spec in topo.by_role("ua"):
        options = scenario.ua_options.get(spec.name, {})
        identity = options.get("identity", f"sip:{spec.name}@{domain}")
        config = UaConfig(
            identity=SipUri.parse(identity),
            passkey=options.get("passkey", ""),
            pcscf=pcscf_addr if pcscf_addr else spec.address,
            local=spec.address,
            expires_s=int(options.get("expires_s", 3600)),
            auto_answer={str(k): int(v) for k, v in options["auto_answer"].items()}
            if options.get("auto_answer") is not None
            else None,
            auto_submit_channel=options.get("auto_submit_channel", "sip"),
            refresh_registration=bool(options.get("refresh_registration", False)),
        )
        nodes[spec.name] = UserAgent(
            spec.name, network_for(spec), tokens_for(spec), config, timers=timers, http_port=http_port
        )

    # standalone roles for the plain proxy/redirect call flows
    def identity_opt(s):
        return scenario.ua_options.get(s.name, {}).get("identity", f"sip:{s.name}@{domain}")

    locations = {identity_of(SipUri.parse(identity_opt(s))): s.address for s in topo.by_role("callee")}
    for spec in topo.by_role("proxy"):
        nodes[spec.name] = ForwardingProxy(
            spec.name, spec.address, network_for(spec), tokens_for(spec), locations, timers=timers
        )
    for spec in topo.by_role("redirect"):
        contacts = {}
        for s in topo.by_role("callee"):
            uri = SipUri.parse(identity_opt(s))
            contacts[identity_of(uri)] = SipUri(user=uri.user, host=s.host, port=s.port)
        nodes[spec.name] = RedirectServer(
            spec.name, spec.address, network_for(spec), tokens_for(spec), contacts
        )

    outbound = optional_one("proxy") or optional_one("redirect")
    for role in ("caller", "callee"):
        for spec in topo.by_role(role):
            nodes[spec.name] = BasicUa(
                spec.name, spec.address, network_for(spec), tokens_for(spec),
                identity=SipUri.parse(identity_opt(spec)),
                outbound=outbound if role == "caller" else None,
            )
    return nodes, hss_store


class SimRun:
    """A booted simulation: topology nodes wired up, timeline scheduled.
    Kept separate from run() so tests can poke at node state."""

    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        scenario.validate()
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.scheduler = Scheduler()
        self.tokens = TokenSource(self.seed)
        loss_seed = (self.seed * 1_000_003 + scenario.topology.loss_seed) & 0xFFFFFFFF
        self.network = SimNetwork(scenario.topology, self.scheduler, loss_seed=loss_seed)
        self.nodes, self.hss_store = build_nodes(
            scenario, lambda spec: self.network, lambda spec: self.tokens
        )
        self._schedule_timeline()

    # ------------------------------------------------------------------
    # timeline
    # ------------------------------------------------------------------

    def _schedule_timeline(self):
        for action in self.scenario.timeline:
            self.scheduler.call_at(action.at_ms, lambda a=action: run_action(self.nodes, a))

    def _finalize_transactions(self):
        """At quiescence nothing may be half-open: every client transaction
        has terminated and every server transaction was answered; answered
        ones close their duplicate-absorb window with the run."""
        for endpoint in _endpoints_of(self.nodes):
            for tx in endpoint.client_tx.values():
                if tx.state != "terminated":
                    raise ScenarioStuck(f"client transaction {tx.key} still {tx.state} at quiescence")
            for stx in endpoint.server_tx.values():
                if stx.last_response is None:
                    raise ScenarioStuck(f"server transaction {stx.key} never answered")
                stx.state = "terminated"

    # ------------------------------------------------------------------
    # run
    # ------------------------------------------------------------------

    def run(self, on_event: Optional[Callable[[WireEvent], None]] = None) -> Trace:
        self.network.on_event = on_event
        quiesced = self.scheduler.run(self.scenario.t_max_ms)
        if not quiesced and not self.scenario.allow_truncation:
            raise ScenarioStuck(
                f"{self.scenario.name}: {self.scheduler.pending} events still pending at t_max"
            )
        if quiesced:
            self._finalize_transactions()
        topo = self.scenario.topology
        return Trace(
            name=self.scenario.name,
            seed=self.seed,
            config_hash=self.scenario.config_hash(),
            nodes=[{"name": n.name, "role": n.role, "host": n.host, "port": n.port} for n in topo.nodes],
            wire_events=list(self.network.wire_events),
            node_transitions=list(self.network.transitions),
        )


def _endpoints_of(nodes: dict[str, object]):
    for node in nodes.values():
        endpoint = getattr(node, "endpoint", None)
        if endpoint is not None:
            yield endpoint


def run_action(nodes: dict[str, object], action: TimelineAction):
    """Dispatch one timeline step against a booted node set (sim or live)."""
    node = nodes.get(action.actor)
    if node is None:
        raise ConfigInvalid(f"no node for actor {action.actor!r}")
    args = action.arg_dict()
    if action.action == "register":
        node.register(expires_s=args.get("expires_s"))
    elif action.action == "deregister":
        node.deregister()
    elif action.action == "subscribe":
        node.subscribe_exam_service(expires_s=int(args.get("expires_s", 3600)))
    elif action.action == "unsubscribe":
        node.unsubscribe()
    elif action.action == "invite":
        node.invite(SipUri.parse(args["to"]))
    elif action.action == "submit":
        node.submit_answers(
            args["exam_id"],
            {str(k): int(v) for k, v in args["answers"].items()},
            args.get("channel", "sip"),
        )
    elif action.action == "provision_exam":
        _provision_exam(node, args)
    else:
        raise ConfigInvalid(f"unknown timeline action {action.action!r}")


def _provision_exam(node: ExamAsNode, args: dict):
    """Exercise the web path: login, then POST the exam spec."""
    api = node.service.http_api
    login = api(
        HttpRequest(
            method="POST",
            path="/api/login",
            body=json.dumps({"user": args["teacher"], "passkey": args["passkey"]}).encode("utf-8"),
        )
    )
    if login.status != 200:
        raise ConfigInvalid(f"provision_exam login failed: {login.body}")
    spec = {
        "title": args.get("title", "exam"),
        "group_uri": args["group_uri"],
        "questions": args["questions"],
        "open_at_ms": int(args["open_at_ms"]),
        "close_at_ms": int(args["close_at_ms"]),
    }
    created = api(
        HttpRequest(
            method="POST",
            path="/api/exams",
            headers={"Authorization": f"Bearer {login.body['token']}"},
            body=json.dumps(spec).encode("utf-8"),
        )
    )
    if created.status != 201:
        raise ConfigInvalid(f"provision_exam failed: {created.body}")


def run(scenario: Scenario, seed: Optional[int] = None) -> Trace:
    return SimRun(scenario, seed=seed).run()


# ---------------------------------------------------------------------------
# flow conformance
# ---------------------------------------------------------------------------


def _event_kind(event: WireEvent) -> tuple[str, Optional[str], Optional[str]]:
    """(kind label, Event header, content type) of one wire event."""
    msg = event.msg
    if isinstance(msg, SipMessage):
        if msg.is_request:
            return (msg.method.value, msg.event, msg.content_type)
        return (str(msg.status), msg.event, msg.content_type)
    return (msg.label(), None, None)


def _step_matches(step: FlowStep, event: WireEvent, trace: Trace) -> bool:
    src_name, src_role = trace.names_of(event.src)
    dst_name, dst_role = trace.names_of(event.dst)
    if step.src not in (src_name, src_role) or step.dst not in (dst_name, dst_role):
        return False
    kind, ev, ctype = _event_kind(event)
    if step.kind.endswith("xx") and len(step.kind) == 3:
        if not (kind.isdigit() and kind[0] == step.kind[0]):
            return False
    elif step.kind != kind:
        return False
    if step.event is not None and step.event != ev:
        return False
    if step.content_type is not None and step.content_type != ctype:
        return False
    return True


def _filter_events(trace: Trace, pattern: FlowPattern) -> list[WireEvent]:
    roles = pattern.roles()
    out = []
    for event in trace.delivered():
        src_name, src_role = trace.names_of(event.src)
        dst_name, dst_role = trace.names_of(event.dst)
        if (src_name in roles or src_role in roles) and (dst_name in roles or dst_role in roles):
            out.append(event)
    return out


def _describe(event: WireEvent, trace: Trace) -> str:
    src_name, _ = trace.names_of(event.src)
    dst_name, _ = trace.names_of(event.dst)
    kind, _, _ = _event_kind(event)
    return f"{kind} {src_name}->{dst_name}@{event.time_ms}ms"


def assert_flow(trace: Trace, pattern: FlowPattern) -> FlowMatch:
    events = _filter_events(trace, pattern)
    if pattern.mode == "exact":
        for i, step in enumerate(pattern.steps):
            if i >= len(events):
                return FlowMatch(False, f"step {i} ({step.kind} {step.src}->{step.dst}): no more events")
            if not _step_matches(step, events[i], trace):
                return FlowMatch(
                    False,
                    f"step {i} ({step.kind} {step.src}->{step.dst}) diverges: saw {_describe(events[i], trace)}",
                )
        if len(events) > len(pattern.steps):
            extra = _describe(events[len(pattern.steps)], trace)
            return FlowMatch(False, f"unexpected extra event after step {len(pattern.steps) - 1}: {extra}")
        return FlowMatch(True)
    # subsequence
    i = 0
    for event in events:
        if i < len(pattern.steps) and _step_matches(pattern.steps[i], event, trace):
            i += 1
    if i < len(pattern.steps):
        step = pattern.steps[i]
        return FlowMatch(False, f"step {i} ({step.kind} {step.src}->{step.dst}) never observed")
    return FlowMatch(True)


# ---------------------------------------------------------------------------
# ladder rendering
# ---------------------------------------------------------------------------

_COL_WIDTH = 16
_GUTTER = 9


def render_ladder(trace: Trace, roles: Optional[list[str]] = None) -> str:
    """Fixed-width message sequence chart; dropped events are marked with ✗."""
    columns = []
    for node in trace.nodes:
        if roles is None or node["role"] in roles or node["name"] in (roles or []):
            columns.append(node)
    index = {(n["host"], n["port"]): i for i, n in enumerate(columns)}

    def col_x(i: int) -> int:
        return _GUTTER + i * _COL_WIDTH

    header = " " * _GUTTER
    for node in columns:
        header += node["name"].ljust(_COL_WIDTH)
    lines = [header.rstrip()]

    for event in trace.wire_events:
        si = index.get((event.src.host, event.src.port))
        di = index.get((event.dst.host, event.dst.port))
        if si is None or di is None or si == di:
            continue
        width = max(col_x(max(si, di)) + 2, len(header))
        row = [" "] * width
        for i in range(len(columns)):
            row[col_x(i)] = "|"
        lo, hi = min(si, di), max(si, di)
        for x in range(col_x(lo) + 1, col_x(hi)):
            row[x] = "-"
        if di > si:
            row[col_x(hi) - 1] = ">"
        else:
            row[col_x(lo) + 1] = "<"
        kind, _, _ = _event_kind(event)
        label = kind if event.disposition == "delivered" else f"✗{kind}"
        mid = (col_x(lo) + col_x(hi)) // 2 - len(label) // 2
        for k, ch in enumerate(label):
            x = mid + k
            if col_x(lo) < x < col_x(hi):
                row[x] = ch
        time_part = f"{event.time_ms:>7}  "
        for k, ch in enumerate(time_part):
            if k < _GUTTER:
                row[k] = ch
        lines.append("".join(row).rstrip())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# builtin scenarios
# ---------------------------------------------------------------------------


def _standalone_topology(middle_role: str) -> Topology:
    return Topology.from_dict(
        {
            "domain": "lab.test",
            "nodes": [
                {"name": "caller", "role": "caller", "host": "127.0.0.1", "port": 7101},
                {"name": middle_role, "role": middle_role, "host": "127.0.0.1", "port": 7102},
                {"name": "callee", "role": "callee", "host": "127.0.0.1", "port": 7103},
            ],
            "loss": {"p": 0.0, "seed": 0},
        }
    )


def _ims_topology(ua_names: list[str], with_examas: bool = False, p_loss: float = 0.0) -> Topology:
    nodes = [
        {"name": "pcscf", "role": "pcscf", "host": "127.0.0.1", "port": 7001},
        {"name": "icscf", "role": "icscf", "host": "127.0.0.1", "port": 7002},
        {"name": "scscf-1", "role": "scscf", "host": "127.0.0.1", "port": 7003},
        {"name": "hss", "role": "hss", "host": "127.0.0.1", "port": 7004},
        {"name": "xdms", "role": "xdms", "host": "127.0.0.1", "port": 7005},
    ]
    if with_examas:
        nodes.append({"name": "examas", "role": "examas", "host": "127.0.0.1", "port": 7006})
    for i, name in enumerate(ua_names):
        nodes.append({"name": name, "role": "ua", "host": "127.0.0.1", "port": 7101 + i})
    return Topology.from_dict(
        {"domain": "ims.kau.test", "nodes": nodes, "loss": {"p": p_loss, "seed": 17}}
    )


def _exam_trigger_rule() -> dict:
    return {"priority": 1, "method": "MESSAGE", "uri_user": "exam", "target_node": "examas"}


def _subscriber(name: str, roles: tuple[str, ...] = ("student",), with_rule: bool = True) -> SubscriberSpec:
    return SubscriberSpec(
        impi=name,
        impu=f"sip:{name}@ims.kau.test",
        passkey=f"pk-{name}",
        roles=roles,
        trigger_rules=(_exam_trigger_rule(),) if with_rule else (),
    )


def _fig2_3_proxy_invite() -> Scenario:
    pattern = FlowPattern(
        name="proxy-invite-ladder",
        mode="exact",
        steps=(
            FlowStep("caller", "proxy", "INVITE"),
            FlowStep("proxy", "callee", "INVITE"),
            FlowStep("callee", "proxy", "200"),
            FlowStep("proxy", "caller", "200"),
            FlowStep("caller", "proxy", "ACK"),
            FlowStep("proxy", "callee", "ACK"),
        ),
    )
    return Scenario(
        name="fig2_3_proxy_invite",
        topology=_standalone_topology("proxy"),
        ua_options={
            "caller": {"identity": "sip:caller@lab.test"},
            "callee": {"identity": "sip:callee@lab.test"},
        },
        timeline=[TimelineAction.make(0, "caller", "invite", to="sip:callee@lab.test")],
        expectations=[pattern],
    )


def _fig5_6_redirect_invite() -> Scenario:
    pattern = FlowPattern(
        name="redirect-invite-ladder",
        mode="exact",
        steps=(
            FlowStep("caller", "redirect", "INVITE"),
            FlowStep("redirect", "caller", "302"),
            FlowStep("caller", "redirect", "ACK"),
            FlowStep("caller", "callee", "INVITE"),
            FlowStep("callee", "caller", "200"),
            FlowStep("caller", "callee", "ACK"),
        ),
    )
    return Scenario(
        name="fig5_6_redirect_invite",
        topology=_standalone_topology("redirect"),
        ua_options={
            "caller": {"identity": "sip:caller@lab.test"},
            "callee": {"identity": "sip:callee@lab.test"},
        },
        timeline=[TimelineAction.make(0, "caller", "invite", to="sip:callee@lab.test")],
        expectations=[pattern],
    )


def _registration_steps() -> tuple[FlowStep, ...]:
    return (
        FlowStep("ua", "pcscf", "REGISTER"),
        FlowStep("pcscf", "icscf", "REGISTER"),
        FlowStep("icscf", "hss", "UAR"),
        FlowStep("hss", "icscf", "UAA"),
        FlowStep("icscf", "scscf", "REGISTER"),
        FlowStep("scscf", "hss", "SAR"),
        FlowStep("hss", "scscf", "SAA"),
        FlowStep("scscf", "icscf", "200"),
        FlowStep("icscf", "pcscf", "200"),
        FlowStep("pcscf", "ua", "200"),
    )


def _fig10_register_subscribe() -> Scenario:
    pattern = FlowPattern(
        name="register-then-subscribe",
        mode="subsequence",
        steps=_registration_steps()
        + (
            FlowStep("ua", "pcscf", "SUBSCRIBE", event="exam-service"),
            FlowStep("pcscf", "scscf", "SUBSCRIBE", event="exam-service"),
            FlowStep("scscf", "xdms", "SUBSCRIBE", event="exam-service"),
            FlowStep("xdms", "scscf", "202"),
            FlowStep("xdms", "scscf", "NOTIFY"),
            FlowStep("scscf", "pcscf", "202"),
            FlowStep("scscf", "pcscf", "NOTIFY"),
            FlowStep("pcscf", "ua", "202"),
            FlowStep("pcscf", "ua", "NOTIFY"),
            FlowStep("ua", "pcscf", "200"),
        ),
    )
    return Scenario(
        name="fig10_register_subscribe",
        topology=_ims_topology(["s1"]),
        subscribers=[_subscriber("s1", with_rule=False)],
        groups={"sip:cs101@ims.kau.test": ["sip:s1@ims.kau.test"]},
        ua_options={"s1": {"identity": "sip:s1@ims.kau.test", "passkey": "pk-s1"}},
        timeline=[
            TimelineAction.make(0, "s1", "register"),
            TimelineAction.make(500, "s1", "subscribe"),
        ],
        expectations=[pattern],
    )


def _fig11_cscf_chain() -> Scenario:
    pattern = FlowPattern(name="cscf-registration-chain", mode="subsequence", steps=_registration_steps())
    return Scenario(
        name="fig11_cscf_chain",
        topology=_ims_topology(["s1"]),
        subscribers=[_subscriber("s1", with_rule=False)],
        groups={"sip:cs101@ims.kau.test": ["sip:s1@ims.kau.test"]},
        ua_options={"s1": {"identity": "sip:s1@ims.kau.test", "passkey": "pk-s1"}},
        timeline=[TimelineAction.make(0, "s1", "register")],
        expectations=[pattern],
    )


FIG8_ANSWER_KEY = {"q1": 0, "q2": 1, "q3": 0}
FIG8_QUESTIONS = [
    {"qid": "q1", "prompt": "2 + 2 = ?", "choices": ["4", "5", "22"], "correct_index": 0, "points": 1},
    {"qid": "q2", "prompt": "capital of France?", "choices": ["Rome", "Paris", "Lyon"], "correct_index": 1, "points": 1},
    {"qid": "q3", "prompt": "SIP transport here?", "choices": ["UDP", "TCP", "SCTP"], "correct_index": 0, "points": 1},
]
FIG8_AUTO_ANSWERS = {
    "s1": {"q1": 0, "q2": 1, "q3": 0},
    "s2": {"q1": 1, "q2": 1, "q3": 0},
    "s3": {"q1": 0, "q2": 0, "q3": 0},
    "s4": {"q1": 1, "q2": 0, "q3": 1},
    "s5": {"q1": 0, "q2": 1, "q3": 1},
    "s6": {"q1": 0, "q2": 1},
    "s7": {"q1": 2, "q2": 2, "q3": 2},
    "s8": {"q1": 0, "q2": 1, "q3": 0},
}


def fig8_exam_scenario(channel: str = "sip") -> Scenario:
    """The exam end-to-end fixture; channel picks how scripted students
    submit (sip or http), everything else identical."""
    students = [f"s{i}" for i in range(1, 11)]
    registered = students[:8]
    ua_options: dict[str, dict] = {
        "teacher": {"identity": "sip:teacher@ims.kau.test", "passkey": "pk-teacher"}
    }
    for name in students:
        options: dict = {"identity": f"sip:{name}@ims.kau.test", "passkey": f"pk-{name}"}
        if name in FIG8_AUTO_ANSWERS:
            options["auto_answer"] = FIG8_AUTO_ANSWERS[name]
            options["auto_submit_channel"] = channel
        ua_options[name] = options
    timeline = [TimelineAction.make(0, "teacher", "register")]
    timeline += [
        TimelineAction.make(100 * (i + 1), name, "register") for i, name in enumerate(registered)
    ]
    timeline.append(
        TimelineAction.make(
            1000,
            "examas",
            "provision_exam",
            teacher="sip:teacher@ims.kau.test",
            passkey="pk-teacher",
            title="midterm",
            group_uri="sip:cs101@ims.kau.test",
            questions=FIG8_QUESTIONS,
            open_at_ms=3000,
            close_at_ms=9000,
        )
    )
    pattern = FlowPattern(
        name="exam-e2e-keyline",
        mode="subsequence",
        steps=(
            FlowStep("ua", "pcscf", "REGISTER"),
            FlowStep("pcscf", "ua", "200"),
            FlowStep("examas", "scscf", "MESSAGE", content_type="application/exam+json"),
            FlowStep("scscf", "pcscf", "MESSAGE", content_type="application/exam+json"),
            FlowStep("pcscf", "ua", "MESSAGE", content_type="application/exam+json"),
            FlowStep("ua", "pcscf", "MESSAGE", content_type="application/exam-answers+json"),
            FlowStep("scscf", "examas", "MESSAGE", content_type="application/exam-answers+json"),
            FlowStep("examas", "scscf", "MESSAGE", content_type="application/exam-result+json"),
            FlowStep("pcscf", "ua", "MESSAGE", content_type="application/exam-result+json"),
        ),
    )
    return Scenario(
        name="fig8_exam_e2e",
        topology=_ims_topology(["teacher"] + students, with_examas=True),
        subscribers=[_subscriber("teacher", roles=("teacher",))]
        + [_subscriber(name) for name in students],
        groups={"sip:cs101@ims.kau.test": [f"sip:{name}@ims.kau.test" for name in students]},
        ua_options=ua_options,
        timeline=timeline,
        expectations=[pattern],
        t_max_ms=60_000,
    )


def _lossy_register() -> Scenario:
    pattern = FlowPattern(
        name="lossy-registration-completes",
        mode="subsequence",
        steps=(FlowStep("ua", "pcscf", "REGISTER"), FlowStep("pcscf", "ua", "200")),
    )
    return Scenario(
        name="lossy_register",
        topology=_ims_topology(["s1"], p_loss=0.2),
        subscribers=[_subscriber("s1", with_rule=False)],
        groups={"sip:cs101@ims.kau.test": ["sip:s1@ims.kau.test"]},
        ua_options={"s1": {"identity": "sip:s1@ims.kau.test", "passkey": "pk-s1"}},
        timeline=[TimelineAction.make(0, "s1", "register")],
        expectations=[pattern],
        seed=1,
        t_max_ms=120_000,
    )


def builtin_scenarios() -> dict[str, Scenario]:
    return {
        "fig2_3_proxy_invite": _fig2_3_proxy_invite(),
        "fig5_6_redirect_invite": _fig5_6_redirect_invite(),
        "fig10_register_subscribe": _fig10_register_subscribe(),
        "fig11_cscf_chain": _fig11_cscf_chain(),
        "fig8_exam_e2e": fig8_exam_scenario(),
        "lossy_register": _lossy_register(),
    }
