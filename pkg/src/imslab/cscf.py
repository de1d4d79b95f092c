"""The three CSCF state machines.

P-CSCF: the edge proxy every UA message traverses.  It forwards REGISTERs to
the home I-CSCF, learns each identity's serving CSCF from the Service-Route
header of the 200-REGISTER passing back through it, routes later upstream
requests straight to that S-CSCF, and routes downstream requests to the UA
addresses it saw register.

I-CSCF: registration locator and topology hider.  It queries the HSS (UAR)
to pick the serving CSCF for a REGISTER, LIR for anything else, and inserts
nothing but its own Via.

S-CSCF: registrar and service router.  REGISTER authentication is delegated
to the HSS via SAR (the offered passkey rides in the X-Passkey header);
bindings expire lazily at routing time plus an eager sweep on every
activation.  Non-REGISTER requests run the subscriber's trigger rules (first
match forwards to the application server), exam-service SUBSCRIBEs go to the
XDMS, and everything else is terminating-routed to the binding's P-CSCF.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .endpoint import (
    Endpoint,
    NetAddress,
    SimNetwork,
    TimerConfig,
    TokenSource,
    UnknownDestination,
    ClientTransaction,
)
from .hss import CxClient, CxMessage, SUCCESS, AUTH_REJECTED, TriggerRule
from .sip import Method, SipMessage, SipUri, Via, make_response

PASSKEY_HEADER = "X-Passkey"
SERVICE_ROUTE_HEADER = "Service-Route"
EXAM_EVENT = "exam-service"

MAX_REGISTRATION_S = 3600


def identity_of(uri: SipUri) -> str:
    """Canonical public-identity key: user@host, ports and params ignored."""
    return f"sip:{uri.user}@{uri.host}" if uri.user else f"sip:{uri.host}"


class ProxyBase:
    """Shared proxy behaviour: Via push/pop, Max-Forwards policing, response
    forwarding (stateless, by Via) and 408 generation on upstream timeout."""

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
        self.tokens = tokens
        self.endpoint = Endpoint(name, address, network, tokens, timers)
        self.endpoint.on_request = self.on_request
        self.endpoint.on_response = self._on_response
        self.endpoint.on_unmatched_response = lambda msg, src: self._forward_response(msg)
        self.endpoint.on_transaction_timeout = self._on_upstream_timeout

    # -- request side ------------------------------------------------------

    def on_request(self, msg: SipMessage, src: NetAddress):
        raise NotImplementedError

    def _check_max_forwards(self, msg: SipMessage) -> Optional[SipMessage]:
        """Returns the decremented request, or None after responding 480."""
        mf = msg.max_forwards if msg.max_forwards is not None else 70
        if mf == 0:
            self._respond(msg, 480)
            return None
        return msg.with_max_forwards(mf - 1)

    def _forward(self, msg: SipMessage, dst: NetAddress) -> Optional[ClientTransaction]:
        via = Via(host=self.address.host, port=self.address.port, params=(("branch", self.tokens.branch()),))
        context = (msg.top_via.branch or "", msg.cseq.method.value)
        try:
            return self.endpoint.send_request(msg.with_via_pushed(via), dst, context=context)
        except UnknownDestination:
            self._respond(msg, 500)
            return None

    def _respond(self, req: SipMessage, status: int, **kwargs):
        if req.method == Method.ACK:
            return
        resp = make_response(req, status, to_tag=self.tokens.tag(), **kwargs)
        self.endpoint.send_response(resp)

    # -- response side ------------------------------------------------------

    def _on_response(self, tx: ClientTransaction, resp: SipMessage):
        self._forward_response(resp)

    def _forward_response(self, resp: SipMessage):
        if resp.top_via.sent_by != (self.address.host, self.address.port):
            return  # misrouted; not ours to forward
        inner = resp.with_top_via_popped()
        if not inner.vias:
            return
        self.endpoint.send_response(inner)

    def _on_upstream_timeout(self, tx: ClientTransaction):
        key = tx.context
        stx = self.endpoint.server_tx.get(key) if key is not None else None
        if stx is not None and stx.last_response is None:
            resp = make_response(stx.request, 408, to_tag=self.tokens.tag())
            self.endpoint.send_response(resp, server_key=stx.key)


@dataclass
class UaRoute:
    address: NetAddress
    expires_at_ms: int


class PcscfNode(ProxyBase):
    """Edge proxy: the first and last IMS hop for every UA."""

    def __init__(self, name, address, network, tokens, home_icscf: NetAddress, timers=TimerConfig()):
        super().__init__(name, address, network, tokens, timers)
        self.home_icscf = home_icscf
        self.ua_routes: dict[str, UaRoute] = {}
        self.scscf_for: dict[str, NetAddress] = {}

    def _sweep(self):
        now = self.network.scheduler.now_ms
        for identity in [k for k, v in self.ua_routes.items() if v.expires_at_ms <= now]:
            del self.ua_routes[identity]
            self.scscf_for.pop(identity, None)
            self.network.record_transition(self.name, identity, "routed", "expired", "registration-expiry")

    def _is_core(self, src: NetAddress) -> bool:
        return src == self.home_icscf or src in self.scscf_for.values()

    def on_request(self, msg: SipMessage, src: NetAddress):
        self._sweep()
        checked = self._check_max_forwards(msg)
        if checked is None:
            return
        if self._is_core(src):
            self._route_to_ua(checked)
        else:
            self._route_upstream(checked)

    def _route_upstream(self, msg: SipMessage):
        if msg.method == Method.REGISTER:
            self._forward(msg, self.home_icscf)
            return
        identity = identity_of(msg.from_.uri)
        scscf = self.scscf_for.get(identity)
        if scscf is None:
            self._respond(msg, 404)
            return
        self._forward(msg, scscf)

    def _route_to_ua(self, msg: SipMessage):
        identity = identity_of(msg.request_uri) if msg.request_uri else ""
        route = self.ua_routes.get(identity)
        if route is None:
            self._respond(msg, 404)
            return
        self._forward(msg, route.address)

    def _on_response(self, tx: ClientTransaction, resp: SipMessage):
        if resp.cseq.method == Method.REGISTER and resp.status == 200:
            self._learn_registration(tx.request, resp)
        self._forward_response(resp)

    def _learn_registration(self, req: SipMessage, resp: SipMessage):
        identity = identity_of(req.to.uri)
        granted = resp.expires if resp.expires is not None else 0
        if granted == 0:
            if identity in self.ua_routes:
                del self.ua_routes[identity]
                self.scscf_for.pop(identity, None)
                self.network.record_transition(self.name, identity, "routed", "removed", "deregister")
            return
        if req.contact is None:
            return
        ua_addr = NetAddress(req.contact.host, req.contact.effective_port)
        fresh = identity not in self.ua_routes
        self.ua_routes[identity] = UaRoute(ua_addr, self.network.scheduler.now_ms + granted * 1000)
        service_route = resp.header(SERVICE_ROUTE_HEADER)
        if service_route is not None:
            uri = SipUri.parse(service_route)
            self.scscf_for[identity] = NetAddress(uri.host, uri.effective_port)
        if fresh:
            self.network.record_transition(self.name, identity, "unknown", "routed", "register")


class IcscfNode(ProxyBase):
    """Registration locator: asks the HSS which S-CSCF serves an identity and
    proxies toward it, revealing nothing but its own Via."""

    def __init__(
        self,
        name,
        address,
        network,
        tokens,
        hss_address: NetAddress,
        scscf_directory: dict[str, NetAddress],
        timers=TimerConfig(),
    ):
        super().__init__(name, address, network, tokens, timers)
        self.scscf_directory = dict(scscf_directory)
        self.cx = CxClient(self.endpoint, hss_address)
        self.endpoint.on_cx = lambda payload, src: self.cx.on_answer(payload)

    def on_request(self, msg: SipMessage, src: NetAddress):
        checked = self._check_max_forwards(msg)
        if checked is None:
            return
        impu = identity_of(checked.to.uri if checked.method == Method.REGISTER else checked.request_uri or checked.to.uri)
        op = "UAR" if checked.method == Method.REGISTER else "LIR"
        query = CxMessage(op=op, cid=self.tokens.cx_id(), impu=impu)
        sent = self.cx.request(query, lambda answer: self._on_locate(checked, answer))
        if not sent:
            self._respond(checked, 500)

    def _on_locate(self, msg: SipMessage, answer: CxMessage):
        if answer.result != SUCCESS:
            self._respond(msg, 404)
            return
        target = self.scscf_directory.get(answer.scscf_name or "")
        if target is None:
            self._respond(msg, 500)
            return
        self._forward(msg, target)


@dataclass
class Binding:
    contact: NetAddress
    pcscf: NetAddress
    expires_at_ms: int


class ScscfNode(ProxyBase):
    """Registrar and service router."""

    def __init__(
        self,
        name,
        address,
        network,
        tokens,
        hss_address: NetAddress,
        as_address: Optional[NetAddress] = None,
        xdms_address: Optional[NetAddress] = None,
        home_domain: str = "ims.kau.test",
        timers=TimerConfig(),
    ):
        super().__init__(name, address, network, tokens, timers)
        self.as_address = as_address
        self.xdms_address = xdms_address
        self.home_domain = home_domain
        self.bindings: dict[str, Binding] = {}
        self.service_profiles: dict[str, dict] = {}
        self.cx = CxClient(self.endpoint, hss_address)
        self.endpoint.on_cx = lambda payload, src: self.cx.on_answer(payload)

    # -- registrar ----------------------------------------------------------

    def _sweep(self):
        now = self.network.scheduler.now_ms
        for identity in [k for k, v in self.bindings.items() if v.expires_at_ms <= now]:
            del self.bindings[identity]
            self.network.record_transition(self.name, identity, "bound", "expired", "binding-expiry")

    def on_request(self, msg: SipMessage, src: NetAddress):
        self._sweep()
        checked = self._check_max_forwards(msg)
        if checked is None:
            return
        if checked.method == Method.REGISTER:
            self.handle_register(checked)
        else:
            self.route(checked, src)

    def handle_register(self, msg: SipMessage):
        offered = msg.expires if msg.expires is not None else MAX_REGISTRATION_S
        deregister = offered == 0
        if not deregister and msg.contact is None:
            self._respond(msg, 480)
            return
        impu = identity_of(msg.to.uri)
        query = CxMessage(
            op="SAR",
            cid=self.tokens.cx_id(),
            impu=impu,
            scscf_name=self.name,
            assignment="deregister" if deregister else "register",
            passkey_offer=msg.header(PASSKEY_HEADER),
        )
        granted = min(offered, MAX_REGISTRATION_S)
        if not self.cx.request(query, lambda answer: self._on_saa(msg, impu, granted, answer)):
            self._respond(msg, 500)

    def _on_saa(self, msg: SipMessage, impu: str, granted: int, answer: CxMessage):
        self._sweep()
        if answer.result == AUTH_REJECTED:
            self._respond(msg, 403)
            return
        if answer.result != SUCCESS:
            self._respond(msg, 404)
            return
        if answer.profile is not None:
            self.service_profiles[impu] = answer.profile
        if granted == 0:
            if impu in self.bindings:
                del self.bindings[impu]
                self.network.record_transition(self.name, impu, "bound", "removed", "deregister")
            self._respond(msg, 200, expires=0)
            return
        assert msg.contact is not None
        contact = NetAddress(msg.contact.host, msg.contact.effective_port)
        pcscf = NetAddress(*msg.vias[-2].sent_by) if len(msg.vias) >= 2 else contact
        fresh = impu not in self.bindings
        self.bindings[impu] = Binding(contact, pcscf, self.network.scheduler.now_ms + granted * 1000)
        if fresh:
            self.network.record_transition(self.name, impu, "unbound", "bound", "register")
        self._respond(
            msg,
            200,
            expires=granted,
            extra_headers=((SERVICE_ROUTE_HEADER, f"<sip:{self.address.host}:{self.address.port}>"),),
        )

    # -- service routing ------------------------------------------------------

    def evaluate_ifc(self, profile: Optional[dict], msg: SipMessage) -> list[NetAddress]:
        """Trigger rules in ascending priority, ties by declaration order; the
        testbed forwards to at most one AS."""
        if not profile:
            return []
        rules = [TriggerRule.from_dict(r) for r in profile.get("trigger_rules", [])]
        order = sorted(range(len(rules)), key=lambda i: (rules[i].priority, i))
        target_uri = msg.request_uri or msg.to.uri
        for i in order:
            if rules[i].matches(msg.method, msg.event, target_uri):
                return [rules[i].target]
        return []

    def route(self, msg: SipMessage, src: NetAddress):
        from_service = src in (self.as_address, self.xdms_address)
        if not from_service:
            profile = self.service_profiles.get(identity_of(msg.from_.uri))
            targets = self.evaluate_ifc(profile, msg)
            if targets:
                self._forward(msg, targets[0])
                return
            if msg.method == Method.SUBSCRIBE and msg.event == EXAM_EVENT and self.xdms_address is not None:
                self._forward(msg, self.xdms_address)
                return
        self._route_terminating(msg)

    def _route_terminating(self, msg: SipMessage):
        uri = msg.request_uri
        if uri is None or uri.host != self.home_domain:
            self._respond(msg, 404)
            return
        binding = self.bindings.get(identity_of(uri))
        if binding is None:
            self._respond(msg, 480)
            return
        self._forward(msg, binding.pcscf)
