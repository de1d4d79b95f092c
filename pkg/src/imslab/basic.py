"""Standalone SIP roles for the plain proxy and redirect call flows.

These run outside the IMS chain: a caller UA, an auto-answering callee UA, a
forwarding proxy with a static location table, and a redirect server that
answers INVITEs with 302 + Contact and forwards nothing.
"""

from __future__ import annotations

from typing import Optional

from .cscf import ProxyBase, identity_of
from .endpoint import ClientTransaction, Endpoint, NetAddress, TimerConfig
from .sip import Method, SipMessage, SipUri, make_request, make_response


class ForwardingProxy(ProxyBase):
    """Resolves the request URI against a static location table and forwards;
    responses retrace the Via path."""

    def __init__(self, name, address, network, tokens, locations: dict[str, NetAddress], timers=TimerConfig()):
        super().__init__(name, address, network, tokens, timers)
        self.locations = dict(locations)

    def on_request(self, msg: SipMessage, src: NetAddress):
        checked = self._check_max_forwards(msg)
        if checked is None:
            return
        target = self.locations.get(identity_of(checked.request_uri)) if checked.request_uri else None
        if target is None:
            self._respond(checked, 404)
            return
        self._forward(checked, target)


class RedirectServer:
    """Answers INVITE with 302 carrying the moved-to Contact; never forwards."""

    def __init__(self, name, address, network, tokens, contacts: dict[str, SipUri]):
        self.name = name
        self.address = address
        self.network = network
        self.tokens = tokens
        self.contacts = dict(contacts)
        self.invites_received = 0
        self.endpoint = Endpoint(name, address, network, tokens)
        self.endpoint.on_request = self.on_request

    def on_request(self, msg: SipMessage, src: NetAddress):
        if msg.method == Method.ACK:
            return
        if msg.method != Method.INVITE:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))
            return
        self.invites_received += 1
        contact = self.contacts.get(identity_of(msg.request_uri)) if msg.request_uri else None
        if contact is None:
            self.endpoint.send_response(make_response(msg, 404, to_tag=self.tokens.tag()))
            return
        resp = make_response(msg, 302, to_tag=self.tokens.tag(), contact=contact)
        self.endpoint.send_response(resp)


class BasicUa:
    """Caller/callee UA for the standalone flows: sends INVITE through an
    outbound hop, follows one 302 redirect, ACKs finals; answers incoming
    INVITEs with 200 immediately."""

    def __init__(self, name, address, network, tokens, identity: SipUri, outbound: Optional[NetAddress] = None):
        self.name = name
        self.address = address
        self.network = network
        self.tokens = tokens
        self.identity = identity
        self.outbound = outbound
        self.calls: dict[str, str] = {}  # call id -> state
        self.endpoint = Endpoint(name, address, network, tokens)
        self.endpoint.on_request = self.on_request
        self.endpoint.on_response = self.on_response
        self.endpoint.on_transaction_timeout = self.on_timeout

    def _sent_by(self) -> tuple[str, int]:
        return (self.address.host, self.address.port)

    def invite(self, target: SipUri, dst: Optional[NetAddress] = None, call_id: Optional[str] = None, cseq: int = 1):
        call_id = call_id or self.tokens.call_id()
        req = make_request(
            Method.INVITE,
            target,
            self.identity,
            target,
            call_id,
            cseq,
            sent_by=self._sent_by(),
            branch=self.tokens.branch(),
            from_tag=self.tokens.tag(),
            contact=SipUri(user=self.identity.user, host=self.address.host, port=self.address.port),
        )
        self.calls[call_id] = "inviting"
        self.endpoint.send_request(req, dst or self.outbound or NetAddress(target.host, target.effective_port))

    def on_response(self, tx: ClientTransaction, resp: SipMessage):
        if resp.cseq.method != Method.INVITE or resp.status_class == 1:
            return
        ack = make_request(
            Method.ACK,
            tx.request.request_uri,
            self.identity,
            resp.to.uri,
            resp.call_id,
            resp.cseq.number,
            sent_by=self._sent_by(),
            branch=self.tokens.branch(),
            from_tag=resp.from_.tag,
            to_tag=resp.to.tag,
        )
        self.endpoint.send_request(ack, tx.dst)
        if resp.status == 200:
            self.calls[resp.call_id] = "established"
        elif resp.status == 302 and resp.contact is not None:
            # re-send the INVITE straight to the address learned from Contact
            self.calls[resp.call_id] = "redirected"
            self.invite(
                resp.contact.without_params(),
                dst=NetAddress(resp.contact.host, resp.contact.effective_port),
                call_id=resp.call_id,
                cseq=resp.cseq.number + 1,
            )
        else:
            self.calls[resp.call_id] = f"failed-{resp.status}"

    def on_request(self, msg: SipMessage, src: NetAddress):
        if msg.method == Method.INVITE:
            self.calls[msg.call_id] = "answered"
            resp = make_response(
                msg,
                200,
                to_tag=self.tokens.tag(),
                contact=SipUri(user=self.identity.user, host=self.address.host, port=self.address.port),
            )
            self.endpoint.send_response(resp)
        elif msg.method == Method.BYE:
            self.endpoint.send_response(make_response(msg, 200, to_tag=self.tokens.tag()))
            self.calls[msg.call_id] = "closed"
        # ACK: absorbed silently

    def on_timeout(self, tx: ClientTransaction):
        self.calls[tx.request.call_id] = "timeout"
