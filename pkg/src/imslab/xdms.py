"""XML document management server: exam documents, student group lists, and
the exam-service subscription handling.

Group lists are stored as minimal resource-list XML
(``<list uri="..."><entry uri="sip:..."/></list>``); exam documents are
opaque JSON bytes under the "exam-docs" application usage.  Every put bumps
the document's entity tag and notifies active watchers of that usage.

SUBSCRIBE handling implements the authorize-then-notify contract: the
subscriber must appear in at least one stored group; acceptance is a 202
followed immediately by one NOTIFY carrying the subscription state token.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from typing import Optional

from .endpoint import (
    Endpoint,
    NetAddress,
    SimNetwork,
    Subscription,
    TimerConfig,
    TokenSource,
)
from .cscf import EXAM_EVENT, identity_of
from .sip import Method, SipMessage, SipUri, make_response, make_request

EXAM_DOCS_AUID = "exam-docs"
RESOURCE_LISTS_AUID = "resource-lists"

DEFAULT_SUBSCRIPTION_S = 3600


class XdmsError(Exception):
    pass


class NotFound(XdmsError):
    pass


class EtagMismatch(XdmsError):
    pass


class MalformedGroupXml(XdmsError):
    pass


class UnknownGroup(XdmsError):
    pass


@dataclass(frozen=True)
class XdmDocument:
    auid: str
    owner: str
    doc_name: str
    content_type: str
    body: bytes
    etag: str

    def key(self) -> tuple[str, str, str]:
        return (self.auid, self.owner, self.doc_name)


@dataclass(frozen=True)
class GroupList:
    group_uri: SipUri
    members: tuple[SipUri, ...]

    def __post_init__(self):
        rendered = [m.render() for m in self.members]
        if len(set(rendered)) != len(rendered):
            raise MalformedGroupXml(f"duplicate members in {self.group_uri.render()}")

    @classmethod
    def parse_xml(cls, body: bytes) -> "GroupList":
        try:
            root = ET.fromstring(body.decode("utf-8"))
        except (ET.ParseError, UnicodeDecodeError) as exc:
            raise MalformedGroupXml(str(exc)) from None
        if root.tag != "list" or "uri" not in root.attrib:
            raise MalformedGroupXml("root element must be <list uri=...>")
        members = []
        for child in root:
            if child.tag != "entry" or "uri" not in child.attrib:
                raise MalformedGroupXml(f"unexpected element <{child.tag}>")
            members.append(SipUri.parse(child.attrib["uri"]))
        try:
            uri = SipUri.parse(root.attrib["uri"])
        except Exception as exc:
            raise MalformedGroupXml(str(exc)) from None
        return cls(group_uri=uri, members=tuple(members))

    def to_xml(self) -> bytes:
        root = ET.Element("list", uri=self.group_uri.render())
        for member in self.members:
            ET.SubElement(root, "entry", uri=member.render())
        return ET.tostring(root, encoding="utf-8")


class XdmsStore:
    """Document map keyed by (auid, owner, doc_name), with etag discipline."""

    def __init__(self, tokens: Optional[TokenSource] = None):
        self.tokens = tokens if tokens is not None else TokenSource()
        self.documents: dict[tuple[str, str, str], XdmDocument] = {}
        self.on_change = lambda doc: None  # set by the node for change NOTIFYs

    def put_document(self, doc: XdmDocument, if_etag: Optional[str] = None) -> str:
        key = doc.key()
        current = self.documents.get(key)
        if if_etag is not None and (current is None or current.etag != if_etag):
            raise EtagMismatch(f"{key}: expected {if_etag}, have {current.etag if current else None}")
        if doc.auid == RESOURCE_LISTS_AUID:
            GroupList.parse_xml(doc.body)  # reject unparseable group lists
        stored = replace(doc, etag=self.tokens.etag())
        self.documents[key] = stored
        self.on_change(stored)
        return stored.etag

    def get_document(self, auid: str, owner: str, doc_name: str) -> XdmDocument:
        doc = self.documents.get((auid, owner, doc_name))
        if doc is None:
            raise NotFound(f"{auid}/{owner}/{doc_name}")
        return doc

    def delete_document(self, auid: str, owner: str, doc_name: str):
        if (auid, owner, doc_name) not in self.documents:
            raise NotFound(f"{auid}/{owner}/{doc_name}")
        del self.documents[(auid, owner, doc_name)]

    def groups(self) -> list[GroupList]:
        out = []
        for doc in self.documents.values():
            if doc.auid == RESOURCE_LISTS_AUID:
                out.append(GroupList.parse_xml(doc.body))
        return out

    def resolve_group(self, group_uri: SipUri) -> list[SipUri]:
        wanted = identity_of(group_uri)
        for group in self.groups():
            if identity_of(group.group_uri) == wanted:
                return list(group.members)
        raise UnknownGroup(group_uri.render())

    def is_group_member(self, identity: str) -> bool:
        for group in self.groups():
            if any(identity_of(m) == identity for m in group.members):
                return True
        return False


class XdmsNode:
    """XDMS attached to the network: SUBSCRIBE/NOTIFY plus the document
    store.  Outbound requests (NOTIFYs) leave via the S-CSCF."""

    def __init__(
        self,
        name: str,
        address: NetAddress,
        network: SimNetwork,
        tokens: TokenSource,
        scscf_address: NetAddress,
        store: Optional[XdmsStore] = None,
        home_domain: str = "ims.kau.test",
        timers: TimerConfig = TimerConfig(),
    ):
        self.name = name
        self.address = address
        self.network = network
        self.tokens = tokens
        self.scscf_address = scscf_address
        self.store = store if store is not None else XdmsStore(tokens)
        self.store.on_change = self._on_document_change
        self.subscriptions: dict[str, Subscription] = {}  # subscriber identity -> dialog
        self.notify_cseq: dict[str, int] = {}
        self.service_uri = SipUri(user="exam", host=home_domain)
        self.endpoint = Endpoint(name, address, network, tokens, timers)
        self.endpoint.on_request = self.on_request

    # -- SIP side -----------------------------------------------------------

    def _sweep(self):
        now = self.network.scheduler.now_ms
        for identity in [s for s, sub in self.subscriptions.items() if sub.expires_at_ms <= now]:
            sub = self.subscriptions.pop(identity)
            self.network.record_transition(self.name, identity, sub.state, "terminated", "subscription-expiry")

    def on_request(self, msg: SipMessage, src: NetAddress):
        self._sweep()
        if msg.method == Method.SUBSCRIBE:
            self.handle_subscribe(msg)
        elif msg.method == Method.ACK:
            pass
        else:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))

    def handle_subscribe(self, msg: SipMessage):
        if msg.event != EXAM_EVENT:
            self.endpoint.send_response(make_response(msg, 480, to_tag=self.tokens.tag()))
            return
        subscriber = identity_of(msg.from_.uri)
        if not self.store.is_group_member(subscriber):
            self.endpoint.send_response(make_response(msg, 403, to_tag=self.tokens.tag()))
            return
        offered = msg.expires if msg.expires is not None else DEFAULT_SUBSCRIPTION_S
        terminating = offered == 0
        existing = self.subscriptions.get(subscriber)
        local_tag = existing.local_tag if existing is not None else self.tokens.tag()
        resp = make_response(msg, 202, to_tag=local_tag, expires=offered)
        self.endpoint.send_response(resp)
        if terminating:
            if existing is not None:
                del self.subscriptions[subscriber]
                self.network.record_transition(self.name, subscriber, existing.state, "terminated", "unsubscribe")
            self._notify(subscriber, msg, local_tag, "terminated")
            return
        sub = Subscription(
            call_id=msg.call_id,
            local_tag=local_tag,
            remote_tag=msg.from_.tag,
            event=EXAM_EVENT,
            expires_at_ms=self.network.scheduler.now_ms + offered * 1000,
            state="active",
        )
        self.subscriptions[subscriber] = sub
        self.network.record_transition(
            self.name, subscriber, "pending" if existing is None else existing.state, "active", "subscribe"
        )
        self._notify(subscriber, msg, local_tag, "active")

    def _notify(self, subscriber: str, subscribe_msg: SipMessage, local_tag: str, state: str):
        """One NOTIFY inside the subscription dialog, routed via the S-CSCF."""
        cseq = self.notify_cseq.get(subscriber, 0) + 1
        self.notify_cseq[subscriber] = cseq
        notify = make_request(
            Method.NOTIFY,
            subscribe_msg.from_.uri.without_params(),
            self.service_uri,
            subscribe_msg.from_.uri.without_params(),
            subscribe_msg.call_id,
            cseq,
            sent_by=(self.address.host, self.address.port),
            branch=self.tokens.branch(),
            from_tag=local_tag,
            to_tag=subscribe_msg.from_.tag,
            event=EXAM_EVENT,
            content_type="text/plain",
            body=state.encode("utf-8"),
        )
        self.endpoint.send_request(notify, self.scscf_address)

    def _on_document_change(self, doc: XdmDocument):
        """Watchers of the exam usage learn about new/changed documents."""
        if doc.auid != EXAM_DOCS_AUID:
            return
        for subscriber, sub in list(self.subscriptions.items()):
            if sub.state != "active":
                continue
            cseq = self.notify_cseq.get(subscriber, 0) + 1
            self.notify_cseq[subscriber] = cseq
            user = subscriber.split(":", 1)[1].split("@")[0]
            host = subscriber.split("@", 1)[1]
            notify = make_request(
                Method.NOTIFY,
                SipUri(user=user, host=host),
                self.service_uri,
                SipUri(user=user, host=host),
                sub.call_id,
                cseq,
                sent_by=(self.address.host, self.address.port),
                branch=self.tokens.branch(),
                from_tag=sub.local_tag,
                to_tag=sub.remote_tag,
                event=EXAM_EVENT,
                content_type="text/plain",
                body=b"active",
            )
            self.endpoint.send_request(notify, self.scscf_address)
