"""SIP message model, wire-format parser and canonical serializer.

The testbed speaks a fixed subset of the SIP/2.0 text grammar: CRLF-terminated
lines, a request or status start line, "Name: value" headers, a blank line and
an opaque byte body.  Mandatory headers on every wire message are Via, From,
To, Call-ID and CSeq; Content-Length always matches the body length.  Header
names are matched case-insensitively and emitted in canonical casing; headers
outside the known set are carried opaquely in declaration order, so
parse -> serialize -> parse is a fixpoint on every valid message.

Compact header forms ("v:" for Via) are not expanded: they fall through as
opaque headers and the mandatory-header check rejects the message.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional

CRLF = "\r\n"
SIP_VERSION = "SIP/2.0"
BRANCH_PREFIX = "z9hG4bK"

DEFAULT_SIP_PORT = 5060
MAX_FORWARDS_DEFAULT = 70


class Method(str, Enum):
    REGISTER = "REGISTER"
    SUBSCRIBE = "SUBSCRIBE"
    NOTIFY = "NOTIFY"
    MESSAGE = "MESSAGE"
    INVITE = "INVITE"
    ACK = "ACK"
    BYE = "BYE"

    def __str__(self) -> str:
        return self.value


# Status codes the testbed emits; reason phrases are fixed so serialization
# is canonical.
REASON_PHRASES = {
    100: "Trying",
    180: "Ringing",
    200: "OK",
    202: "Accepted",
    302: "Moved Temporarily",
    401: "Unauthorized",
    403: "Forbidden",
    404: "Not Found",
    408: "Request Timeout",
    480: "Temporarily Unavailable",
    500: "Server Internal Error",
}


class SipParseError(Exception):
    """Base class for all wire-format rejections."""


class MalformedStartLine(SipParseError):
    pass


class MissingMandatoryHeader(SipParseError):
    """A mandatory header is absent, duplicated or unusable."""

    def __init__(self, name: str, detail: str = "missing"):
        super().__init__(f"{name}: {detail}")
        self.name = name


class BodyLengthMismatch(SipParseError):
    pass


class UnknownMethod(SipParseError):
    pass


class NotARequest(Exception):
    """make_response was handed something that is not a request."""


_URI_USER_SAFE = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-_.+!~*'()"
)

_HOST_CHARS = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-._")


def _valid_host(host: str) -> bool:
    return bool(host) and all(ch in _HOST_CHARS for ch in host)


def _escape_user(user: str) -> str:
    out = []
    for ch in user:
        if ch in _URI_USER_SAFE:
            out.append(ch)
        else:
            out.extend("%%%02X" % b for b in ch.encode("utf-8"))
    return "".join(out)


def _unescape_user(raw: str) -> str:
    if "%" not in raw:
        return raw
    buf = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "%":
            hex2 = raw[i + 1 : i + 3]
            if len(hex2) != 2 or any(c not in "0123456789abcdefABCDEF" for c in hex2):
                raise MalformedStartLine(f"bad %-escape in uri user: {raw!r}")
            buf.append(int(hex2, 16))
            i += 3
        else:
            buf.extend(ch.encode("utf-8"))
            i += 1
    return buf.decode("utf-8")


Params = tuple[tuple[str, Optional[str]], ...]


def _format_params(params: Params) -> str:
    parts = []
    for name, value in params:
        parts.append(f";{name}" if value is None else f";{name}={value}")
    return "".join(parts)


def _parse_params(chunks: Iterable[str]) -> Params:
    out = []
    for chunk in chunks:
        chunk = chunk.strip()
        if not chunk:
            continue
        if "=" in chunk:
            name, value = chunk.split("=", 1)
            out.append((name.strip(), value.strip()))
        else:
            out.append((chunk, None))
    return tuple(out)


@dataclass(frozen=True)
class SipUri:
    """sip:user@host:port;params -- the only URI scheme the testbed routes."""

    user: Optional[str]
    host: str
    port: Optional[int] = None
    params: Params = ()
    scheme: str = "sip"

    def __post_init__(self):
        if not _valid_host(self.host):
            raise ValueError(f"invalid SipUri host: {self.host!r}")
        if self.port is not None and not 1 <= self.port <= 65535:
            raise ValueError(f"SipUri port out of range: {self.port}")

    @classmethod
    def parse(cls, raw: str) -> "SipUri":
        raw = raw.strip()
        if raw.startswith("<") and raw.endswith(">"):
            raw = raw[1:-1]
        if not raw.startswith("sip:"):
            raise MalformedStartLine(f"unsupported uri scheme: {raw!r}")
        rest = raw[4:]
        chunks = rest.split(";")
        core, params = chunks[0], _parse_params(chunks[1:])
        user: Optional[str] = None
        if "@" in core:
            user_raw, core = core.rsplit("@", 1)
            user = _unescape_user(user_raw)
        port: Optional[int] = None
        host = core
        if ":" in core:
            host, port_raw = core.rsplit(":", 1)
            try:
                port = int(port_raw)
            except ValueError:
                raise MalformedStartLine(f"bad uri port: {raw!r}") from None
        if not host:
            raise MalformedStartLine(f"empty uri host: {raw!r}")
        try:
            return cls(user=user, host=host, port=port, params=params)
        except ValueError as exc:
            raise MalformedStartLine(str(exc)) from None

    @property
    def effective_port(self) -> int:
        return self.port if self.port is not None else DEFAULT_SIP_PORT

    def without_params(self) -> "SipUri":
        return replace(self, params=())

    def render(self) -> str:
        core = f"sip:{_escape_user(self.user)}@{self.host}" if self.user else f"sip:{self.host}"
        if self.port is not None:
            core += f":{self.port}"
        return core + _format_params(self.params)

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Via:
    """One Via hop: protocol, sent-by address and parameters (branch first)."""

    host: str
    port: int = DEFAULT_SIP_PORT
    params: Params = ()
    protocol: str = "SIP/2.0/UDP"

    @classmethod
    def parse(cls, raw: str) -> "Via":
        chunks = raw.strip().split(";")
        head = chunks[0].split()
        if len(head) != 2:
            raise MissingMandatoryHeader("Via", f"unparseable entry: {raw!r}")
        protocol, sent_by = head
        if protocol != "SIP/2.0/UDP":
            raise MissingMandatoryHeader("Via", f"unsupported protocol: {protocol!r}")
        port = DEFAULT_SIP_PORT
        host = sent_by
        if ":" in sent_by:
            host, port_raw = sent_by.rsplit(":", 1)
            try:
                port = int(port_raw)
            except ValueError:
                raise MissingMandatoryHeader("Via", f"bad port: {raw!r}") from None
        if not _valid_host(host) or not 1 <= port <= 65535:
            raise MissingMandatoryHeader("Via", f"bad sent-by: {raw!r}")
        return cls(host=host, port=port, params=_parse_params(chunks[1:]), protocol=protocol)

    @property
    def branch(self) -> Optional[str]:
        for name, value in self.params:
            if name == "branch":
                return value
        return None

    @property
    def sent_by(self) -> tuple[str, int]:
        return (self.host, self.port)

    def render(self) -> str:
        return f"{self.protocol} {self.host}:{self.port}" + _format_params(self.params)


@dataclass(frozen=True)
class NameAddr:
    """From/To header value: a URI plus parameters, of which tag is the one
    the testbed interprets."""

    uri: SipUri
    params: Params = ()

    @classmethod
    def parse(cls, raw: str, header: str) -> "NameAddr":
        raw = raw.strip()
        # split addr-spec from header params; honour <> bracketing
        if raw.startswith("<"):
            end = raw.find(">")
            if end < 0:
                raise MissingMandatoryHeader(header, f"unclosed '<' in {raw!r}")
            addr, tail = raw[: end + 1], raw[end + 1 :]
        elif ";" in raw:
            addr, tail = raw.split(";", 1)
            tail = ";" + tail
        else:
            addr, tail = raw, ""
        tail = tail.strip()
        if tail.startswith(";"):
            tail = tail[1:]
        try:
            uri = SipUri.parse(addr)
        except MalformedStartLine as exc:
            raise MissingMandatoryHeader(header, str(exc)) from None
        return cls(uri=uri, params=_parse_params(tail.split(";")) if tail else ())

    @property
    def tag(self) -> Optional[str]:
        for name, value in self.params:
            if name == "tag":
                return value
        return None

    def with_tag(self, tag: str) -> "NameAddr":
        params = tuple(p for p in self.params if p[0] != "tag") + (("tag", tag),)
        return replace(self, params=params)

    def render(self) -> str:
        return f"<{self.uri.render()}>" + _format_params(self.params)


@dataclass(frozen=True)
class CSeq:
    number: int
    method: Method

    def render(self) -> str:
        return f"{self.number} {self.method.value}"


OpaqueHeaders = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class SipMessage:
    """A parsed request or response.

    Requests carry ``method`` and ``request_uri``; responses carry ``status``
    and ``reason`` plus the CSeq method.  ``extra_headers`` holds every header
    the testbed does not interpret, in declaration order.
    """

    kind: str  # "request" | "response"
    method: Method
    vias: tuple[Via, ...]
    from_: NameAddr
    to: NameAddr
    call_id: str
    cseq: CSeq
    request_uri: Optional[SipUri] = None
    status: Optional[int] = None
    reason: str = ""
    max_forwards: Optional[int] = None
    contact: Optional[SipUri] = None
    expires: Optional[int] = None
    event: Optional[str] = None
    routes: tuple[SipUri, ...] = ()
    record_routes: tuple[SipUri, ...] = ()
    content_type: Optional[str] = None
    extra_headers: OpaqueHeaders = ()
    body: bytes = b""

    # ------------------------------------------------------------------
    # Convenience accessors
    # ------------------------------------------------------------------

    @property
    def is_request(self) -> bool:
        return self.kind == "request"

    @property
    def is_response(self) -> bool:
        return self.kind == "response"

    @property
    def status_class(self) -> Optional[int]:
        return None if self.status is None else self.status // 100

    @property
    def top_via(self) -> Via:
        return self.vias[0]

    def header(self, name: str) -> Optional[str]:
        """Case-insensitive lookup of an opaque (uninterpreted) header."""
        lowered = name.lower()
        for key, value in self.extra_headers:
            if key.lower() == lowered:
                return value
        return None

    # ------------------------------------------------------------------
    # Derivation helpers (messages are immutable; hops replace fields)
    # ------------------------------------------------------------------

    def with_via_pushed(self, via: Via) -> "SipMessage":
        return replace(self, vias=(via,) + self.vias)

    def with_top_via_popped(self) -> "SipMessage":
        return replace(self, vias=self.vias[1:])

    def with_max_forwards(self, value: int) -> "SipMessage":
        return replace(self, max_forwards=value)

    def with_extra_header(self, name: str, value: str) -> "SipMessage":
        return replace(self, extra_headers=self.extra_headers + ((name, value),))

    def label(self) -> str:
        """Short display form: method for requests, code/method for responses."""
        if self.is_request:
            return self.method.value
        return f"{self.status}/{self.cseq.method.value}"


_MANDATORY = ("Via", "From", "To", "Call-ID", "CSeq")

# canonical output casing for interpreted headers
_KNOWN_LOWER = {
    "via",
    "max-forwards",
    "route",
    "record-route",
    "from",
    "to",
    "call-id",
    "cseq",
    "contact",
    "expires",
    "event",
    "content-type",
    "content-length",
}


def _unfold_lines(block: str) -> list[str]:
    lines: list[str] = []
    for raw in block.split(CRLF):
        if raw[:1] in (" ", "\t"):
            if not lines:
                raise MalformedStartLine("continuation line before any header")
            lines[-1] += " " + raw.strip()
        else:
            lines.append(raw)
    return lines


def _parse_int_header(name: str, raw: str, lo: int, hi: int) -> int:
    try:
        value = int(raw.strip())
    except ValueError:
        raise MissingMandatoryHeader(name, f"not an integer: {raw!r}") from None
    if not lo <= value <= hi:
        raise MissingMandatoryHeader(name, f"out of range [{lo}, {hi}]: {value}")
    return value


def parse_message(raw: bytes) -> SipMessage:
    """Parse one wire message.

    Raises MalformedStartLine, UnknownMethod, MissingMandatoryHeader or
    BodyLengthMismatch; no other exception escapes for any byte input.
    """
    if not raw:
        raise MalformedStartLine("empty input")
    head, sep, body = raw.partition(b"\r\n\r\n")
    if not sep:
        raise MalformedStartLine("missing blank line after headers")
    try:
        head_text = head.decode("utf-8")
    except UnicodeDecodeError:
        raise MalformedStartLine("header block is not valid UTF-8") from None

    lines = _unfold_lines(head_text)
    start = lines[0]

    kind = ""
    method: Optional[Method] = None
    request_uri: Optional[SipUri] = None
    status: Optional[int] = None
    reason = ""
    if start.startswith(SIP_VERSION + " "):
        kind = "response"
        parts = start.split(" ", 2)
        if len(parts) < 2:
            raise MalformedStartLine(start)
        try:
            status = int(parts[1])
        except ValueError:
            raise MalformedStartLine(start) from None
        if status not in REASON_PHRASES:
            raise MalformedStartLine(f"status code outside supported set: {status}")
        reason = parts[2] if len(parts) == 3 else ""
    else:
        kind = "request"
        parts = start.split(" ")
        if len(parts) != 3 or parts[2] != SIP_VERSION:
            raise MalformedStartLine(start)
        try:
            method = Method(parts[0])
        except ValueError:
            raise UnknownMethod(parts[0]) from None
        request_uri = SipUri.parse(parts[1])

    vias: list[Via] = []
    routes: list[SipUri] = []
    record_routes: list[SipUri] = []
    single: dict[str, str] = {}
    extra: list[tuple[str, str]] = []
    content_length: Optional[int] = None

    for line in lines[1:]:
        if not line:
            continue
        if ":" not in line:
            raise MalformedStartLine(f"header line without colon: {line!r}")
        name, value = line.split(":", 1)
        name = name.strip()
        value = value.strip()
        lowered = name.lower()
        if lowered == "via":
            for chunk in value.split(","):
                vias.append(Via.parse(chunk))
        elif lowered == "route":
            for chunk in value.split(","):
                routes.append(SipUri.parse(chunk))
        elif lowered == "record-route":
            for chunk in value.split(","):
                record_routes.append(SipUri.parse(chunk))
        elif lowered == "content-length":
            content_length = _parse_int_header("Content-Length", value, 0, 2**31)
        elif lowered in _KNOWN_LOWER:
            canonical = _canonical_name(lowered)
            if canonical in single:
                if canonical in _MANDATORY:
                    raise MissingMandatoryHeader(canonical, "duplicated")
                # optional single-valued header repeated: last one wins
            single[canonical] = value
        else:
            extra.append((name, value))

    for name in ("From", "To", "Call-ID", "CSeq"):
        if name not in single:
            raise MissingMandatoryHeader(name)
    if not vias:
        raise MissingMandatoryHeader("Via")

    from_ = NameAddr.parse(single["From"], "From")
    if from_.tag is None:
        raise MissingMandatoryHeader("From", "tag parameter required")
    to = NameAddr.parse(single["To"], "To")

    call_id = single["Call-ID"]
    if not call_id:
        raise MissingMandatoryHeader("Call-ID", "empty")

    cseq_parts = single["CSeq"].split()
    if len(cseq_parts) != 2:
        raise MissingMandatoryHeader("CSeq", f"unparseable: {single['CSeq']!r}")
    try:
        cseq_num = int(cseq_parts[0])
    except ValueError:
        raise MissingMandatoryHeader("CSeq", f"unparseable: {single['CSeq']!r}") from None
    if cseq_num < 1:
        raise MissingMandatoryHeader("CSeq", f"sequence number must be >= 1: {cseq_num}")
    try:
        cseq_method = Method(cseq_parts[1])
    except ValueError:
        raise UnknownMethod(cseq_parts[1]) from None
    if kind == "request" and cseq_method != method:
        raise MissingMandatoryHeader("CSeq", "method does not match request line")

    max_forwards = None
    if "Max-Forwards" in single:
        max_forwards = _parse_int_header("Max-Forwards", single["Max-Forwards"], 0, MAX_FORWARDS_DEFAULT)
    expires = None
    if "Expires" in single:
        expires = _parse_int_header("Expires", single["Expires"], 0, 2**31)
    contact = SipUri.parse(single["Contact"]) if "Contact" in single else None

    expected = content_length if content_length is not None else 0
    if len(body) != expected:
        raise BodyLengthMismatch(f"Content-Length {expected} but body has {len(body)} bytes")

    return SipMessage(
        kind=kind,
        method=cseq_method if kind == "response" else method,  # type: ignore[arg-type]
        vias=tuple(vias),
        from_=from_,
        to=to,
        call_id=call_id,
        cseq=CSeq(cseq_num, cseq_method),
        request_uri=request_uri,
        status=status,
        reason=reason or (REASON_PHRASES[status] if status else ""),
        max_forwards=max_forwards,
        contact=contact,
        expires=expires,
        event=single.get("Event"),
        routes=tuple(routes),
        record_routes=tuple(record_routes),
        content_type=single.get("Content-Type"),
        extra_headers=tuple(extra),
        body=bytes(body),
    )


def _canonical_name(lowered: str) -> str:
    return {
        "via": "Via",
        "max-forwards": "Max-Forwards",
        "route": "Route",
        "record-route": "Record-Route",
        "from": "From",
        "to": "To",
        "call-id": "Call-ID",
        "cseq": "CSeq",
        "contact": "Contact",
        "expires": "Expires",
        "event": "Event",
        "content-type": "Content-Type",
        "content-length": "Content-Length",
    }[lowered]


def serialize_message(msg: SipMessage) -> bytes:
    """Emit the canonical wire form; Content-Length is always computed."""
    if msg.is_request:
        assert msg.request_uri is not None
        start = f"{msg.method.value} {msg.request_uri.render()} {SIP_VERSION}"
    else:
        assert msg.status is not None
        reason = msg.reason or REASON_PHRASES[msg.status]
        start = f"{SIP_VERSION} {msg.status} {reason}"

    lines = [start]
    for via in msg.vias:
        lines.append(f"Via: {via.render()}")
    if msg.max_forwards is not None:
        lines.append(f"Max-Forwards: {msg.max_forwards}")
    for uri in msg.routes:
        lines.append(f"Route: <{uri.render()}>")
    for uri in msg.record_routes:
        lines.append(f"Record-Route: <{uri.render()}>")
    lines.append(f"From: {msg.from_.render()}")
    lines.append(f"To: {msg.to.render()}")
    lines.append(f"Call-ID: {msg.call_id}")
    lines.append(f"CSeq: {msg.cseq.render()}")
    if msg.contact is not None:
        lines.append(f"Contact: <{msg.contact.render()}>")
    if msg.expires is not None:
        lines.append(f"Expires: {msg.expires}")
    if msg.event is not None:
        lines.append(f"Event: {msg.event}")
    for name, value in msg.extra_headers:
        lines.append(f"{name}: {value}")
    if msg.content_type is not None:
        lines.append(f"Content-Type: {msg.content_type}")
    lines.append(f"Content-Length: {len(msg.body)}")
    return (CRLF.join(lines) + CRLF + CRLF).encode("utf-8") + msg.body


_fallback_counter = itertools.count(1)


def fresh_branch() -> str:
    """Process-unique branch token; run-scoped token sources supersede this."""
    return f"{BRANCH_PREFIX}g{next(_fallback_counter):06x}"


def fresh_tag() -> str:
    return f"tg{next(_fallback_counter):06x}"


def make_request(
    method: Method,
    target: SipUri,
    from_uri: SipUri,
    to_uri: SipUri,
    call_id: str,
    cseq: int,
    *,
    sent_by: tuple[str, int] = ("0.0.0.0", DEFAULT_SIP_PORT),
    branch: Optional[str] = None,
    from_tag: Optional[str] = None,
    to_tag: Optional[str] = None,
    contact: Optional[SipUri] = None,
    expires: Optional[int] = None,
    event: Optional[str] = None,
    content_type: Optional[str] = None,
    body: bytes = b"",
    extra_headers: OpaqueHeaders = (),
) -> SipMessage:
    """Build a request with a single Via for the caller's sent-by address."""
    if cseq < 1:
        raise ValueError("cseq must be >= 1")
    via = Via(
        host=sent_by[0],
        port=sent_by[1],
        params=(("branch", branch if branch is not None else fresh_branch()),),
    )
    from_ = NameAddr(uri=from_uri).with_tag(from_tag if from_tag is not None else fresh_tag())
    to = NameAddr(uri=to_uri)
    if to_tag is not None:
        to = to.with_tag(to_tag)
    return SipMessage(
        kind="request",
        method=method,
        vias=(via,),
        from_=from_,
        to=to,
        call_id=call_id,
        cseq=CSeq(cseq, method),
        request_uri=target,
        max_forwards=MAX_FORWARDS_DEFAULT,
        contact=contact,
        expires=expires,
        event=event,
        content_type=content_type if body or content_type else None,
        extra_headers=extra_headers,
        body=body,
    )


def make_response(
    req: SipMessage,
    status: int,
    body: bytes = b"",
    *,
    to_tag: Optional[str] = None,
    contact: Optional[SipUri] = None,
    expires: Optional[int] = None,
    content_type: Optional[str] = None,
    extra_headers: OpaqueHeaders = (),
) -> SipMessage:
    """Build a response mirroring the request's Via stack, From, Call-ID and
    CSeq.  Final (>= 200) responses get a To tag if the request had none."""
    if not req.is_request:
        raise NotARequest(req.kind)
    if status not in REASON_PHRASES:
        raise ValueError(f"unsupported status code: {status}")
    to = req.to
    if status >= 200 and to.tag is None:
        to = to.with_tag(to_tag if to_tag is not None else fresh_tag())
    return SipMessage(
        kind="response",
        method=req.cseq.method,
        vias=req.vias,
        from_=req.from_,
        to=to,
        call_id=req.call_id,
        cseq=req.cseq,
        status=status,
        reason=REASON_PHRASES[status],
        contact=contact,
        expires=expires,
        event=req.event if req.method in (Method.SUBSCRIBE, Method.NOTIFY) else None,
        content_type=content_type if body or content_type else None,
        extra_headers=extra_headers,
        body=body,
    )
