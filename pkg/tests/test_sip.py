"""Wire-format grammar: parsing, canonical serialization, construction."""

from __future__ import annotations

import random

import pytest

from imslab.sip import (
    BodyLengthMismatch,
    CSeq,
    MalformedStartLine,
    Method,
    MissingMandatoryHeader,
    NotARequest,
    SipParseError,
    SipUri,
    UnknownMethod,
    Via,
    make_request,
    make_response,
    parse_message,
    serialize_message,
)

from corpus import malformed_corpus, valid_corpus

REGISTER_EXAMPLE = (
    b"REGISTER sip:ims.kau.test SIP/2.0\r\n"
    b"Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1\r\n"
    b"Max-Forwards: 70\r\n"
    b"From: <sip:s1@ims.kau.test>;tag=t1\r\n"
    b"To: <sip:s1@ims.kau.test>\r\n"
    b"Call-ID: c1\r\n"
    b"CSeq: 1 REGISTER\r\n"
    b"Contact: <sip:s1@10.0.0.9:5060>\r\n"
    b"Expires: 3600\r\n"
    b"Content-Length: 0\r\n\r\n"
)


def test_parse_register_request():
    msg = parse_message(REGISTER_EXAMPLE)
    assert msg.is_request
    assert msg.method == Method.REGISTER
    assert msg.request_uri == SipUri(user=None, host="ims.kau.test")
    assert msg.expires == 3600
    assert msg.top_via.branch == "z9hG4bKa1"
    assert msg.top_via.sent_by == ("10.0.0.9", 5060)
    assert msg.from_.tag == "t1"
    assert msg.to.tag is None
    assert msg.cseq == CSeq(1, Method.REGISTER)
    assert msg.contact == SipUri(user="s1", host="10.0.0.9", port=5060)


def test_parse_response():
    raw = (
        b"SIP/2.0 200 OK\r\n"
        b"Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1\r\n"
        b"From: <sip:s1@ims.kau.test>;tag=t1\r\n"
        b"To: <sip:s1@ims.kau.test>;tag=t2\r\n"
        b"Call-ID: c1\r\n"
        b"CSeq: 1 REGISTER\r\n"
        b"Content-Length: 0\r\n\r\n"
    )
    msg = parse_message(raw)
    assert msg.is_response
    assert msg.status == 200
    assert msg.status_class == 2
    assert msg.cseq == CSeq(1, Method.REGISTER)
    assert msg.to.tag == "t2"


def test_content_length_mismatch_rejected():
    raw = REGISTER_EXAMPLE.replace(b"Content-Length: 0", b"Content-Length: 5")
    with pytest.raises(BodyLengthMismatch):
        parse_message(raw)


def test_trailing_garbage_rejected():
    with pytest.raises(BodyLengthMismatch):
        parse_message(REGISTER_EXAMPLE + b"garbage")


def test_unknown_headers_preserved_in_order():
    raw = (
        b"MESSAGE sip:s1@ims.kau.test SIP/2.0\r\n"
        b"Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1\r\n"
        b"From: <sip:s2@ims.kau.test>;tag=t1\r\n"
        b"To: <sip:s1@ims.kau.test>\r\n"
        b"Call-ID: c1\r\n"
        b"CSeq: 2 MESSAGE\r\n"
        b"X-Second: two\r\n"
        b"X-First: one\r\n"
        b"Content-Length: 0\r\n\r\n"
    )
    msg = parse_message(raw)
    assert msg.extra_headers == (("X-Second", "two"), ("X-First", "one"))
    out = serialize_message(msg)
    assert out.index(b"X-Second") < out.index(b"X-First")
    assert msg.header("x-first") == "one"


def test_header_folding_unfolded():
    raw = (
        b"MESSAGE sip:s1@ims.kau.test SIP/2.0\r\n"
        b"Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1\r\n"
        b"From: <sip:s2@ims.kau.test>;tag=t1\r\n"
        b"To: <sip:s1@ims.kau.test>\r\n"
        b"Call-ID: c1\r\n"
        b"Subject: exam\r\n"
        b" part two\r\n"
        b"CSeq: 2 MESSAGE\r\n"
        b"Content-Length: 0\r\n\r\n"
    )
    msg = parse_message(raw)
    assert msg.header("Subject") == "exam part two"


def test_round_trip_canonicalizes_header_case():
    lowered = REGISTER_EXAMPLE.replace(b"Via:", b"via:").replace(b"From:", b"fRoM:")
    assert parse_message(lowered) == parse_message(REGISTER_EXAMPLE)
    assert serialize_message(parse_message(lowered)).count(b"\r\nVia: ") == 1


def test_corpus_round_trip_fixpoint():
    for raw in valid_corpus():
        once = parse_message(raw)
        wire = serialize_message(once)
        twice = parse_message(wire)
        assert twice == once, raw
        assert serialize_message(twice) == wire


def test_malformed_corpus_typed_errors():
    for raw, expected in malformed_corpus():
        with pytest.raises(expected):
            parse_message(raw)


def test_mutation_fuzz_never_crashes():
    rng = random.Random(20260810)
    corpus = valid_corpus()
    mutations = 0
    while mutations < 10_000:
        raw = bytearray(rng.choice(corpus))
        for _ in range(rng.randint(1, 8)):
            op = rng.randrange(3)
            pos = rng.randrange(len(raw)) if raw else 0
            if op == 0 and raw:
                raw[pos] = rng.randrange(256)
            elif op == 1:
                raw.insert(pos, rng.randrange(256))
            elif op == 2 and raw:
                del raw[pos]
        mutations += 1
        try:
            msg = parse_message(bytes(raw))
        except SipParseError:
            continue
        # survivors must re-serialize and re-parse cleanly
        assert parse_message(serialize_message(msg)) == msg


def test_uri_round_trip_with_params_and_escapes():
    uri = SipUri.parse("sip:alice%20b@ims.kau.test:5070;transport=udp;lr")
    assert uri.user == "alice b"
    assert uri.port == 5070
    assert uri.params == (("transport", "udp"), ("lr", None))
    assert SipUri.parse(uri.render()) == uri


def test_uri_defaults_and_validation():
    uri = SipUri.parse("sip:ims.kau.test")
    assert uri.user is None and uri.port is None
    assert uri.effective_port == 5060
    with pytest.raises(MalformedStartLine):
        SipUri.parse("sip:user@")
    with pytest.raises(MalformedStartLine):
        SipUri.parse("sip:user@host:99999")
    with pytest.raises(MalformedStartLine):
        SipUri.parse("tel:+123")


def test_make_request_shape():
    req = make_request(
        Method.MESSAGE,
        SipUri.parse("sip:s1@ims.kau.test"),
        SipUri.parse("sip:exam@ims.kau.test"),
        SipUri.parse("sip:s1@ims.kau.test"),
        "e1",
        1,
        sent_by=("10.0.0.5", 5060),
    )
    assert req.method == Method.MESSAGE
    assert len(req.vias) == 1
    assert req.vias[0].branch.startswith("z9hG4bK")
    assert req.max_forwards == 70
    assert req.body == b""
    assert req.from_.tag is not None


def test_make_request_branch_freshness():
    args = (
        Method.REGISTER,
        SipUri.parse("sip:ims.kau.test"),
        SipUri.parse("sip:s1@ims.kau.test"),
        SipUri.parse("sip:s1@ims.kau.test"),
        "c1",
        1,
    )
    branches = {make_request(*args).vias[0].branch for _ in range(10_000)}
    assert len(branches) == 10_000


def test_make_request_rejects_bad_cseq():
    with pytest.raises(ValueError):
        make_request(
            Method.REGISTER,
            SipUri.parse("sip:ims.kau.test"),
            SipUri.parse("sip:s1@ims.kau.test"),
            SipUri.parse("sip:s1@ims.kau.test"),
            "c1",
            0,
        )


def test_make_response_copies_request_identity():
    req = parse_message(REGISTER_EXAMPLE)
    resp = make_response(req, 200)
    assert resp.vias == req.vias
    assert resp.from_ == req.from_
    assert resp.call_id == req.call_id
    assert resp.cseq == req.cseq
    assert resp.to.tag is not None  # final responses gain a To tag
    out = serialize_message(resp)
    assert b"CSeq: 1 REGISTER" in out


def test_make_response_redirect_carries_contact():
    req = parse_message(REGISTER_EXAMPLE.replace(b"REGISTER sip:ims.kau.test", b"INVITE sip:callee@lab.test").replace(b"1 REGISTER", b"1 INVITE"))
    contact = SipUri.parse("sip:callee@10.0.1.3:5062")
    resp = make_response(req, 302, contact=contact)
    assert resp.status == 302
    assert resp.contact == contact


def test_make_response_provisional_keeps_missing_to_tag():
    req = parse_message(REGISTER_EXAMPLE)
    resp = make_response(req, 100)
    assert resp.to.tag is None


def test_make_response_requires_request():
    req = parse_message(REGISTER_EXAMPLE)
    resp = make_response(req, 200)
    with pytest.raises(NotARequest):
        make_response(resp, 200)


def test_serialize_computes_content_length():
    req = parse_message(REGISTER_EXAMPLE)
    resp = make_response(req, 200, body=b"ok", content_type="text/plain")
    assert b"Content-Length: 2" in serialize_message(resp)


def test_via_parse_render_round_trip():
    via = Via.parse("SIP/2.0/UDP 10.0.0.9:5062;branch=z9hG4bKxy;rport")
    assert via.sent_by == ("10.0.0.9", 5062)
    assert via.branch == "z9hG4bKxy"
    assert Via.parse(via.render()) == via


def test_duplicate_mandatory_header_rejected():
    raw = REGISTER_EXAMPLE.replace(b"Call-ID: c1\r\n", b"Call-ID: c1\r\nCall-ID: c2\r\n")
    with pytest.raises(MissingMandatoryHeader):
        parse_message(raw)


def test_cseq_method_must_match_request_line():
    raw = REGISTER_EXAMPLE.replace(b"CSeq: 1 REGISTER", b"CSeq: 1 MESSAGE")
    with pytest.raises(MissingMandatoryHeader):
        parse_message(raw)


def test_unknown_cseq_method_rejected():
    raw = REGISTER_EXAMPLE.replace(b"CSeq: 1 REGISTER", b"CSeq: 1 PUBLISH")
    with pytest.raises(UnknownMethod):
        parse_message(raw)
