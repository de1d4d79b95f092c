"""Message corpora shared by the parser tests and the acceptance suite.

valid_corpus(): 50 well-formed wire messages covering every method, status
code, header combination and body the testbed produces.
malformed_corpus(): 20 broken messages, each annotated with the exact error
type the parser must raise.
"""

from __future__ import annotations

from imslab.sip import (
    BodyLengthMismatch,
    MalformedStartLine,
    MissingMandatoryHeader,
    UnknownMethod,
)


def _msg(start: str, headers: list[str], body: bytes = b"") -> bytes:
    lines = [start] + headers + [f"Content-Length: {len(body)}", "", ""]
    return "\r\n".join(lines).encode("utf-8") + body


def _base_headers(method: str = "REGISTER", cseq: int = 1) -> list[str]:
    return [
        "Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1",
        "Max-Forwards: 70",
        "From: <sip:s1@ims.kau.test>;tag=t1",
        "To: <sip:s1@ims.kau.test>",
        "Call-ID: c1",
        f"CSeq: {cseq} {method}",
    ]


def valid_corpus() -> list[bytes]:
    corpus: list[bytes] = []

    # one request per supported method, several targets
    for i, method in enumerate(["REGISTER", "SUBSCRIBE", "NOTIFY", "MESSAGE", "INVITE", "ACK", "BYE"]):
        corpus.append(
            _msg(
                f"{method} sip:ims.kau.test SIP/2.0",
                _base_headers(method, cseq=i + 1),
            )
        )

    # one response per supported status code
    for status in [100, 180, 200, 202, 302, 401, 403, 404, 408, 480, 500]:
        corpus.append(
            _msg(
                f"SIP/2.0 {status} Whatever Reason",
                _base_headers("INVITE", cseq=7),
            )
        )

    # the registration example shape
    corpus.append(
        _msg(
            "REGISTER sip:ims.kau.test SIP/2.0",
            [
                "Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1",
                "Max-Forwards: 70",
                "From: <sip:s1@ims.kau.test>;tag=t1",
                "To: <sip:s1@ims.kau.test>",
                "Call-ID: c1",
                "CSeq: 1 REGISTER",
                "Contact: <sip:s1@10.0.0.9:5060>",
                "Expires: 3600",
                "X-Passkey: pk-s1",
            ],
        )
    )

    # Via stacks of increasing depth
    for depth in range(2, 6):
        vias = [f"Via: SIP/2.0/UDP 10.0.0.{k}:506{k};branch=z9hG4bKh{k}" for k in range(depth)]
        corpus.append(
            _msg(
                "MESSAGE sip:s1@ims.kau.test SIP/2.0",
                vias + _base_headers("MESSAGE", cseq=depth)[1:],
            )
        )

    # bodies with content types
    for i, (ctype, body) in enumerate(
        [
            ("application/exam+json", b'{"exam_id": "exam-0001"}'),
            ("application/exam-answers+json", b'{"exam_id": "exam-0001", "answers": {"q1": 0}}'),
            ("application/exam-result+json", b'{"score": 2, "max_score": 3}'),
            ("text/plain", b"active"),
            ("text/plain", b"terminated"),
        ]
    ):
        corpus.append(
            _msg(
                "MESSAGE sip:exam@ims.kau.test SIP/2.0",
                _base_headers("MESSAGE", cseq=10 + i) + [f"Content-Type: {ctype}"],
                body,
            )
        )

    # escaped user parts, uri params, ports
    for i, target in enumerate(
        [
            "sip:alice%20b@ims.kau.test",
            "sip:s1@ims.kau.test:5070",
            "sip:s1@ims.kau.test;transport=udp",
            "sip:ims.kau.test:6000;lr",
        ]
    ):
        corpus.append(_msg(f"MESSAGE {target} SIP/2.0", _base_headers("MESSAGE", cseq=20 + i)))

    # folded header, case-insensitive names, opaque headers, routes
    corpus.append(
        _msg(
            "MESSAGE sip:s1@ims.kau.test SIP/2.0",
            [
                "via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa9",
                "max-forwards: 69",
                "FROM: <sip:s2@ims.kau.test>;tag=t9",
                "to: <sip:s1@ims.kau.test>;tag=t10",
                "call-id: c9",
                "cseq: 9 MESSAGE",
                "X-Custom-One: alpha",
                "X-Custom-Two: beta",
            ],
        )
    )
    corpus.append(
        _msg(
            "MESSAGE sip:s1@ims.kau.test SIP/2.0",
            _base_headers("MESSAGE", cseq=31)
            + [
                "Subject: exam",
                " continued subject line",
            ],
        )
    )
    corpus.append(
        _msg(
            "INVITE sip:callee@lab.test SIP/2.0",
            _base_headers("INVITE", cseq=32)
            + [
                "Route: <sip:proxy-a.lab.test:5060>",
                "Route: <sip:proxy-b.lab.test:5062>",
                "Record-Route: <sip:edge.lab.test>",
            ],
        )
    )

    # responses with tags, contact, expires
    corpus.append(
        _msg(
            "SIP/2.0 200 OK",
            [
                "Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1",
                "From: <sip:s1@ims.kau.test>;tag=t1",
                "To: <sip:s1@ims.kau.test>;tag=t2",
                "Call-ID: c1",
                "CSeq: 1 REGISTER",
                "Expires: 3600",
                "Service-Route: <sip:scscf-1.ims.kau.test:5060>",
            ],
        )
    )
    corpus.append(
        _msg(
            "SIP/2.0 302 Moved Temporarily",
            [
                "Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa2",
                "From: <sip:caller@lab.test>;tag=t3",
                "To: <sip:callee@lab.test>;tag=t4",
                "Call-ID: c2",
                "CSeq: 1 INVITE",
                "Contact: <sip:callee@10.0.1.3:5060>",
            ],
        )
    )

    # SUBSCRIBE/NOTIFY event dialogs
    corpus.append(
        _msg(
            "SUBSCRIBE sip:exam@ims.kau.test SIP/2.0",
            _base_headers("SUBSCRIBE", cseq=40)
            + ["Event: exam-service", "Expires: 600", "Contact: <sip:s1@10.0.0.9>"],
        )
    )
    corpus.append(
        _msg(
            "NOTIFY sip:s1@ims.kau.test SIP/2.0",
            _base_headers("NOTIFY", cseq=41) + ["Event: exam-service", "Content-Type: text/plain"],
            b"active",
        )
    )
    corpus.append(
        _msg(
            "SIP/2.0 202 Accepted",
            [
                "Via: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa5",
                "From: <sip:s1@ims.kau.test>;tag=t5",
                "To: <sip:exam@ims.kau.test>;tag=t6",
                "Call-ID: c5",
                "CSeq: 40 SUBSCRIBE",
                "Event: exam-service",
                "Expires: 600",
            ],
        )
    )

    # a few permutations of optional headers to round out 50
    extras = [
        ["Expires: 0"],
        ["Contact: <sip:s3@10.0.0.7:5062>"],
        ["Expires: 60", "Contact: <sip:s4@10.0.0.8>"],
        ["X-Passkey: pk", "Expires: 120"],
        ["Event: exam-service"],
        ["Max-Forwards: 0"],
        ["Expires: 0", "Contact: <sip:s5@10.0.0.11>", "X-Passkey: pk-s5"],
        ["X-Trace-Id: run-42", "X-Passkey: pk-s6"],
        ["Contact: <sip:s7@10.0.0.13;transport=udp>"],
        ["Expires: 7200"],
    ]
    for i, headers in enumerate(extras):
        base = _base_headers("REGISTER", cseq=50 + i)
        if headers and headers[-1].startswith("Max-Forwards"):
            base = [base[0]] + base[2:]  # replace the default Max-Forwards
        corpus.append(_msg("REGISTER sip:ims.kau.test SIP/2.0", base + headers))

    assert len(corpus) >= 50, len(corpus)
    return corpus[:50]


def malformed_corpus() -> list[tuple[bytes, type]]:
    good = _base_headers()
    cases: list[tuple[bytes, type]] = [
        # start line problems
        (_msg("REGISTER sip:ims.kau.test", good), MalformedStartLine),
        (_msg("REGISTER sip:ims.kau.test SIP/1.0", good), MalformedStartLine),
        (_msg("REGISTER", good), MalformedStartLine),
        (_msg("SIP/2.0 2000 Huge", good), MalformedStartLine),
        (_msg("SIP/2.0 999 Unknown", good), MalformedStartLine),
        (_msg("SIP/2.0 abc OK", good), MalformedStartLine),
        (_msg("REGISTER htp://x SIP/2.0", good), MalformedStartLine),
        (b"REGISTER sip:ims.kau.test SIP/2.0\r\nVia: v\r\n", MalformedStartLine),  # no blank line
        # unknown methods
        (_msg("OPTIONS sip:ims.kau.test SIP/2.0", _base_headers("OPTIONS")), UnknownMethod),
        (_msg("CANCEL sip:ims.kau.test SIP/2.0", _base_headers("CANCEL")), UnknownMethod),
        (_msg("register sip:ims.kau.test SIP/2.0", good), UnknownMethod),
        # missing / broken mandatory headers
        (_msg("REGISTER sip:ims.kau.test SIP/2.0", good[1:]), MissingMandatoryHeader),  # no Via
        (_msg("REGISTER sip:ims.kau.test SIP/2.0", good[:2] + good[3:]), MissingMandatoryHeader),  # no From
        (_msg("REGISTER sip:ims.kau.test SIP/2.0", good[:3] + good[4:]), MissingMandatoryHeader),  # no To
        (_msg("REGISTER sip:ims.kau.test SIP/2.0", good[:4] + good[5:]), MissingMandatoryHeader),  # no Call-ID
        (_msg("REGISTER sip:ims.kau.test SIP/2.0", good[:5]), MissingMandatoryHeader),  # no CSeq
        (
            _msg(
                "REGISTER sip:ims.kau.test SIP/2.0",
                ["v: SIP/2.0/UDP 10.0.0.9:5060;branch=z9hG4bKa1"] + good[1:],
            ),
            MissingMandatoryHeader,  # compact Via form stays opaque
        ),
        (
            _msg("REGISTER sip:ims.kau.test SIP/2.0", good[:2] + ["From: <sip:s1@ims.kau.test>"] + good[3:]),
            MissingMandatoryHeader,  # From without tag
        ),
        (
            _msg("REGISTER sip:ims.kau.test SIP/2.0", good[:5] + ["CSeq: 0 REGISTER"]),
            MissingMandatoryHeader,  # CSeq below 1
        ),
        # body length mismatch: declared 5, body empty
        (
            "\r\n".join(
                ["REGISTER sip:ims.kau.test SIP/2.0"] + good + ["Content-Length: 5", "", ""]
            ).encode("utf-8"),
            BodyLengthMismatch,
        ),
    ]
    assert len(cases) == 20, len(cases)
    return cases
