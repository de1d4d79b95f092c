"""P/I/S-CSCF behaviour over the simulated network."""

from __future__ import annotations

from imslab.endpoint import NetAddress
from imslab.harness import SimRun
from imslab.hss import REGISTERED, UNREGISTERED
from imslab.sip import Method, SipMessage, SipUri

from imsfix import DOMAIN, ims_scenario, subscriber


def registered_run(**kwargs) -> SimRun:
    scn = ims_scenario(timeline=[(0, "s1", "register", {})], **kwargs)
    return SimRun(scn)


def events_named(run, trace):
    return [
        (trace.names_of(e.src)[0], trace.names_of(e.dst)[0], e.msg.label(), e.time_ms)
        for e in trace.delivered()
    ]


def test_registration_chain_succeeds():
    run = registered_run()
    trace = run.run()
    ua = run.nodes["s1"]
    scscf = run.nodes["scscf-1"]
    assert ua.registration == "registered"
    assert ua.granted_expires_s == 3600
    assert "sip:s1@ims.kau.test" in scscf.bindings
    assert run.hss_store.lookup("sip:s1@ims.kau.test").registration_state == REGISTERED
    # two Vias on the REGISTER reaching the I-CSCF: UA's plus the P-CSCF's
    reg_at_icscf = [
        e for e in trace.delivered()
        if isinstance(e.msg, SipMessage) and e.msg.is_request
        and e.msg.method == Method.REGISTER and trace.names_of(e.dst)[0] == "icscf"
    ]
    assert len(reg_at_icscf) == 1
    assert len(reg_at_icscf[0].msg.vias) == 2


def test_wrong_passkey_rejected_with_403():
    scn = ims_scenario(
        timeline=[(0, "s1", "register", {})],
        ua_overrides={"s1": {"passkey": "wrong"}},
    )
    run = SimRun(scn)
    run.run()
    assert run.nodes["s1"].registration == "failed"
    assert run.nodes["s1"].failure == "bad_passkey"
    assert run.nodes["scscf-1"].bindings == {}
    assert run.hss_store.lookup("sip:s1@ims.kau.test").registration_state == UNREGISTERED


def test_unknown_subscriber_rejected_with_404():
    scn = ims_scenario(
        timeline=[(0, "s1", "register", {})],
        subscribers=[subscriber("someoneelse")],
    )
    run = SimRun(scn)
    trace = run.run()
    assert run.nodes["s1"].registration == "failed"
    finals = [e.msg.status for e in trace.delivered()
              if isinstance(e.msg, SipMessage) and e.msg.is_response and e.msg.status >= 300]
    assert 404 in finals
    # the I-CSCF answered from the UAA; no REGISTER ever reached the S-CSCF
    assert not any(
        trace.names_of(e.dst)[0] == "scscf-1" and isinstance(e.msg, SipMessage) and e.msg.is_request
        for e in trace.delivered()
    )


def test_deregistration_removes_binding_and_hss_state():
    scn = ims_scenario(timeline=[(0, "s1", "register", {}), (1000, "s1", "deregister", {})])
    run = SimRun(scn)
    run.run()
    assert run.nodes["scscf-1"].bindings == {}
    assert run.nodes["pcscf"].ua_routes == {}
    profile = run.hss_store.lookup("sip:s1@ims.kau.test")
    assert profile.registration_state == UNREGISTERED
    assert profile.assigned_scscf is None
    assert run.nodes["s1"].registration == "idle"


def test_reregistration_refreshes_binding():
    scn = ims_scenario(
        timeline=[
            (0, "s1", "register", {"expires_s": 5}),
            (3000, "s1", "register", {"expires_s": 5}),
        ]
    )
    run = SimRun(scn)
    run.run()
    binding = run.nodes["scscf-1"].bindings["sip:s1@ims.kau.test"]
    assert binding.expires_at_ms >= 3000 + 5000


def test_binding_expiry_sweeps_on_activation():
    scn = ims_scenario(
        ua_names=("s1", "s2"),
        timeline=[
            (0, "s1", "register", {"expires_s": 2}),
            (100, "s2", "register", {}),
            # s2 messages s1 after s1's registration lapsed
            (5000, "s2", "submit_noop", {}),
        ],
    )
    # replace the placeholder action with a raw MESSAGE send through the chain
    scn.timeline = scn.timeline[:2]
    run = SimRun(scn)
    scheduler = run.scheduler
    scscf = run.nodes["scscf-1"]
    checked = {}

    def late_check():
        checked["before"] = dict(scscf.bindings)
        scscf._sweep()
        checked["after"] = dict(scscf.bindings)

    scheduler.call_at(5000, late_check)
    run.run()
    assert "sip:s1@ims.kau.test" in checked["before"]
    assert "sip:s1@ims.kau.test" not in checked["after"]
    assert "sip:s2@ims.kau.test" in checked["after"]


def test_max_forwards_zero_bounced_with_480():
    run = registered_run()
    run.run()
    ua = run.nodes["s1"]
    pcscf_addr = run.scenario.topology.node("pcscf").address
    statuses = []
    ua.endpoint.on_response = lambda tx, resp: statuses.append(resp.status)
    from imslab.sip import make_request
    req = make_request(
        Method.MESSAGE,
        SipUri.parse(f"sip:s9@{DOMAIN}"),
        ua.config.identity,
        SipUri.parse(f"sip:s9@{DOMAIN}"),
        "mf0",
        1,
        sent_by=(ua.config.local.host, ua.config.local.port),
        branch="z9hG4bKmf0",
        from_tag="mf",
    ).with_max_forwards(0)
    ua.endpoint.send_request(req, pcscf_addr)
    run.scheduler.run()
    assert statuses == [480]


def test_message_to_unregistered_identity_gets_480():
    scn = ims_scenario(
        ua_names=("s1", "s9"),
        with_examas=True,
        timeline=[(0, "s1", "register", {})],
    )
    run = SimRun(scn)
    run.run()
    examas = run.nodes["examas"]
    outcomes = []
    examas.send_instant_message(
        SipUri.parse(f"sip:s9@{DOMAIN}"), "application/exam+json", b"{}", outcomes.append
    )
    run.scheduler.run()
    assert outcomes == [480]


def test_message_routed_downstream_to_registered_ua():
    scn = ims_scenario(ua_names=("s1",), with_examas=True, timeline=[(0, "s1", "register", {})])
    run = SimRun(scn)
    run.run()
    examas = run.nodes["examas"]
    outcomes = []
    examas.send_instant_message(
        SipUri.parse(f"sip:s1@{DOMAIN}"), "application/exam-result+json", b'{"score": 1}', outcomes.append
    )
    trace = run.run()
    assert outcomes == [200]
    hops = [
        (trace.names_of(e.src)[0], trace.names_of(e.dst)[0])
        for e in trace.delivered()
        if isinstance(e.msg, SipMessage) and e.msg.is_request and e.msg.method == Method.MESSAGE
    ]
    assert hops[-3:] == [("examas", "scscf-1"), ("scscf-1", "pcscf"), ("pcscf", "s1")]


def test_path_symmetry_responses_reverse_request_hops():
    run = registered_run()
    trace = run.run()
    req_hops = [
        (trace.names_of(e.src)[0], trace.names_of(e.dst)[0])
        for e in trace.delivered()
        if isinstance(e.msg, SipMessage) and e.msg.is_request and e.msg.method == Method.REGISTER
    ]
    resp_hops = [
        (trace.names_of(e.src)[0], trace.names_of(e.dst)[0])
        for e in trace.delivered()
        if isinstance(e.msg, SipMessage) and e.msg.is_response and e.msg.cseq.method == Method.REGISTER
    ]
    assert resp_hops == [(b, a) for a, b in reversed(req_hops)]


def test_via_conservation_depth_counts_proxies():
    run = registered_run()
    trace = run.run()
    for event in trace.delivered():
        msg = event.msg
        if not isinstance(msg, SipMessage) or not msg.is_request:
            continue
        src_role = trace.names_of(event.src)[1]
        hops_so_far = {"ua": 1, "pcscf": 2, "icscf": 3}[src_role]
        assert len(msg.vias) == hops_so_far


def test_edge_discipline_every_ua_hop_is_its_pcscf():
    scn = ims_scenario(
        ua_names=("s1",),
        with_examas=True,
        timeline=[(0, "s1", "register", {}), (500, "s1", "subscribe", {})],
    )
    run = SimRun(scn)
    trace = run.run()
    pcscf = "pcscf"
    for event in trace.delivered():
        if not isinstance(event.msg, SipMessage) or not event.msg.is_request:
            continue
        src_name, src_role = trace.names_of(event.src)
        dst_name, dst_role = trace.names_of(event.dst)
        if src_role == "ua":
            assert dst_name == pcscf
        if dst_role == "ua":
            assert src_name == pcscf


def test_topology_hiding_no_scscf_address_toward_ua_vias():
    run = registered_run()
    trace = run.run()
    scscf_addr = run.scenario.topology.node("scscf-1").address
    for event in trace.delivered():
        if trace.names_of(event.dst)[1] != "ua" or not isinstance(event.msg, SipMessage):
            continue
        for via in event.msg.vias:
            assert via.sent_by != (scscf_addr.host, scscf_addr.port)


def test_ifc_priority_order_and_tie_break():
    run = registered_run()
    run.run()
    scscf = run.nodes["scscf-1"]
    profile = {
        "trigger_rules": [
            {"priority": 2, "method": "MESSAGE", "target": "127.0.0.1:8802"},
            {"priority": 1, "method": "MESSAGE", "target": "127.0.0.1:8801"},
            {"priority": 1, "method": "MESSAGE", "target": "127.0.0.1:8803"},
        ]
    }
    from imslab.sip import make_request
    msg = make_request(
        Method.MESSAGE,
        SipUri.parse(f"sip:exam@{DOMAIN}"),
        SipUri.parse(f"sip:s1@{DOMAIN}"),
        SipUri.parse(f"sip:exam@{DOMAIN}"),
        "ifc",
        1,
    )
    # priority 1 wins; ties broken by declaration order
    assert scscf.evaluate_ifc(profile, msg) == [NetAddress("127.0.0.1", 8801)]
    assert scscf.evaluate_ifc({"trigger_rules": []}, msg) == []
    assert scscf.evaluate_ifc(None, msg) == []
    subscribe = make_request(
        Method.SUBSCRIBE,
        SipUri.parse(f"sip:exam@{DOMAIN}"),
        SipUri.parse(f"sip:s1@{DOMAIN}"),
        SipUri.parse(f"sip:exam@{DOMAIN}"),
        "ifc2",
        2,
    )
    assert scscf.evaluate_ifc(profile, subscribe) == []


def test_registrar_soundness_bindings_subset_of_hss_registered():
    scn = ims_scenario(
        ua_names=("s1", "s2", "s3"),
        timeline=[
            (0, "s1", "register", {}),
            (50, "s2", "register", {}),
            (100, "s3", "register", {}),
            (1000, "s2", "deregister", {}),
            (2000, "s1", "deregister", {}),
        ],
    )
    run = SimRun(scn)
    scscf = run.nodes["scscf-1"]
    store = run.hss_store

    def check(event):
        if scscf.cx.pending:  # mid-flight Cx exchanges defer the check
            return
        registered = {
            impu for impu, p in store.profiles.items() if p.registration_state == REGISTERED
        }
        assert set(scscf.bindings) <= registered

    run.run(on_event=check)
    assert set(scscf.bindings) == {"sip:s3@ims.kau.test"}
