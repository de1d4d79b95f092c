"""Command line entry points: the scenario harness, a user agent, and the
exam application server."""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import threading
import time
from pathlib import Path

from .endpoint import NetAddress, TokenSource
from .examas import ExamAsNode
from .harness import Scenario, assert_flow, builtin_scenarios, render_ladder, run
from .live import (
    HttpXdmsClient,
    LiveCluster,
    LiveNetwork,
    LiveScheduler,
    TcpCxAuth,
    TraceTap,
    make_exam_http_server,
)
from .sip import SipUri
from .ua import InboxEntry, UaConfig, UserAgent


def _load_scenario(ref: str) -> Scenario:
    builtins = builtin_scenarios()
    if ref in builtins:
        return builtins[ref]
    return Scenario.load(ref)


def harness_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ims-harness", description="Run signaling scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a scenario file or builtin name")
    runp.add_argument("scenario", help="path to scenario JSON, or a builtin name")
    runp.add_argument("--seed", type=int, default=None)
    runp.add_argument("--live", action="store_true", help="real UDP/TCP sockets instead of virtual time")
    runp.add_argument("--ladder", action="store_true", help="print the message ladder")
    runp.add_argument("--trace", metavar="OUT", help="write canonical trace JSON to OUT")
    listp = sub.add_parser("list", help="list builtin scenarios")
    dumpp = sub.add_parser("dump", help="print a builtin scenario as JSON")
    dumpp.add_argument("scenario")
    args = parser.parse_args(argv)

    if args.command == "list":
        for name in sorted(builtin_scenarios()):
            print(name)
        return 0
    if args.command == "dump":
        print(json.dumps(_load_scenario(args.scenario).to_dict(), indent=2, sort_keys=True))
        return 0

    scenario = _load_scenario(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.live:
        cluster = LiveCluster(scenario)
        cluster.start()
        try:
            cluster.run_timeline()
            trace = cluster.trace()
        finally:
            cluster.stop()
    else:
        trace = run(scenario)

    all_ok = True
    for pattern in scenario.expectations:
        result = assert_flow(trace, pattern)
        all_ok &= result.ok
        status = "MATCH" if result.ok else f"MISMATCH ({result.detail})"
        print(f"{scenario.name}/{pattern.name or pattern.mode}: {status}")
    if args.ladder:
        print(render_ladder(trace))
    if args.trace:
        Path(args.trace).write_bytes(trace.to_canonical_json())
        print(f"trace written to {args.trace}")
    print(f"events={len(trace.wire_events)} transitions={len(trace.node_transitions)}")
    return 0 if all_ok else 1


def _parse_addr(raw: str) -> NetAddress:
    return NetAddress.parse(raw)


def ua_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ims-ua", description="IMS exam user agent.")
    parser.add_argument("--identity", required=True, help="public identity, e.g. sip:s1@ims.kau.test")
    parser.add_argument("--passkey", required=True)
    parser.add_argument("--pcscf", required=True, help="host:port of the P-CSCF")
    parser.add_argument("--local", default="127.0.0.1:0", help="local host:port to bind (0 = ephemeral)")
    parser.add_argument("--expires", type=int, default=3600)
    parser.add_argument("--wait", type=float, default=2.0, help="seconds to wait for network outcomes")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("register")
    sub.add_parser("subscribe")
    inboxp = sub.add_parser("inbox")
    inboxp.add_argument("--listen", type=float, default=5.0, help="seconds to collect messages")
    answerp = sub.add_parser("answer")
    answerp.add_argument("exam_id")
    answerp.add_argument("answers", help="comma list of qid=index, e.g. q1=0,q2=1")
    scriptp = sub.add_parser("run-script")
    scriptp.add_argument("script", help="JSON list of {action, args, wait_ms} steps")
    args = parser.parse_args(argv)

    local = _parse_addr(args.local)
    if local.port == 0:
        import socket as _socket

        probe = _socket.socket(_socket.AF_INET, _socket.SOCK_DGRAM)
        probe.bind((local.host, 0))
        local = NetAddress(local.host, probe.getsockname()[1])
        probe.close()

    epoch = time.monotonic()
    lock = threading.RLock()
    scheduler = LiveScheduler(epoch, lock)
    network = LiveNetwork("ua", local, scheduler, TraceTap(epoch))
    config = UaConfig(
        identity=SipUri.parse(args.identity),
        passkey=args.passkey,
        pcscf=_parse_addr(args.pcscf),
        local=local,
        expires_s=args.expires,
        refresh_registration=True,
    )
    # label entropy keeps branch tokens distinct across independent UA runs
    ua = UserAgent("ua", network, TokenSource(label=f"ua{secrets.token_hex(4)}-"), config)
    network.start()
    scheduler.start()

    def wait_for(predicate, timeout_s):
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            with lock:
                if predicate():
                    return True
            time.sleep(0.05)
        return False

    def do_register() -> bool:
        with lock:
            ua.register()
        if not wait_for(lambda: ua.registration in ("registered", "failed"), args.wait + 16):
            print("registration: timeout")
            return False
        print(f"registration: {ua.registration}" + (f" ({ua.failure})" if ua.failure else ""))
        return ua.registration == "registered"

    code = 0
    try:
        if args.command == "register":
            code = 0 if do_register() else 1
        elif args.command == "subscribe":
            if not do_register():
                code = 1
            else:
                with lock:
                    ua.subscribe_exam_service()
                wait_for(lambda: ua.subscribe_outcome is not None, args.wait)
                print(f"subscription: {ua.subscribe_outcome}")
                code = 0 if ua.subscribe_outcome == "active" else 1
        elif args.command == "inbox":
            if not do_register():
                code = 1
            else:
                print(f"listening for {args.listen:.0f}s ...")
                time.sleep(args.listen)
                with lock:
                    for entry in ua.inbox:
                        print(f"[{entry.received_at_ms}ms] {entry.kind}: {json.dumps(entry.payload)}")
                    print(f"{len(ua.inbox)} message(s)")
        elif args.command == "answer":
            if not do_register():
                code = 1
            else:
                answers = {}
                for part in args.answers.split(","):
                    qid, _, idx = part.partition("=")
                    answers[qid.strip()] = int(idx)
                time.sleep(args.wait)  # give a pending delivery a moment to land
                with lock:
                    if ua.exam_in_inbox(args.exam_id) is None:
                        # answering by id without the announcement is allowed
                        ua.inbox.append(InboxEntry("exam", 0, {"exam_id": args.exam_id, "questions": []}))
                    ua.submit_answers(args.exam_id, answers, "sip")
                wait_for(lambda: ua.submit_outcomes.get(args.exam_id, "pending") != "pending", args.wait)
                print(f"submission: {ua.submit_outcomes.get(args.exam_id)}")
                code = 0 if ua.submit_outcomes.get(args.exam_id) == "accepted" else 1
        elif args.command == "run-script":
            steps = json.loads(Path(args.script).read_text())
            for step in steps:
                action = step["action"]
                step_args = step.get("args", {})
                with lock:
                    if action == "register":
                        ua.register()
                    elif action == "subscribe":
                        ua.subscribe_exam_service()
                    elif action == "submit":
                        ua.submit_answers(step_args["exam_id"], step_args["answers"], step_args.get("channel", "sip"))
                time.sleep(step.get("wait_ms", 500) / 1000.0)
            with lock:
                print(f"registration={ua.registration} subscription={ua.subscribe_outcome} "
                      f"inbox={len(ua.inbox)} outcomes={ua.submit_outcomes}")
    finally:
        scheduler.stop()
        network.stop()
    return code


def examas_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ims-examas", description="Mass-examination application server.")
    parser.add_argument("--listen-sip", default="127.0.0.1:7006", help="host:port for the SIP face")
    parser.add_argument("--listen-http", default="127.0.0.1:8006", help="host:port for the web API")
    parser.add_argument("--scscf", default="127.0.0.1:7003", help="host:port of the S-CSCF")
    parser.add_argument("--xdms", default="http://127.0.0.1:8005", help="base URL of the XDMS document RPC")
    parser.add_argument("--hss", default="127.0.0.1:7004", help="host:port of the HSS Cx-lite TCP")
    parser.add_argument("--domain", default="ims.kau.test")
    parser.add_argument("--journal", default=None, help="submission journal path")
    parser.add_argument("--static-dir", default=None, help="serve this directory as the web client")
    parser.add_argument("--demo", action="store_true",
                        help="boot a full in-process IMS core with the exam fixtures instead")
    args = parser.parse_args(argv)

    static_dir = Path(args.static_dir) if args.static_dir else None
    if args.demo:
        scenario = builtin_scenarios()["fig8_exam_e2e"]
        scenario.timeline = []  # fixtures only; drive it over HTTP/SIP yourself
        http = NetAddress.parse(args.listen_http)
        cluster = LiveCluster(scenario, http_port=http.port, static_dir=static_dir)
        cluster.start()
        print(f"demo cluster up: http API on http://{http.render()}  (Ctrl-C to stop)")
        print("teacher: sip:teacher@ims.kau.test / pk-teacher; students s1..s10 / pk-s1..pk-s10")
        try:
            while True:
                time.sleep(1)
        except KeyboardInterrupt:
            cluster.stop()
        return 0

    sip_addr = _parse_addr(args.listen_sip)
    http_addr = _parse_addr(args.listen_http)
    epoch = time.monotonic()
    lock = threading.RLock()
    scheduler = LiveScheduler(epoch, lock)
    network = LiveNetwork("examas", sip_addr, scheduler, TraceTap(epoch))
    tokens = TokenSource(label=f"examas{secrets.token_hex(4)}-")
    node = ExamAsNode(
        "examas",
        sip_addr,
        network,
        tokens,
        scscf_address=_parse_addr(args.scscf),
        xdms_store=HttpXdmsClient(args.xdms),
        hss_store=None,
        home_domain=args.domain,
        journal_path=args.journal,
    )
    node.service.auth = TcpCxAuth(_parse_addr(args.hss), tokens)
    server = make_exam_http_server(http_addr, node, lock, static_dir=static_dir)
    network.start()
    scheduler.start()
    threading.Thread(target=server.serve_forever, daemon=True).start()
    print(f"exam AS: SIP on {sip_addr.render()}, HTTP on http://{http_addr.render()}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.shutdown()
        scheduler.stop()
        network.stop()
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("harness", "ua", "examas"):
        print("usage: python -m imslab.cli {harness|ua|examas} ...", file=sys.stderr)
        return 2
    return {"harness": harness_main, "ua": ua_main, "examas": examas_main}[argv[0]](argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
