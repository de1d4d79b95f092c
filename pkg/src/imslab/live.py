"""Live transports: the same node state machines on real sockets.

Each node gets its own wall-clock scheduler thread and a UDP socket for SIP;
Cx-lite travels as newline-delimited JSON over TCP to the HSS; the exam
server and the XDMS additionally expose HTTP (the exam API plus static
assets, and the XCAP-style document RPC).  Determinism is not asserted in
this mode; the shared trace tap exists for ladder rendering and smoke
checks.
"""

from __future__ import annotations

import heapq
import json
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse
from urllib.request import Request as UrlRequest, urlopen
from urllib.error import HTTPError

from .endpoint import CxPayload, NetAddress, TimerHandle, TokenSource, Transition, WireEvent
from .examas import ExamAsNode, HttpRequest
from .harness import Scenario, Trace, build_nodes, run_action
from .hss import CxMessage, HssStore
from .sip import SipParseError, parse_message, serialize_message
from .xdms import EtagMismatch, MalformedGroupXml, NotFound, XdmDocument, XdmsStore


class LiveScheduler:
    """Wall-clock timer heap; callbacks run on this node's thread under the
    node lock, preserving the run-to-completion discipline of sim mode.

    Instants are Unix epoch milliseconds so HTTP clients can schedule exams
    with ordinary datetimes."""

    def __init__(self, epoch: float, lock: threading.RLock):
        self._epoch = epoch  # cluster start (monotonic); kept for relative logs
        self._lock = lock
        self._cond = threading.Condition()
        self._heap: list = []
        self._seq = 0
        self._stopped = False
        self._thread = threading.Thread(target=self._loop, daemon=True)

    @property
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def call_at(self, at_ms: int, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle()
        with self._cond:
            self._seq += 1
            heapq.heappush(self._heap, (at_ms, self._seq, handle, fn))
            self._cond.notify()
        return handle

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        return self.call_at(self.now_ms + delay_ms, fn)

    def cancel(self, handle: TimerHandle):
        handle.cancel()

    def start(self):
        self._thread.start()

    def stop(self):
        with self._cond:
            self._stopped = True
            self._cond.notify()
        self._thread.join(timeout=2)

    def _loop(self):
        while True:
            with self._cond:
                while not self._stopped and (not self._heap or self._heap[0][0] > self.now_ms):
                    if self._heap:
                        self._cond.wait(max((self._heap[0][0] - self.now_ms) / 1000.0, 0.001))
                    else:
                        self._cond.wait(0.2)
                if self._stopped:
                    return
                _, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            with self._lock:
                try:
                    fn()
                except Exception:
                    pass  # a crashing callback must not kill the node loop


class TraceTap:
    """Shared, thread-safe event collector for live runs."""

    def __init__(self, epoch: float):
        self._epoch = epoch
        self._lock = threading.Lock()
        self._seq = 0
        self.wire_events: list[WireEvent] = []
        self.transitions: list[Transition] = []

    def now_ms(self) -> int:
        return int((time.monotonic() - self._epoch) * 1000)

    def wire(self, src: NetAddress, dst: NetAddress, msg):
        with self._lock:
            self._seq += 1
            self.wire_events.append(WireEvent(self._seq, self.now_ms(), src, dst, msg, "delivered"))

    def transition(self, node, subject, from_state, to_state, cause):
        with self._lock:
            self.transitions.append(Transition(self.now_ms(), node, subject, from_state, to_state, cause))


class LiveNetwork:
    """Per-node transport facade with the same surface as SimNetwork: SIP
    over this node's UDP socket, Cx-lite over a lazy TCP connection."""

    def __init__(self, name: str, address: NetAddress, scheduler: LiveScheduler, tap: TraceTap):
        self.name = name
        self.address = address
        self.scheduler = scheduler
        self.tap = tap
        self._handler = None
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((address.host, address.port))
        self._sock.settimeout(0.2)
        self._stopped = False
        self._rx = threading.Thread(target=self._rx_loop, daemon=True)
        self._cx_lock = threading.Lock()
        self._cx_conns: dict[NetAddress, socket.socket] = {}

    def attach(self, addr: NetAddress, handler):
        self._handler = handler

    def record_transition(self, node, subject, from_state, to_state, cause):
        self.tap.transition(node, subject, from_state, to_state, cause)

    def send(self, src: NetAddress, dst: NetAddress, msg, *, reliable: bool = False):
        self.tap.wire(src, dst, msg)
        if isinstance(msg, CxPayload):
            self._cx_send(dst, msg)
        else:
            self._sock.sendto(serialize_message(msg), (dst.host, dst.port))

    def start(self):
        self._rx.start()

    def stop(self):
        self._stopped = True
        self._rx.join(timeout=2)
        self._sock.close()
        with self._cx_lock:
            for conn in self._cx_conns.values():
                conn.close()

    def _inject(self, msg, src: NetAddress):
        if self._handler is not None:
            self.scheduler.call_at(self.scheduler.now_ms, lambda: self._handler(msg, src))

    def _rx_loop(self):
        while not self._stopped:
            try:
                data, addr = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                msg = parse_message(data)
            except SipParseError:
                continue
            self._inject(msg, NetAddress(addr[0], addr[1]))

    def _cx_send(self, dst: NetAddress, payload: CxPayload):
        with self._cx_lock:
            conn = self._cx_conns.get(dst)
            if conn is None:
                conn = socket.create_connection((dst.host, dst.port), timeout=5)
                self._cx_conns[dst] = conn
                threading.Thread(target=self._cx_rx_loop, args=(conn, dst), daemon=True).start()
            conn.sendall(json.dumps(payload.to_dict(), sort_keys=True).encode("utf-8") + b"\n")

    def _cx_rx_loop(self, conn: socket.socket, peer: NetAddress):
        buf = b""
        while True:
            try:
                chunk = conn.recv(65535)
            except OSError:
                return
            if not chunk:
                return
            buf += chunk
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if not line.strip():
                    continue
                answer = CxPayload.from_dict(json.loads(line))
                self.tap.wire(peer, self.address, answer)
                self._inject(answer, peer)


class HssTcpServer:
    """Cx-lite over TCP: one JSON object per line, answers on the same
    connection.  Store access is serialized by one lock."""

    def __init__(self, address: NetAddress, store: HssStore, tap: Optional[TraceTap] = None):
        self.address = address
        self.store = store
        self.tap = tap
        self._lock = threading.Lock()
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((address.host, address.port))
        self._srv.listen(8)
        self._srv.settimeout(0.2)
        self._stopped = False
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self):
        self._thread.start()

    def stop(self):
        self._stopped = True
        self._thread.join(timeout=2)
        self._srv.close()

    def _accept_loop(self):
        while not self._stopped:
            try:
                conn, addr = self._srv.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn, addr), daemon=True).start()

    def _serve(self, conn: socket.socket, addr):
        peer = NetAddress(addr[0], addr[1])
        buf = b""
        with conn:
            while True:
                try:
                    chunk = conn.recv(65535)
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                while b"\n" in buf:
                    line, buf = buf.split(b"\n", 1)
                    if not line.strip():
                        continue
                    req = CxMessage.from_dict(json.loads(line))
                    if self.tap is not None:
                        self.tap.wire(peer, self.address, req.payload())
                    with self._lock:
                        answer = self.store.handle(req)
                    conn.sendall(answer.line())

    def auth_port(self, tokens: TokenSource):
        """Blocking MAR round trip for in-process HTTP login handlers."""

        def auth(impu: str, passkey: str) -> CxMessage:
            with self._lock:
                return self.store.handle_mar(
                    CxMessage(op="MAR", cid=tokens.cx_id(), impu=impu, passkey_offer=passkey)
                )

        return auth


class TcpCxAuth:
    """Standalone MAR client: one blocking query per call over TCP."""

    def __init__(self, hss: NetAddress, tokens: TokenSource):
        self.hss = hss
        self.tokens = tokens
        self._lock = threading.Lock()

    def __call__(self, impu: str, passkey: str) -> CxMessage:
        req = CxMessage(op="MAR", cid=self.tokens.cx_id(), impu=impu, passkey_offer=passkey)
        with self._lock:
            with socket.create_connection((self.hss.host, self.hss.port), timeout=5) as conn:
                conn.sendall(req.line())
                buf = b""
                while b"\n" not in buf:
                    chunk = conn.recv(65535)
                    if not chunk:
                        raise ConnectionError("HSS closed the Cx connection")
                    buf += chunk
        return CxMessage.from_dict(json.loads(buf.split(b"\n", 1)[0]))


# ---------------------------------------------------------------------------
# HTTP adapters
# ---------------------------------------------------------------------------

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def make_exam_http_server(
    listen: NetAddress,
    node: ExamAsNode,
    lock: threading.RLock,
    static_dir: Optional[Path] = None,
) -> ThreadingHTTPServer:
    """The exam API over real HTTP; optionally serves the web client bundle
    for any path outside /api."""

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS")

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.end_headers()

        def _dispatch(self):
            parsed = urlparse(self.path)
            if not parsed.path.startswith("/api"):
                if self.command == "GET" and static_dir is not None:
                    return self._static(parsed.path)
                self.send_response(404)
                self._cors()
                self.end_headers()
                return
            length = int(self.headers.get("Content-Length", "0") or 0)
            body = self.rfile.read(length) if length else b""
            request = HttpRequest(
                method=self.command,
                path=parsed.path,
                params={k: v[0] for k, v in parse_qs(parsed.query).items()},
                headers={k: v for k, v in self.headers.items()},
                body=body,
            )
            with lock:
                response = node.service.http_api(request)
            payload = response.to_bytes()
            self.send_response(response.status)
            self._cors()
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def _static(self, path: str):
            rel = path.lstrip("/") or "index.html"
            target = (static_dir / rel).resolve()
            if not str(target).startswith(str(static_dir.resolve())) or not target.is_file():
                self.send_response(404)
                self.end_headers()
                return
            data = target.read_bytes()
            self.send_response(200)
            self._cors()
            self.send_header("Content-Type", _CONTENT_TYPES.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

    server = ThreadingHTTPServer((listen.host, listen.port), Handler)
    server.daemon_threads = True
    return server


def make_xcap_http_server(listen: NetAddress, store: XdmsStore, lock: threading.RLock) -> ThreadingHTTPServer:
    """Document RPC: PUT/GET/DELETE /xcap/{auid}/users/{owner}/{doc_name}
    with If-Match etag semantics."""

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _path_parts(self):
            parts = urlparse(self.path).path.split("/")
            # ['', 'xcap', auid, 'users', owner, doc_name]
            if len(parts) == 6 and parts[1] == "xcap" and parts[3] == "users":
                return parts[2], parts[4], parts[5]
            return None

        def _fail(self, status: int, detail: str):
            data = json.dumps({"error": detail}).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            parts = self._path_parts()
            if parts is None:
                return self._fail(404, "bad xcap path")
            try:
                with lock:
                    doc = store.get_document(*parts)
            except NotFound:
                return self._fail(404, "no such document")
            self.send_response(200)
            self.send_header("Content-Type", doc.content_type)
            self.send_header("ETag", doc.etag)
            self.send_header("Content-Length", str(len(doc.body)))
            self.end_headers()
            self.wfile.write(doc.body)

        def do_PUT(self):
            parts = self._path_parts()
            if parts is None:
                return self._fail(404, "bad xcap path")
            length = int(self.headers.get("Content-Length", "0") or 0)
            body = self.rfile.read(length) if length else b""
            doc = XdmDocument(
                auid=parts[0],
                owner=parts[1],
                doc_name=parts[2],
                content_type=self.headers.get("Content-Type", "application/octet-stream"),
                body=body,
                etag="",
            )
            try:
                with lock:
                    etag = store.put_document(doc, if_etag=self.headers.get("If-Match"))
            except EtagMismatch:
                return self._fail(412, "etag mismatch")
            except MalformedGroupXml as exc:
                return self._fail(409, f"malformed group list: {exc}")
            self.send_response(201)
            self.send_header("ETag", etag)
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_DELETE(self):
            parts = self._path_parts()
            if parts is None:
                return self._fail(404, "bad xcap path")
            try:
                with lock:
                    store.delete_document(*parts)
            except NotFound:
                return self._fail(404, "no such document")
            self.send_response(204)
            self.send_header("Content-Length", "0")
            self.end_headers()

    server = ThreadingHTTPServer((listen.host, listen.port), Handler)
    server.daemon_threads = True
    return server


class HttpXdmsClient:
    """XdmsStore-compatible client over the XCAP HTTP interface; lets a
    standalone exam server keep its documents on a remote XDMS."""

    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def _url(self, auid, owner, doc_name):
        return f"{self.base_url}/xcap/{auid}/users/{owner}/{doc_name}"

    def put_document(self, doc: XdmDocument, if_etag: Optional[str] = None) -> str:
        req = UrlRequest(self._url(doc.auid, doc.owner, doc.doc_name), data=doc.body, method="PUT")
        req.add_header("Content-Type", doc.content_type)
        if if_etag is not None:
            req.add_header("If-Match", if_etag)
        try:
            with urlopen(req, timeout=5) as resp:
                return resp.headers.get("ETag", "")
        except HTTPError as exc:
            if exc.code == 412:
                raise EtagMismatch(doc.key()) from None
            if exc.code == 409:
                raise MalformedGroupXml(exc.read().decode("utf-8", "replace")) from None
            raise

    def get_document(self, auid: str, owner: str, doc_name: str) -> XdmDocument:
        try:
            with urlopen(self._url(auid, owner, doc_name), timeout=5) as resp:
                return XdmDocument(
                    auid=auid,
                    owner=owner,
                    doc_name=doc_name,
                    content_type=resp.headers.get("Content-Type", ""),
                    body=resp.read(),
                    etag=resp.headers.get("ETag", ""),
                )
        except HTTPError as exc:
            if exc.code == 404:
                raise NotFound(f"{auid}/{owner}/{doc_name}") from None
            raise

    def resolve_group(self, group_uri):
        from .xdms import GroupList, UnknownGroup
        from .cscf import identity_of

        # group documents live under the shared "sip:groups" owner
        wanted = identity_of(group_uri)
        name = group_uri.user or "group"
        try:
            doc = self.get_document("resource-lists", "sip:groups", name)
        except NotFound:
            raise UnknownGroup(group_uri.render()) from None
        group = GroupList.parse_xml(doc.body)
        if identity_of(group.group_uri) != wanted:
            raise UnknownGroup(group_uri.render())
        return list(group.members)


class LiveCluster:
    """Every node of a scenario on real sockets in one process: UDP for SIP,
    TCP for Cx-lite, HTTP for the exam API and the XCAP document RPC."""

    def __init__(
        self,
        scenario: Scenario,
        http_port: Optional[int] = None,
        xcap_port: Optional[int] = None,
        static_dir: Optional[Path] = None,
    ):
        scenario.validate()
        self.scenario = scenario
        self.epoch = time.monotonic()
        self.tap = TraceTap(self.epoch)
        self.locks: dict[str, threading.RLock] = {}
        self.schedulers: dict[str, LiveScheduler] = {}
        self.networks: dict[str, LiveNetwork] = {}
        self.servers: list = []

        def network_for(spec):
            lock = threading.RLock()
            scheduler = LiveScheduler(self.epoch, lock)
            network = LiveNetwork(spec.name, spec.address, scheduler, self.tap)
            self.locks[spec.name] = lock
            self.schedulers[spec.name] = scheduler
            self.networks[spec.name] = network
            return network

        def tokens_for(spec):
            return TokenSource(scenario.seed, label=f"{spec.name}-")

        self.nodes, self.hss_store = build_nodes(scenario, network_for, tokens_for)

        topo = scenario.topology
        for spec in topo.by_role("hss"):
            self.servers.append(HssTcpServer(spec.address, self.hss_store, self.tap))
        for spec in topo.by_role("examas"):
            node = self.nodes[spec.name]
            listen = NetAddress(spec.host, http_port if http_port is not None else spec.port + 1000)
            self.http_address = listen
            self.servers.append(
                make_exam_http_server(listen, node, self.locks[spec.name], static_dir=static_dir)
            )
        for spec in topo.by_role("xdms"):
            node = self.nodes[spec.name]
            listen = NetAddress(spec.host, xcap_port if xcap_port is not None else spec.port + 1000)
            self.xcap_address = listen
            self.servers.append(make_xcap_http_server(listen, node.store, self.locks[spec.name]))

    def start(self):
        for network in self.networks.values():
            network.start()
        for scheduler in self.schedulers.values():
            scheduler.start()
        for server in self.servers:
            if isinstance(server, HssTcpServer):
                server.start()
            else:
                threading.Thread(target=server.serve_forever, daemon=True).start()

    def stop(self):
        for server in self.servers:
            if isinstance(server, HssTcpServer):
                server.stop()
            else:
                server.shutdown()
        for scheduler in self.schedulers.values():
            scheduler.stop()
        for network in self.networks.values():
            network.stop()

    def run_timeline(self, settle_s: float = 1.0):
        for action in self.scenario.timeline:
            wait_s = action.at_ms / 1000.0 - (time.monotonic() - self.epoch)
            if wait_s > 0:
                time.sleep(wait_s)
            lock = self.locks.get(action.actor)
            if lock is not None:
                with lock:
                    run_action(self.nodes, action)
            else:
                run_action(self.nodes, action)
        time.sleep(settle_s)

    def trace(self) -> Trace:
        topo = self.scenario.topology
        return Trace(
            name=self.scenario.name,
            seed=self.scenario.seed,
            config_hash=self.scenario.config_hash(),
            nodes=[{"name": n.name, "role": n.role, "host": n.host, "port": n.port} for n in topo.nodes],
            wire_events=list(self.tap.wire_events),
            node_transitions=list(self.tap.transitions),
        )
