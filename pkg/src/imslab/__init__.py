"""Desk-scale IMS/SIP signaling testbed hosting a mass-examination service.

The package is organized by network function: sip (message grammar),
endpoint (transports, transactions, virtual time), cscf (P/I/S-CSCF), hss,
xdms, examas (the application server), ua (user agents), basic (standalone
proxy/redirect roles), harness (scenario runner and flow assertions), and
live (UDP/TCP/HTTP adapters for running the same nodes on real sockets).
"""

from .sip import (
    Method,
    SipMessage,
    SipUri,
    Via,
    make_request,
    make_response,
    parse_message,
    serialize_message,
)
from .endpoint import NetAddress, Scheduler, SimNetwork, TimerConfig, TokenSource, Topology
from .harness import (
    FlowPattern,
    FlowStep,
    Scenario,
    SimRun,
    Trace,
    assert_flow,
    builtin_scenarios,
    render_ladder,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "Method",
    "SipMessage",
    "SipUri",
    "Via",
    "make_request",
    "make_response",
    "parse_message",
    "serialize_message",
    "NetAddress",
    "Scheduler",
    "SimNetwork",
    "TimerConfig",
    "TokenSource",
    "Topology",
    "FlowPattern",
    "FlowStep",
    "Scenario",
    "SimRun",
    "Trace",
    "assert_flow",
    "builtin_scenarios",
    "render_ladder",
    "run",
    "__version__",
]
