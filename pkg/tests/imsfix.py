"""Shared IMS scenario builder for the node-level tests."""

from __future__ import annotations

from imslab.endpoint import Topology
from imslab.harness import Scenario, SubscriberSpec, TimelineAction

DOMAIN = "ims.kau.test"


def ims_topology(ua_names, with_examas=False, p_loss=0.0, loss_seed=17) -> Topology:
    nodes = [
        {"name": "pcscf", "role": "pcscf", "host": "127.0.0.1", "port": 7001},
        {"name": "icscf", "role": "icscf", "host": "127.0.0.1", "port": 7002},
        {"name": "scscf-1", "role": "scscf", "host": "127.0.0.1", "port": 7003},
        {"name": "hss", "role": "hss", "host": "127.0.0.1", "port": 7004},
        {"name": "xdms", "role": "xdms", "host": "127.0.0.1", "port": 7005},
    ]
    if with_examas:
        nodes.append({"name": "examas", "role": "examas", "host": "127.0.0.1", "port": 7006})
    for i, name in enumerate(ua_names):
        nodes.append({"name": name, "role": "ua", "host": "127.0.0.1", "port": 7101 + i})
    return Topology.from_dict({"domain": DOMAIN, "nodes": nodes, "loss": {"p": p_loss, "seed": loss_seed}})


def subscriber(name, roles=("student",), with_rule=False) -> SubscriberSpec:
    rules = ()
    if with_rule:
        rules = ({"priority": 1, "method": "MESSAGE", "uri_user": "exam", "target_node": "examas"},)
    return SubscriberSpec(
        impi=name,
        impu=f"sip:{name}@{DOMAIN}",
        passkey=f"pk-{name}",
        roles=roles,
        trigger_rules=rules,
    )


def ims_scenario(
    name="test",
    ua_names=("s1",),
    with_examas=False,
    timeline=(),
    groups=None,
    ua_overrides=None,
    subscribers=None,
    p_loss=0.0,
    **kwargs,
) -> Scenario:
    ua_options = {}
    for ua in ua_names:
        ua_options[ua] = {"identity": f"sip:{ua}@{DOMAIN}", "passkey": f"pk-{ua}"}
    for ua, extra in (ua_overrides or {}).items():
        ua_options.setdefault(ua, {}).update(extra)
    if subscribers is None:
        subscribers = [subscriber(ua, with_rule=with_examas) for ua in ua_names]
    return Scenario(
        name=name,
        topology=ims_topology(list(ua_names), with_examas=with_examas, p_loss=p_loss),
        subscribers=list(subscribers),
        groups=groups if groups is not None else {f"sip:cs101@{DOMAIN}": [f"sip:{u}@{DOMAIN}" for u in ua_names]},
        ua_options=ua_options,
        timeline=[TimelineAction.make(at, actor, action, **args) for at, actor, action, args in timeline],
        **kwargs,
    )
