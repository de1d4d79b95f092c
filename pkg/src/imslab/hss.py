"""Home subscriber store and the Cx-lite query protocol.

Cx-lite replaces the Diameter wire with one JSON object per message: over the
simulated network the objects ride as CxPayload wire events; in live mode
they travel as newline-delimited JSON over TCP.  Operations: UAR/UAA
(locate or assign a serving CSCF), SAR/SAA (authenticate and set registration
state), LIR/LIA (locate the assigned CSCF), MAR/MAA (verify a credential
without touching state; used by the exam server's web login).

Passkeys are stored as salted SHA-256, never in clear; answers carry the
service profile (identities, roles, trigger rules) but no credential
material.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from .endpoint import CxPayload, Endpoint, NetAddress, SimNetwork, TokenSource
from .sip import Method, SipUri

UNREGISTERED = "unregistered"
REGISTERED = "registered"

SUCCESS = "success"
USER_UNKNOWN = "user_unknown"
AUTH_REJECTED = "auth_rejected"


class DuplicateIdentity(Exception):
    pass


@dataclass(frozen=True)
class TriggerRule:
    """Initial filter criterion: route matching requests to an AS."""

    priority: int
    target: NetAddress
    method: Optional[str] = None
    event: Optional[str] = None
    uri_user: Optional[str] = None
    uri_domain: Optional[str] = None

    def matches(self, method: Method, event: Optional[str], request_uri: SipUri) -> bool:
        if self.method is not None and self.method != method.value:
            return False
        if self.event is not None and self.event != event:
            return False
        if self.uri_user is not None and self.uri_user != (request_uri.user or ""):
            return False
        if self.uri_domain is not None and self.uri_domain != request_uri.host:
            return False
        return True

    def to_dict(self) -> dict:
        out: dict = {"priority": self.priority, "target": self.target.render()}
        for key in ("method", "event", "uri_user", "uri_domain"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TriggerRule":
        return cls(
            priority=int(data["priority"]),
            target=NetAddress.parse(data["target"]),
            method=data.get("method"),
            event=data.get("event"),
            uri_user=data.get("uri_user"),
            uri_domain=data.get("uri_domain"),
        )


def hash_passkey(passkey: str, salt: bytes) -> str:
    return hashlib.sha256(salt + passkey.encode("utf-8")).hexdigest()


@dataclass
class SubscriberProfile:
    impi: str
    impus: list[SipUri]
    salt: bytes
    passkey_hash: str
    roles: set[str] = field(default_factory=set)
    trigger_rules: list[TriggerRule] = field(default_factory=list)
    registration_state: str = UNREGISTERED
    assigned_scscf: Optional[str] = None

    def __post_init__(self):
        if not self.impus:
            raise ValueError("profile needs at least one public identity")

    @classmethod
    def provisioned(
        cls,
        impi: str,
        impus: list[SipUri],
        passkey: str,
        roles: Optional[set[str]] = None,
        trigger_rules: Optional[list[TriggerRule]] = None,
        salt: Optional[bytes] = None,
    ) -> "SubscriberProfile":
        salt = salt if salt is not None else os.urandom(8)
        return cls(
            impi=impi,
            impus=impus,
            salt=salt,
            passkey_hash=hash_passkey(passkey, salt),
            roles=roles or set(),
            trigger_rules=trigger_rules or [],
        )

    def check_passkey(self, offer: Optional[str]) -> bool:
        return offer is not None and hash_passkey(offer, self.salt) == self.passkey_hash

    def service_profile(self) -> dict:
        """What SAA/MAA carry on the wire: service data, no secrets."""
        return {
            "impi": self.impi,
            "impus": [u.render() for u in self.impus],
            "roles": sorted(self.roles),
            "trigger_rules": [r.to_dict() for r in self.trigger_rules],
            "registration_state": self.registration_state,
            "assigned_scscf": self.assigned_scscf,
        }

    def to_dict(self) -> dict:
        return {
            "impi": self.impi,
            "impus": [u.render() for u in self.impus],
            "salt": self.salt.hex(),
            "passkey_hash": self.passkey_hash,
            "roles": sorted(self.roles),
            "trigger_rules": [r.to_dict() for r in self.trigger_rules],
            "registration_state": self.registration_state,
            "assigned_scscf": self.assigned_scscf,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubscriberProfile":
        return cls(
            impi=data["impi"],
            impus=[SipUri.parse(u) for u in data["impus"]],
            salt=bytes.fromhex(data["salt"]),
            passkey_hash=data["passkey_hash"],
            roles=set(data.get("roles", [])),
            trigger_rules=[TriggerRule.from_dict(r) for r in data.get("trigger_rules", [])],
            registration_state=data.get("registration_state", UNREGISTERED),
            assigned_scscf=data.get("assigned_scscf"),
        )


@dataclass(frozen=True)
class CxMessage:
    """One Cx-lite request or answer."""

    op: str  # UAR/UAA/SAR/SAA/LIR/LIA/MAR/MAA
    cid: str
    impu: Optional[str] = None
    impi: Optional[str] = None
    scscf_name: Optional[str] = None
    assignment: Optional[str] = None  # "register" | "deregister"
    passkey_offer: Optional[str] = None
    result: Optional[str] = None
    profile: Optional[dict] = None

    def to_dict(self) -> dict:
        out: dict = {"op": self.op, "cid": self.cid}
        for key in ("impu", "impi", "scscf_name", "assignment", "result", "profile"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if self.passkey_offer is not None:
            out["passkey_offer"] = self.passkey_offer
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CxMessage":
        return cls(
            op=data["op"],
            cid=data["cid"],
            impu=data.get("impu"),
            impi=data.get("impi"),
            scscf_name=data.get("scscf_name"),
            assignment=data.get("assignment"),
            passkey_offer=data.get("passkey_offer"),
            result=data.get("result"),
            profile=data.get("profile"),
        )

    def payload(self) -> CxPayload:
        return CxPayload.from_dict(self.to_dict())

    def line(self) -> bytes:
        return (json.dumps(self.to_dict(), sort_keys=True) + "\n").encode("utf-8")


DEFAULT_SCSCF = "scscf-1"


class HssStore:
    """The master subscriber map, optionally persisted to one JSON file that
    is rewritten atomically on every mutation."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self.profiles: dict[str, SubscriberProfile] = {}  # keyed by rendered impu
        if self.path is not None and self.path.exists():
            self._load()

    # -- provisioning / persistence ---------------------------------------

    def provision_subscriber(self, profile: SubscriberProfile):
        keys = [u.render() for u in profile.impus]
        for key in keys:
            existing = self.profiles.get(key)
            if existing is not None and existing.impi != profile.impi:
                raise DuplicateIdentity(key)
            if existing is not None and existing.impi == profile.impi:
                continue
        for key in keys:
            self.profiles[key] = profile
        self._persist()

    def lookup(self, impu: str) -> Optional[SubscriberProfile]:
        return self.profiles.get(impu)

    def state_fingerprint(self) -> str:
        blob = json.dumps(
            sorted((k, p.to_dict()) for k, p in self.profiles.items()), sort_keys=True
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _load(self):
        data = json.loads(self.path.read_text())
        by_impi: dict[str, SubscriberProfile] = {}
        for entry in data["subscribers"]:
            profile = SubscriberProfile.from_dict(entry)
            by_impi[profile.impi] = profile
        for profile in by_impi.values():
            for impu in profile.impus:
                self.profiles[impu.render()] = profile

    def _persist(self):
        if self.path is None:
            return
        seen: dict[str, SubscriberProfile] = {}
        for profile in self.profiles.values():
            seen[profile.impi] = profile
        data = {"subscribers": [p.to_dict() for p in sorted(seen.values(), key=lambda p: p.impi)]}
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path)

    # -- Cx-lite handlers --------------------------------------------------

    def handle(self, req: CxMessage) -> CxMessage:
        handler = {
            "UAR": self.handle_uar,
            "SAR": self.handle_sar,
            "LIR": self.handle_lir,
            "MAR": self.handle_mar,
        }.get(req.op)
        if handler is None:
            raise ValueError(f"not a Cx-lite request: {req.op}")
        return handler(req)

    def handle_uar(self, req: CxMessage) -> CxMessage:
        """Registration locator query: which S-CSCF should serve this impu."""
        profile = self.lookup(req.impu or "")
        if profile is None:
            return CxMessage(op="UAA", cid=req.cid, impu=req.impu, result=USER_UNKNOWN)
        name = profile.assigned_scscf or DEFAULT_SCSCF
        return CxMessage(op="UAA", cid=req.cid, impu=req.impu, result=SUCCESS, scscf_name=name)

    def handle_sar(self, req: CxMessage) -> CxMessage:
        """Server assignment: passkey verified here; registration state and
        assignment flip only on success."""
        profile = self.lookup(req.impu or "")
        if profile is None:
            return CxMessage(op="SAA", cid=req.cid, impu=req.impu, result=USER_UNKNOWN)
        if not profile.check_passkey(req.passkey_offer):
            return CxMessage(op="SAA", cid=req.cid, impu=req.impu, result=AUTH_REJECTED)
        if req.assignment == "deregister":
            profile.registration_state = UNREGISTERED
            profile.assigned_scscf = None
        else:
            profile.registration_state = REGISTERED
            profile.assigned_scscf = req.scscf_name or DEFAULT_SCSCF
        self._persist()
        return CxMessage(
            op="SAA",
            cid=req.cid,
            impu=req.impu,
            result=SUCCESS,
            profile=profile.service_profile(),
        )

    def handle_lir(self, req: CxMessage) -> CxMessage:
        profile = self.lookup(req.impu or "")
        if profile is None or profile.registration_state != REGISTERED:
            return CxMessage(op="LIA", cid=req.cid, impu=req.impu, result=USER_UNKNOWN)
        return CxMessage(
            op="LIA", cid=req.cid, impu=req.impu, result=SUCCESS, scscf_name=profile.assigned_scscf
        )

    def handle_mar(self, req: CxMessage) -> CxMessage:
        """Credential check without state change (web login)."""
        profile = self.lookup(req.impu or "")
        if profile is None:
            return CxMessage(op="MAA", cid=req.cid, impu=req.impu, result=USER_UNKNOWN)
        if not profile.check_passkey(req.passkey_offer):
            return CxMessage(op="MAA", cid=req.cid, impu=req.impu, result=AUTH_REJECTED)
        return CxMessage(
            op="MAA", cid=req.cid, impu=req.impu, result=SUCCESS, profile=profile.service_profile()
        )


class HssNode:
    """HSS attached to the simulated network: answers Cx-lite wire messages."""

    def __init__(
        self,
        name: str,
        address: NetAddress,
        network: SimNetwork,
        tokens: TokenSource,
        store: Optional[HssStore] = None,
    ):
        self.name = name
        self.address = address
        self.network = network
        self.store = store if store is not None else HssStore()
        network.attach(address, self._on_wire)

    def _on_wire(self, msg, src: NetAddress):
        if not isinstance(msg, CxPayload):
            return  # the HSS speaks only Cx-lite
        req = CxMessage.from_dict(msg.to_dict())
        before = self.store.lookup(req.impu or "")
        before_state = before.registration_state if before else "absent"
        answer = self.store.handle(req)
        after = self.store.lookup(req.impu or "")
        after_state = after.registration_state if after else "absent"
        if before_state != after_state:
            self.network.record_transition(
                self.name, req.impu or "", before_state, after_state, f"cx-{req.op.lower()}"
            )
        self.network.send(self.address, src, answer.payload(), reliable=True)


class CxClient:
    """In-sim Cx-lite requester: correlates answers by cid and invokes the
    stored continuation."""

    def __init__(self, endpoint: Endpoint, hss_address: NetAddress):
        self.endpoint = endpoint
        self.hss_address = hss_address
        self.pending: dict[str, Callable[[CxMessage], None]] = {}

    def request(self, msg: CxMessage, done: Callable[[CxMessage], None]) -> bool:
        """Send one query; returns False if the HSS is unreachable."""
        self.pending[msg.cid] = done
        try:
            self.endpoint.network.send(
                self.endpoint.address, self.hss_address, msg.payload(), reliable=True
            )
        except Exception:
            del self.pending[msg.cid]
            return False
        return True

    def on_answer(self, payload: CxPayload):
        answer = CxMessage.from_dict(payload.to_dict())
        done = self.pending.pop(answer.cid, None)
        if done is not None:
            done(answer)

    @property
    def idle(self) -> bool:
        return not self.pending
