"""Policy Administration Point.

Owners store policies here. In centralized deployments the PDP reads them back;
in distributed deployments the PAP turns them into capability credentials and
publishes the status list that revokes them.
"""

import hmac
import logging
import pathlib
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional

from fastapi import FastAPI, Header, Query
from pydantic import BaseModel

from dsac.credential import (
    Bitstring,
    CapabilityCredential,
    CredentialStatus,
    IdentityToken,
    KeyPair,
    StatusList,
    Verdict,
    issue_status_list,
    new_credential_id,
    revoke,
    sign_credential,
    verify_identity_token,
)
from dsac.exceptions import (
    AuthenticationError,
    InvalidTokenError,
    NotFoundError,
    StatusListFullError,
    ValidationError,
)
from dsac.policy import Policy
from dsac.utils import (
    install_error_handlers,
    install_request_log,
    read_json_snapshot,
    write_json_snapshot,
)

logger = logging.getLogger(__name__)

OWNER_KEY_HEADER = "X-Owner-Key"
PDP_SECRET_HEADER = "X-PDP-Secret"

DEFAULT_CAPACITY = 2**17
DEFAULT_CREDENTIAL_LIFETIME = 24 * 60 * 60


@dataclass(frozen=True)
class StoredPolicy:
    id: str
    owner: str
    policy: Policy

    def to_json(self) -> Dict[str, Any]:
        return {"id": self.id, "owner": self.owner, **self.policy.to_json()}


@dataclass
class IssuedCredential:
    credential_id: str
    consumer_id: str
    list_number: int
    status_index: int
    expires_at: int
    owners: FrozenSet[str]

    def to_json(self) -> Dict[str, Any]:
        return {
            "credential_id": self.credential_id,
            "consumer_id": self.consumer_id,
            "list_number": self.list_number,
            "status_index": self.status_index,
            "expires_at": self.expires_at,
            "owners": sorted(self.owners),
        }

    def revocable_by(self, owner: str) -> bool:
        """Owners revoke what they granted; a credential granting nothing is anyone's."""
        return not self.owners or owner in self.owners


@dataclass
class ListState:
    number: int
    # the signed list as last published; every revocation re-signs it
    status_list: StatusList
    next_index: int = 0
    issued: Dict[int, IssuedCredential] = field(default_factory=dict)

    @property
    def bits(self) -> Bitstring:
        return self.status_list.bits

    @property
    def full(self) -> bool:
        return self.next_index >= self.status_list.bit_count


class PolicyAdministrationPoint:
    def __init__(
        self,
        issuer: str,
        key: KeyPair,
        public_url: str,
        owner_keys: Mapping[str, str],
        pdp_secrets: Iterable[str] = (),
        trusted_idps: Optional[Mapping[str, str]] = None,
        capacity: int = DEFAULT_CAPACITY,
        credential_lifetime: int = DEFAULT_CREDENTIAL_LIFETIME,
        max_lists: Optional[int] = None,
        clock_skew: float = 30,
        snapshot: Optional[pathlib.Path] = None,
        clock: Callable[[], float] = time.time,
    ):
        if capacity <= 0:
            raise ValidationError("Status list capacity must be positive")
        self.issuer = issuer
        self.key = key
        self.public_url = public_url.rstrip("/")
        self.capacity = capacity
        self.credential_lifetime = credential_lifetime
        self.max_lists = max_lists
        self.clock_skew = clock_skew
        self._owner_keys = dict(owner_keys)
        self._pdp_secrets = list(pdp_secrets)
        self._trusted_idps = dict(trusted_idps or {})
        self._snapshot = snapshot
        self._clock = clock
        self._policies: Dict[str, StoredPolicy] = {}
        self._lists: Dict[int, ListState] = {}
        self._current = 0
        self._lock = threading.RLock()
        self._load_snapshot()
        if not self._lists:
            self._lists[0] = ListState(0, self._sign_list(0, Bitstring(capacity)))

    # persistence

    def _load_snapshot(self) -> None:
        data = read_json_snapshot(self._snapshot)
        if not data:
            return
        for item in data.get("policies", []):
            stored = StoredPolicy(item["id"], item["owner"], Policy.from_json(item))
            self._policies[stored.id] = stored
        for item in data.get("lists", []):
            state = ListState(
                item["number"],
                StatusList.from_json(item["status_list"]),
                item["next_index"],
            )
            for rec in item.get("issued", []):
                issued = IssuedCredential(
                    rec["credential_id"],
                    rec["consumer_id"],
                    rec["list_number"],
                    rec["status_index"],
                    rec["expires_at"],
                    frozenset(rec["owners"]),
                )
                state.issued[issued.status_index] = issued
            self._lists[state.number] = state
        self._current = data.get("current", max(self._lists, default=0))
        logger.info(f"Loaded {len(self._policies)} policies from {self._snapshot}")

    def _save_snapshot(self) -> None:
        if self._snapshot is None:
            return
        with self._lock:
            data = {
                "policies": [p.to_json() for p in self._policies.values()],
                "current": self._current,
                "lists": [
                    {
                        "number": state.number,
                        "status_list": state.status_list.to_json(),
                        "next_index": state.next_index,
                        "issued": [rec.to_json() for rec in state.issued.values()],
                    }
                    for state in self._lists.values()
                ],
            }
        write_json_snapshot(self._snapshot, data)

    # authentication

    def _owner(self, owner_key: Optional[str]) -> str:
        if owner_key:
            for key, owner in self._owner_keys.items():
                if hmac.compare_digest(key.encode("utf-8"), owner_key.encode("utf-8")):
                    return owner
        raise AuthenticationError("invalid owner key")

    def _is_pdp(self, secret: Optional[str]) -> bool:
        if not secret:
            return False
        return any(
            hmac.compare_digest(s.encode("utf-8"), secret.encode("utf-8"))
            for s in self._pdp_secrets
        )

    def _verify_token(self, token: IdentityToken) -> str:
        verdict = verify_identity_token(token, self._trusted_idps, self._clock(), self.clock_skew)
        if verdict is not Verdict.OK:
            raise InvalidTokenError(verdict.value)
        return token.consumer_id

    # policies

    def put_policy(self, owner_key: Optional[str], policy: Policy) -> str:
        owner = self._owner(owner_key)
        policy_id = uuid.uuid4().hex
        with self._lock:
            self._policies[policy_id] = StoredPolicy(policy_id, owner, policy)
        logger.info(
            f"{owner} granted {policy.operation.value} on {policy.resource} "
            f"to {policy.consumer_id} ({policy_id})",
        )
        self._save_snapshot()
        return policy_id

    def delete_policy(self, owner_key: Optional[str], policy_id: str) -> None:
        owner = self._owner(owner_key)
        with self._lock:
            stored = self._policies.get(policy_id)
            if stored is None or stored.owner != owner:
                raise NotFoundError("Policy", policy_id)
            del self._policies[policy_id]
        logger.info(f"{owner} deleted policy {policy_id}")
        self._save_snapshot()

    def list_policies(self, consumer_id: Optional[str] = None) -> List[StoredPolicy]:
        with self._lock:
            return [
                p
                for p in self._policies.values()
                if consumer_id is None or p.policy.consumer_id == consumer_id
            ]

    def get_policies(
        self,
        consumer_id: str,
        pdp_secret: Optional[str] = None,
        owner_key: Optional[str] = None,
        identity_token: Optional[IdentityToken] = None,
    ) -> List[StoredPolicy]:
        """Policies of one consumer, for a PDP, an owner, or that consumer."""
        if not self._is_pdp(pdp_secret):
            if owner_key is not None:
                self._owner(owner_key)
            elif identity_token is None or self._verify_token(identity_token) != consumer_id:
                raise AuthenticationError("PDP secret, owner key or consumer token required")
        return self.list_policies(consumer_id)

    # credentials

    def status_list_url(self, number: int) -> str:
        return f"{self.public_url}/status-list/{number}"

    def _sign_list(self, number: int, bits: Bitstring) -> StatusList:
        url = self.status_list_url(number)
        return issue_status_list(url, self.issuer, bits, int(self._clock()), self.key)

    def _expire(self, now: float) -> None:
        for state in list(self._lists.values()):
            for index in [i for i, rec in state.issued.items() if rec.expires_at <= now]:
                del state.issued[index]
            if state.number != self._current and not state.issued:
                logger.info(f"Dropping status list {state.number}: all its credentials expired")
                del self._lists[state.number]
        current = self._lists[self._current]
        if current.next_index > 0 and not current.issued:
            # everything on the current list expired; start afresh under a new URL
            self._rotate()

    def _rotate(self) -> None:
        if not self._lists[self._current].issued:
            del self._lists[self._current]
        self._current += 1
        self._lists[self._current] = ListState(
            self._current,
            self._sign_list(self._current, Bitstring(self.capacity)),
        )
        logger.info(f"Started status list {self._current}")

    def _allocate(self, record: IssuedCredential) -> CredentialStatus:
        state = self._lists[self._current]
        if state.full:
            if self.max_lists is not None and len(self._lists) >= self.max_lists:
                raise StatusListFullError(self.capacity)
            self._rotate()
            state = self._lists[self._current]
        record.list_number = state.number
        record.status_index = state.next_index
        state.issued[state.next_index] = record
        state.next_index += 1
        return CredentialStatus(self.status_list_url(state.number), record.status_index)

    def issue_capability_vc(
        self,
        identity_token: IdentityToken,
        subject_public_key: str,
    ) -> CapabilityCredential:
        consumer_id = self._verify_token(identity_token)
        now = int(self._clock())
        with self._lock:
            self._expire(now)
            stored = self.list_policies(consumer_id)
            record = IssuedCredential(
                credential_id=new_credential_id(),
                consumer_id=consumer_id,
                list_number=-1,
                status_index=-1,
                expires_at=now + self.credential_lifetime,
                owners=frozenset(p.owner for p in stored),
            )
            status = self._allocate(record)
            try:
                vc = sign_credential(
                    CapabilityCredential(
                        id=record.credential_id,
                        issuer=self.issuer,
                        issuer_key=self.key.public_key_b64,
                        subject_id=consumer_id,
                        subject_public_key=subject_public_key,
                        capabilities=tuple(
                            (p.policy.operation, p.policy.resource) for p in stored
                        ),
                        issued_at=now,
                        expires_at=record.expires_at,
                        credential_status=status,
                    ),
                    self.key,
                )
            except ValidationError:
                # index is burnt but never handed out
                del self._lists[record.list_number].issued[record.status_index]
                raise
        logger.info(
            f"Issued {vc.id} to {consumer_id} with {len(vc.capabilities)} capabilities "
            f"(list {record.list_number}, index {record.status_index})",
        )
        self._save_snapshot()
        return vc

    def revoke_vc(
        self,
        owner_key: Optional[str],
        consumer_id: Optional[str] = None,
        status_index: Optional[int] = None,
        list_number: Optional[int] = None,
    ) -> List[CredentialStatus]:
        owner = self._owner(owner_key)
        if (consumer_id is None) == (status_index is None):
            raise ValidationError("Revoke either by consumer_id or by status_index")
        now = int(self._clock())
        revoked: List[CredentialStatus] = []
        with self._lock:
            self._expire(now)
            if status_index is not None:
                number = self._current if list_number is None else list_number
                state = self._lists.get(number)
                record = state.issued.get(status_index) if state else None
                targets = [record] if record is not None and record.revocable_by(owner) else []
            else:
                targets = [
                    rec
                    for state in self._lists.values()
                    for rec in state.issued.values()
                    if rec.consumer_id == consumer_id and rec.revocable_by(owner)
                ]
            if not targets:
                raise NotFoundError("Credential", str(consumer_id or status_index))
            for rec in targets:
                state = self._lists[rec.list_number]
                state.status_list = revoke(state.status_list, rec.status_index, self.key, now)
                revoked.append(
                    CredentialStatus(self.status_list_url(rec.list_number), rec.status_index),
                )
                logger.info(f"{owner} revoked {rec.credential_id} of {rec.consumer_id}")
        self._save_snapshot()
        return revoked

    def publish_status_list(self, number: Optional[int] = None) -> StatusList:
        now = int(self._clock())
        with self._lock:
            self._expire(now)
            number = self._current if number is None else number
            state = self._lists.get(number)
            if state is None:
                raise NotFoundError("Status list", str(number))
            if state.status_list.issued_at < now:
                # issued_at is the time of the latest publication
                state.status_list = self._sign_list(number, state.bits)
            return state.status_list

    def jwks(self) -> Dict[str, Any]:
        return {
            "keys": [
                {
                    "kty": "OKP",
                    "crv": "Ed25519",
                    "kid": self.key.key_id,
                    "issuer": self.issuer,
                    "x": self.key.public_key_b64,
                },
            ],
        }


class PolicyBody(BaseModel):
    consumer_id: str
    operation: str
    resource: Dict[str, str]


class IssuanceRequest(BaseModel):
    identity_token: str
    subject_public_key: str


class RevocationRequest(BaseModel):
    consumer_id: Optional[str] = None
    status_index: Optional[int] = None
    list_number: Optional[int] = None


def _bearer(authorization: Optional[str]) -> Optional[IdentityToken]:
    if not authorization:
        return None
    scheme, _, token = authorization.partition(" ")
    if scheme.lower() != "bearer" or not token:
        raise InvalidTokenError("malformed")
    return IdentityToken.decode(token)


def create_app(pap: PolicyAdministrationPoint) -> FastAPI:
    app = FastAPI(title="dsac policy administration point")
    install_error_handlers(app)
    install_request_log(app)
    app.state.pap = pap

    @app.put("/policies", status_code=201)
    def put_policy(
        body: PolicyBody,
        owner_key: Optional[str] = Header(None, alias=OWNER_KEY_HEADER),
    ) -> Dict[str, str]:
        return {"id": pap.put_policy(owner_key, Policy.from_json(body.model_dump()))}

    @app.delete("/policies/{policy_id}", status_code=204)
    def delete_policy(
        policy_id: str,
        owner_key: Optional[str] = Header(None, alias=OWNER_KEY_HEADER),
    ) -> None:
        pap.delete_policy(owner_key, policy_id)

    @app.get("/policies")
    def get_policies(
        consumer_id: str = Query(...),
        pdp_secret: Optional[str] = Header(None, alias=PDP_SECRET_HEADER),
        owner_key: Optional[str] = Header(None, alias=OWNER_KEY_HEADER),
        authorization: Optional[str] = Header(None),
    ) -> List[Dict[str, Any]]:
        stored = pap.get_policies(
            consumer_id,
            pdp_secret=pdp_secret,
            owner_key=owner_key,
            identity_token=_bearer(authorization),
        )
        return [p.to_json() for p in stored]

    @app.post("/credentials", status_code=201)
    def issue_credential(body: IssuanceRequest) -> Dict[str, Any]:
        token = IdentityToken.decode(body.identity_token)
        return pap.issue_capability_vc(token, body.subject_public_key).to_json()

    @app.post("/revocations")
    def revoke_credentials(
        body: RevocationRequest,
        owner_key: Optional[str] = Header(None, alias=OWNER_KEY_HEADER),
    ) -> Dict[str, Any]:
        revoked = pap.revoke_vc(owner_key, body.consumer_id, body.status_index, body.list_number)
        return {"revoked": [status.to_json() for status in revoked]}

    @app.get("/status-list")
    def current_status_list() -> Dict[str, Any]:
        return pap.publish_status_list().to_json()

    @app.get("/status-list/{number}")
    def status_list(number: int) -> Dict[str, Any]:
        return pap.publish_status_list(number).to_json()

    @app.get("/jwks")
    def jwks() -> Dict[str, Any]:
        return pap.jwks()

    return app
