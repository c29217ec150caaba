"""Policy Decision Point.

Decides access requests in two modes. Centralized: an identity token from the
IdP, policies fetched from the PAP. Distributed: a Verifiable Presentation
checked offline against cached status lists. Also hosts the PIP (type
inference against the broker), the nonce store, and the registry of active
subscriptions that is swept when access rights lapse.
"""

import json
import logging
import secrets
import threading
import time
import urllib.parse
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import requests
from fastapi import Body, FastAPI
from pydantic import BaseModel

from dsac.credential import (
    CapabilityCredential,
    IdentityToken,
    Presentation,
    PresentationVerdict,
    StatusList,
    Verdict,
    presentation_signed,
    verify_credential,
    verify_identity_token,
    verify_presentation,
    verify_status_list,
)
from dsac.exceptions import (
    ConflictError,
    CorruptStatusListError,
    DataSpaceError,
    NotFoundError,
    ServiceUnavailableError,
    ValidationError,
)
from dsac.pap import PDP_SECRET_HEADER
from dsac.policy import Operation, Policy, ResourceUrl, UrlKind, decide, policies_from_json
from dsac.utils import install_error_handlers

__all__ = (
    "AccessRequest",
    "BrokerClient",
    "CachedCapability",
    "Decision",
    "NonceStore",
    "PapClient",
    "PdpSettings",
    "PolicyDecisionPoint",
    "PolicyInformationPoint",
    "SubscriptionRecord",
    "create_app",
    "load_status_list_files",
)

logger = logging.getLogger(__name__)

NGSI_LD_PREFIX = "/ngsi-ld/v1"


@dataclass(frozen=True)
class Decision:
    permit: bool
    reason: str
    grant: Optional[str] = None
    # handle of a capability session the holder may use instead of a new presentation
    session: Optional[str] = None

    @classmethod
    def allow(cls, grant: Optional[str] = None, session: Optional[str] = None) -> "Decision":
        return cls(True, "ok", grant, session)

    @classmethod
    def deny(cls, reason: str) -> "Decision":
        return cls(False, reason)

    def to_json(self) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "decision": "permit" if self.permit else "deny",
            "reason": self.reason,
        }
        if self.grant:
            body["grant"] = self.grant
        if self.session:
            body["session"] = self.session
        return body

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Decision":
        return cls(
            permit=data.get("decision") == "permit",
            reason=str(data.get("reason") or "unknown"),
            grant=data.get("grant"),
            session=data.get("session"),
        )


@dataclass(frozen=True)
class AccessRequest:
    operation: Operation
    targets: Tuple[ResourceUrl, ...] = ()
    identity_token: Optional[IdentityToken] = None
    presentation: Optional[Presentation] = None
    session: Optional[str] = None
    # set when deleting a subscription; the PDP supplies the original filter
    subscription_id: Optional[str] = None
    method: str = ""
    path: str = ""

    def to_json(self) -> Dict[str, Any]:
        return {
            "operation": self.operation.value,
            "targets": [t.to_json() for t in self.targets],
            "identity_token": self.identity_token.encode() if self.identity_token else None,
            "presentation": self.presentation.to_json() if self.presentation else None,
            "session": self.session,
            "subscription_id": self.subscription_id,
            "method": self.method,
            "path": self.path,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "AccessRequest":
        token = data.get("identity_token")
        presentation = data.get("presentation")
        return cls(
            operation=Operation(data["operation"]),
            targets=tuple(ResourceUrl.from_json(t) for t in data.get("targets") or ()),
            identity_token=IdentityToken.decode(token) if token else None,
            presentation=Presentation.from_json(presentation) if presentation else None,
            session=data.get("session") or None,
            subscription_id=data.get("subscription_id"),
            method=data.get("method") or "",
            path=data.get("path") or "",
        )


@dataclass(frozen=True)
class CredentialRef:
    credential_id: str
    issuer: str
    status_list_url: str
    status_index: int
    expires_at: int

    @classmethod
    def of(cls, vc: CapabilityCredential) -> "CredentialRef":
        return cls(
            vc.id,
            vc.issuer,
            vc.credential_status.status_list_url,
            vc.credential_status.status_index,
            vc.expires_at,
        )


@dataclass
class CachedCapability:
    key_id: str
    capabilities: Tuple[Policy, ...]
    source: CredentialRef

    @property
    def expires_at(self) -> int:
        return self.source.expires_at


@dataclass
class SubscriptionRecord:
    subscription_id: str
    consumer: str
    target: ResourceUrl
    created_at: float
    credentials: Tuple[CredentialRef, ...] = ()
    # centralized mode: re-checked against the PAP on every sweep
    consumer_id: Optional[str] = None

    @property
    def mode(self) -> str:
        return "distributed" if self.credentials else "centralized"

    def to_json(self) -> Dict[str, Any]:
        return {
            "subscription_id": self.subscription_id,
            "consumer": self.consumer,
            "target": self.target.to_json(),
            "created_at": self.created_at,
            "mode": self.mode,
            "credentials": [ref.credential_id for ref in self.credentials],
        }


@dataclass
class _PendingGrant:
    consumer: str
    target: ResourceUrl
    credentials: Tuple[CredentialRef, ...]
    consumer_id: Optional[str]
    expires_at: float


@dataclass
class _CapabilitySession:
    key_id: str
    credentials: Tuple[CredentialRef, ...]
    expires_at: float


@dataclass
class _CachedList:
    status_list: StatusList
    fetched_at: float


@dataclass
class PdpSettings:
    audience: str
    broker_url: str
    trusted_paps: Dict[str, str] = field(default_factory=dict)
    trusted_idps: Dict[str, str] = field(default_factory=dict)
    pap_url: Optional[str] = None
    pdp_secret: str = ""
    refresh_interval: float = 60
    sweep_interval: float = 30
    freshness_window: float = 300
    nonce_window: float = 120
    clock_skew: float = 30
    pip_ttl: float = 30
    request_timeout: float = 3
    session_lifetime: float = 300
    max_status_list_bits: int = 1 << 20


class BrokerClient:
    def __init__(self, broker_url: str, session: requests.Session, timeout: float = 3):
        self.broker_url = broker_url.rstrip("/")
        self._session = session
        self._timeout = timeout
        self.calls = 0

    def entity_type(self, entity_id: str) -> Optional[str]:
        self.calls += 1
        url = f"{self.broker_url}{NGSI_LD_PREFIX}/entities/{urllib.parse.quote(entity_id, safe='')}"
        try:
            r = self._session.get(url, params={"attrs": "type"}, timeout=self._timeout)
        except requests.RequestException as err:
            logger.warning(f"Broker unreachable for type lookup of {entity_id}: {err}")
            return None
        if r.status_code != 200:
            logger.debug(f"Type lookup of {entity_id} answered {r.status_code}")
            return None
        try:
            entity_type = r.json().get("type")
        except ValueError:
            return None
        return entity_type if isinstance(entity_type, str) else None

    def delete_subscription(self, subscription_id: str) -> bool:
        """Whether the subscription is gone from the broker."""
        self.calls += 1
        url = f"{self.broker_url}{NGSI_LD_PREFIX}/subscriptions/{subscription_id}"
        try:
            r = self._session.delete(url, timeout=self._timeout)
        except requests.RequestException as err:
            logger.warning(f"Could not delete subscription {subscription_id}: {err}")
            return False
        return r.status_code in (200, 204, 404)


class PolicyInformationPoint:
    """Infers object types through the broker, caching answers for ``ttl`` seconds."""

    def __init__(
        self,
        broker: BrokerClient,
        ttl: float = 30,
        clock: Callable[[], float] = time.time,
    ):
        self._broker = broker
        self._ttl = ttl
        self._clock = clock
        self._cache: Dict[str, Tuple[Optional[ResourceUrl], float]] = {}
        self._lock = threading.Lock()

    def infer_type(self, obj: ResourceUrl) -> Optional[ResourceUrl]:
        if obj.kind is not UrlKind.OBJECT:
            return None
        now = self._clock()
        with self._lock:
            cached = self._cache.get(obj.value)
        if cached is not None and cached[1] > now:
            return cached[0]
        found = self._broker.entity_type(obj.value)
        try:
            result = ResourceUrl.type_url(found) if found else None
        except ValidationError:
            result = None
        if result is not None:
            # unknown answers are not cached so a new object is visible at once
            with self._lock:
                self._cache[obj.value] = (result, now + self._ttl)
        return result

    __call__ = infer_type


class NonceStore:
    def __init__(self, window: float = 120, clock: Callable[[], float] = time.time):
        self._window = window
        self._clock = clock
        self._nonces: Dict[str, float] = {}
        self._lock = threading.Lock()

    def issue(self) -> Tuple[str, float]:
        nonce = secrets.token_urlsafe(16)
        expires_at = self._clock() + self._window
        with self._lock:
            self._purge()
            self._nonces[nonce] = expires_at
        return nonce, expires_at

    def consume(self, nonce: str) -> bool:
        """Single use: True only for the first use of a live nonce."""
        with self._lock:
            expires_at = self._nonces.pop(nonce, None)
        return expires_at is not None and self._clock() < expires_at

    def _purge(self) -> None:
        now = self._clock()
        for nonce in [n for n, exp in self._nonces.items() if exp <= now]:
            del self._nonces[nonce]

    def __len__(self) -> int:
        return len(self._nonces)


class PapClient:
    def __init__(self, session: requests.Session, pdp_secret: str = "", timeout: float = 3):
        self._session = session
        self._pdp_secret = pdp_secret
        self._timeout = timeout
        self.calls = 0
        self.status_list_fetches = 0

    def get_policies(self, pap_url: str, consumer_id: str) -> List[Policy]:
        self.calls += 1
        try:
            r = self._session.get(
                f"{pap_url.rstrip('/')}/policies",
                params={"consumer_id": consumer_id},
                headers={PDP_SECRET_HEADER: self._pdp_secret},
                timeout=self._timeout,
            )
        except requests.RequestException as err:
            raise ServiceUnavailableError("PAP", str(err)) from err
        if r.status_code != 200:
            raise ServiceUnavailableError("PAP", f"policies answered {r.status_code}")
        return policies_from_json(r.json())

    def fetch_status_list(self, url: str) -> StatusList:
        self.calls += 1
        self.status_list_fetches += 1
        try:
            r = self._session.get(url, timeout=self._timeout)
        except requests.RequestException as err:
            raise ServiceUnavailableError("PAP", str(err)) from err
        if r.status_code != 200:
            raise ServiceUnavailableError("PAP", f"status list answered {r.status_code}")
        try:
            return StatusList.from_json(r.json())
        except ValueError as err:
            raise CorruptStatusListError(str(err)) from err


class PolicyDecisionPoint:
    def __init__(
        self,
        settings: PdpSettings,
        session: Optional[requests.Session] = None,
        clock: Callable[[], float] = time.time,
        broker: Optional[BrokerClient] = None,
        pap_client: Optional[PapClient] = None,
    ):
        self.settings = settings
        self._clock = clock
        session = session or requests.Session()
        self.broker = broker or BrokerClient(settings.broker_url, session, settings.request_timeout)
        self.pap_client = pap_client or PapClient(
            session,
            settings.pdp_secret,
            settings.request_timeout,
        )
        self.pip = PolicyInformationPoint(self.broker, settings.pip_ttl, clock)
        self.nonces = NonceStore(settings.nonce_window, clock)
        self._lists: Dict[str, _CachedList] = {}
        self._capabilities: Dict[str, Dict[str, CachedCapability]] = {}
        self._subscriptions: Dict[str, SubscriptionRecord] = {}
        self._grants: Dict[str, _PendingGrant] = {}
        self._sessions: Dict[str, _CapabilitySession] = {}
        self._lock = threading.RLock()
        self._stop = threading.Event()
        self._worker: Optional[threading.Thread] = None
        self.decisions = {"permit": 0, "deny": 0}

    # status lists

    def _is_fresh(self, status_list: StatusList, now: float) -> bool:
        return now - status_list.issued_at <= self.settings.freshness_window

    def _fresh_lists(self, now: float) -> Dict[str, StatusList]:
        with self._lock:
            return {
                url: cached.status_list
                for url, cached in self._lists.items()
                if self._is_fresh(cached.status_list, now)
            }

    def accept_status_list(self, status_list: StatusList, now: Optional[float] = None) -> bool:
        """Install a status list from any source once its size and signature check out.

        The bitstring is only inflated after the signature is known to be good.
        """
        now = self._clock() if now is None else now
        if status_list.bit_count > self.settings.max_status_list_bits:
            logger.warning(f"Rejected status list {status_list.id}: {status_list.bit_count} bits")
            return False
        verdict = verify_status_list(status_list, self.settings.trusted_paps)
        if verdict is not Verdict.OK:
            logger.warning(f"Rejected status list {status_list.id}: {verdict.value}")
            return False
        try:
            revoked = status_list.bits.count()
        except CorruptStatusListError as err:
            logger.warning(f"Rejected status list {status_list.id}: {err}")
            return False
        with self._lock:
            cached = self._lists.get(status_list.id)
            if cached is not None and cached.status_list.issued_at > status_list.issued_at:
                logger.warning(f"Ignored status list {status_list.id} older than the cached one")
                return False
            self._lists[status_list.id] = _CachedList(status_list, now)
        logger.debug(
            f"Status list {status_list.id} issued at {status_list.issued_at} accepted, "
            f"{revoked} revoked",
        )
        return True

    def _fetch_list(self, url: str, issuer: str, now: float) -> bool:
        try:
            status_list = self.pap_client.fetch_status_list(url)
        except DataSpaceError as err:
            logger.warning(f"Status list fetch {url} failed: {err}")
            return False
        if status_list.id != url or status_list.issuer != issuer:
            logger.warning(
                f"Status list served at {url} claims {status_list.id} of {status_list.issuer}",
            )
            return False
        return self.accept_status_list(status_list, now)

    def _watched_lists(self) -> Dict[str, str]:
        with self._lock:
            refs = [c.source for caps in self._capabilities.values() for c in caps.values()]
            refs += [ref for rec in self._subscriptions.values() for ref in rec.credentials]
        return {ref.status_list_url: ref.issuer for ref in refs}

    def refresh_status_lists(self, now: Optional[float] = None) -> Dict[str, Dict[str, Any]]:
        """Fetch each watched status list once and drop revoked or expired capabilities."""
        now = self._clock() if now is None else now
        report: Dict[str, Dict[str, Any]] = {}
        for url, issuer in self._watched_lists().items():
            fetched = self._fetch_list(url, issuer, now)
            with self._lock:
                cached = self._lists.get(url)
            report[url] = {
                "issuer": issuer,
                "fetched": fetched,
                "fresh": cached is not None and self._is_fresh(cached.status_list, now),
            }
        self._prune_capabilities(now)
        return report

    def _ref_state(self, ref: CredentialRef, now: float, fresh_only: bool = False) -> Verdict:
        if now >= ref.expires_at + self.settings.clock_skew:
            return Verdict.EXPIRED
        with self._lock:
            cached = self._lists.get(ref.status_list_url)
        if cached is None or ref.status_index >= cached.status_list.bit_count:
            return Verdict.STATUS_UNKNOWN
        if fresh_only and not self._is_fresh(cached.status_list, now):
            return Verdict.STATUS_UNKNOWN
        if cached.status_list.is_revoked(ref.status_index):
            return Verdict.REVOKED
        return Verdict.OK

    def _prune_capabilities(self, now: float) -> None:
        with self._lock:
            for key_id, caps in list(self._capabilities.items()):
                for credential_id, cap in list(caps.items()):
                    state = self._ref_state(cap.source, now)
                    if state in (Verdict.EXPIRED, Verdict.REVOKED):
                        logger.info(f"Dropping capabilities of {credential_id}: {state.value}")
                        del caps[credential_id]
                if not caps:
                    del self._capabilities[key_id]

    # decisions

    def issue_nonce(self) -> Tuple[str, float]:
        return self.nonces.issue()

    def authorize(self, req: AccessRequest, now: Optional[float] = None) -> Decision:
        now = self._clock() if now is None else now
        try:
            decision = self._authorize(req, now)
        except Exception:
            logger.exception(f"Decision on {req.method} {req.path} failed")
            decision = Decision.deny("internal_error")
        self.decisions["permit" if decision.permit else "deny"] += 1
        logger.info(
            f"{'permit' if decision.permit else 'deny'} {req.operation.value} "
            f"{req.method} {req.path} ({decision.reason})",
        )
        return decision

    def _authorize(self, req: AccessRequest, now: float) -> Decision:
        credentials: Tuple[CredentialRef, ...] = ()
        consumer_id: Optional[str] = None
        session: Optional[str] = None
        if req.presentation is not None:
            outcome = self._verify_presentation(req.presentation, now)
            if isinstance(outcome, Decision):
                return outcome
            consumer, policies, credentials = outcome
        elif req.session is not None:
            outcome = self._resume_session(req.session, now)
            if isinstance(outcome, Decision):
                return outcome
            consumer, policies, credentials = outcome
            session = req.session
        elif req.identity_token is not None:
            token = req.identity_token
            verdict = verify_identity_token(
                token,
                self.settings.trusted_idps,
                now,
                self.settings.clock_skew,
            )
            if verdict is not Verdict.OK:
                return Decision.deny(f"invalid_token:{verdict.value}")
            if not self.settings.pap_url:
                return Decision.deny("centralized_mode_disabled")
            try:
                policies = self.pap_client.get_policies(self.settings.pap_url, token.consumer_id)
            except (DataSpaceError, ValueError) as err:
                logger.warning(f"Could not collect policies of {token.consumer_id}: {err}")
                return Decision.deny("pap_unavailable")
            consumer = consumer_id = token.consumer_id
        else:
            return Decision.deny("missing_proof")

        targets = req.targets
        if req.subscription_id is not None:
            with self._lock:
                record = self._subscriptions.get(req.subscription_id)
            if record is None:
                return Decision.deny("unknown_subscription")
            if record.consumer != consumer:
                return Decision.deny("not_subscription_owner")
            targets = (record.target,)
        if not targets:
            return Decision.deny("no_targets")

        for target in targets:
            if not decide(policies, consumer, req.operation, target, self.pip):
                return Decision.deny("not_authorized")

        if req.presentation is not None:
            session = self._open_session(consumer, credentials, now)
        if req.operation is Operation.SUBSCRIBE and req.subscription_id is None:
            grant = uuid.uuid4().hex
            with self._lock:
                self._purge_grants(now)
                self._grants[grant] = _PendingGrant(
                    consumer,
                    targets[0],
                    credentials,
                    consumer_id,
                    now + self.settings.nonce_window,
                )
            return Decision.allow(grant, session)
        return Decision.allow(session=session)

    def _verify_presentation(
        self,
        vp: Presentation,
        now: float,
    ) -> Any:
        settings = self.settings
        # an unsigned presentation must not use up the holder's nonce
        if not presentation_signed(vp):
            return Decision.deny(PresentationVerdict.BAD_PROOF.value)
        expected_nonce = vp.nonce if self.nonces.consume(vp.nonce) else None

        def verify() -> Any:
            return verify_presentation(
                vp,
                expected_nonce,
                settings.audience,
                settings.trusted_paps,
                now,
                self._fresh_lists(now),
                settings.clock_skew,
            )

        result = verify()
        if result.credential_verdict is Verdict.STATUS_UNKNOWN:
            # revocation status must be known right after a VP is received
            for vc in vp.credentials:
                unknown = verify_credential(
                    vc, settings.trusted_paps, now, None, settings.clock_skew,
                )
                if unknown is Verdict.STATUS_UNKNOWN:
                    self._fetch_list(vc.credential_status.status_list_url, vc.issuer, now)
            result = verify()
        if not result.ok:
            if result.verdict is PresentationVerdict.VC_FAILURE:
                logger.info(f"Credential {result.credential_id} failed: {result.reason}")
            return Decision.deny(result.reason)

        key_id = vp.credentials[0].subject_key_id
        policies: List[Policy] = []
        with self._lock:
            caps = self._capabilities.setdefault(key_id, {})
            for vc in vp.credentials:
                cap = CachedCapability(key_id, tuple(vc.policies()), CredentialRef.of(vc))
                caps[vc.id] = cap
                policies.extend(cap.capabilities)
        return key_id, policies, tuple(CredentialRef.of(vc) for vc in vp.credentials)

    # capability sessions

    def _open_session(
        self,
        key_id: str,
        credentials: Tuple[CredentialRef, ...],
        now: float,
    ) -> str:
        """Let the holder of a verified presentation reuse its cached capabilities."""
        expires_at = min(
            [now + self.settings.session_lifetime] + [ref.expires_at for ref in credentials],
        )
        handle = secrets.token_urlsafe(16)
        with self._lock:
            for stale in [h for h, s in self._sessions.items() if s.expires_at <= now]:
                del self._sessions[stale]
            self._sessions[handle] = _CapabilitySession(key_id, credentials, expires_at)
        return handle

    def _resume_session(self, handle: str, now: float) -> Any:
        with self._lock:
            session = self._sessions.get(handle)
        if session is None or now >= session.expires_at:
            return Decision.deny("session_invalid")
        for ref in session.credentials:
            state = self._ref_state(ref, now, fresh_only=True)
            if state is Verdict.REVOKED:
                with self._lock:
                    self._sessions.pop(handle, None)
                return Decision.deny(state.value)
            if state is not Verdict.OK:
                # a new presentation lets the PDP fetch the missing status
                return Decision.deny("session_invalid")
        policies: List[Policy] = []
        with self._lock:
            caps = self._capabilities.get(session.key_id, {})
            for ref in session.credentials:
                cap = caps.get(ref.credential_id)
                if cap is None:
                    return Decision.deny("session_invalid")
                policies.extend(cap.capabilities)
        return session.key_id, policies, session.credentials

    # subscriptions

    def _purge_grants(self, now: float) -> None:
        for grant in [g for g, pending in self._grants.items() if pending.expires_at <= now]:
            del self._grants[grant]

    def register_subscription(self, grant: str, subscription_id: str) -> SubscriptionRecord:
        now = self._clock()
        with self._lock:
            self._purge_grants(now)
            pending = self._grants.pop(grant, None)
            if pending is None:
                raise NotFoundError("Grant", grant)
            if subscription_id in self._subscriptions:
                raise ConflictError("Subscription", subscription_id)
            record = SubscriptionRecord(
                subscription_id=subscription_id,
                consumer=pending.consumer,
                target=pending.target,
                created_at=now,
                credentials=pending.credentials,
                consumer_id=pending.consumer_id,
            )
            self._subscriptions[subscription_id] = record
        logger.info(f"Tracking subscription {subscription_id} of {record.consumer}")
        return record

    def forget_subscription(self, subscription_id: str) -> None:
        with self._lock:
            if self._subscriptions.pop(subscription_id, None) is None:
                raise NotFoundError("Subscription", subscription_id)

    def subscriptions(self) -> List[SubscriptionRecord]:
        with self._lock:
            return list(self._subscriptions.values())

    def _still_authorized(self, record: SubscriptionRecord, now: float) -> Optional[bool]:
        """False when rights lapsed, None when it cannot be told right now."""
        if record.credentials:
            return all(
                self._ref_state(ref, now) not in (Verdict.EXPIRED, Verdict.REVOKED)
                for ref in record.credentials
            )
        if not self.settings.pap_url or record.consumer_id is None:
            return None
        try:
            policies = self.pap_client.get_policies(self.settings.pap_url, record.consumer_id)
        except (DataSpaceError, ValueError) as err:
            logger.warning(f"Sweep could not reach the PAP: {err}")
            return None
        return decide(policies, record.consumer_id, Operation.SUBSCRIBE, record.target, self.pip)

    def sweep_subscriptions(self, now: Optional[float] = None) -> List[str]:
        now = self._clock() if now is None else now
        removed = []
        for record in self.subscriptions():
            if self._still_authorized(record, now) is not False:
                continue
            if not self.broker.delete_subscription(record.subscription_id):
                # broker unreachable: retry on the next sweep
                continue
            with self._lock:
                self._subscriptions.pop(record.subscription_id, None)
            logger.info(f"Un-subscribed {record.consumer} from {record.subscription_id}")
            removed.append(record.subscription_id)
        return removed

    # background work

    def start(self) -> None:
        if self._worker is not None:
            return
        self._stop.clear()
        self._worker = threading.Thread(target=self._run, name="pdp-maintenance", daemon=True)
        self._worker.start()

    def stop(self) -> None:
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=10)
            self._worker = None

    def _run(self) -> None:
        next_refresh = next_sweep = time.monotonic()
        while not self._stop.is_set():
            current = time.monotonic()
            try:
                if current >= next_refresh:
                    self.refresh_status_lists()
                    self.sweep_subscriptions()
                    next_refresh = current + self.settings.refresh_interval
                    next_sweep = current + self.settings.sweep_interval
                elif current >= next_sweep:
                    self.sweep_subscriptions()
                    next_sweep = current + self.settings.sweep_interval
            except Exception:
                logger.exception("PDP maintenance cycle failed")
            self._stop.wait(max(0.05, min(next_refresh, next_sweep) - time.monotonic()))

    def status_report(self, now: Optional[float] = None) -> Dict[str, Any]:
        now = self._clock() if now is None else now
        with self._lock:
            lists = {
                url: {
                    "issuer": cached.status_list.issuer,
                    "issued_at": cached.status_list.issued_at,
                    "fetched_at": cached.fetched_at,
                    "age": now - cached.status_list.issued_at,
                    "fresh": self._is_fresh(cached.status_list, now),
                    "revoked": cached.status_list.bits.count(),
                }
                for url, cached in self._lists.items()
            }
            cached_consumers = len(self._capabilities)
            sessions = len(self._sessions)
            subscriptions = len(self._subscriptions)
        return {
            "status_lists": lists,
            "cached_consumers": cached_consumers,
            "sessions": sessions,
            "subscriptions": subscriptions,
            "decisions": dict(self.decisions),
            "pap_calls": self.pap_client.calls,
            "status_list_fetches": self.pap_client.status_list_fetches,
            "broker_calls": self.broker.calls,
            "revocation_visibility_latency": self.settings.refresh_interval,
        }


class DecideBody(BaseModel):
    operation: str
    targets: List[Dict[str, str]] = []
    identity_token: Optional[str] = None
    presentation: Optional[Dict[str, Any]] = None
    session: Optional[str] = None
    subscription_id: Optional[str] = None
    method: str = ""
    path: str = ""


class SubscriptionGrant(BaseModel):
    grant: str
    subscription_id: str


def create_app(pdp: PolicyDecisionPoint, background: bool = False) -> FastAPI:
    app = FastAPI(title="dsac policy decision point")
    install_error_handlers(app)
    app.state.pdp = pdp

    @app.post("/decide")
    def decide_request(body: DecideBody) -> Dict[str, Any]:
        try:
            req = AccessRequest.from_json(body.model_dump())
        except (DataSpaceError, ValueError, KeyError) as err:
            logger.info(f"Malformed access request: {err}")
            return Decision.deny("malformed_request").to_json()
        return pdp.authorize(req).to_json()

    @app.post("/nonces", status_code=201)
    def nonce() -> Dict[str, Any]:
        value, expires_at = pdp.issue_nonce()
        return {"nonce": value, "expires_at": expires_at, "audience": pdp.settings.audience}

    @app.post("/subscriptions", status_code=201)
    def register_subscription(body: SubscriptionGrant) -> Dict[str, Any]:
        return pdp.register_subscription(body.grant, body.subscription_id).to_json()

    @app.get("/subscriptions")
    def list_subscriptions() -> List[Dict[str, Any]]:
        return [record.to_json() for record in pdp.subscriptions()]

    @app.delete("/subscriptions/{subscription_id}", status_code=204)
    def forget_subscription(subscription_id: str) -> None:
        pdp.forget_subscription(subscription_id)

    @app.post("/status-lists")
    def accept_status_list(body: Dict[str, Any] = Body(...)) -> Dict[str, bool]:
        return {"accepted": pdp.accept_status_list(StatusList.from_json(body))}

    @app.get("/status")
    def status() -> Dict[str, Any]:
        return pdp.status_report()

    if background:

        @app.on_event("startup")
        def start_maintenance() -> None:
            pdp.start()

        @app.on_event("shutdown")
        def stop_maintenance() -> None:
            pdp.stop()

    return app


def load_status_list_files(pdp: PolicyDecisionPoint, paths: Iterable[Any]) -> int:
    """Preload relayed status lists, e.g. copies obtained from a third party."""
    accepted = 0
    for path in paths:
        with open(path, encoding="UTF-8") as f:
            if pdp.accept_status_list(StatusList.from_json(json.load(f))):
                accepted += 1
    return accepted

