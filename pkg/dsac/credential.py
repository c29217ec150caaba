"""Identity tokens, capability credentials, presentations and status lists.

All signed structures are serialized with :func:`canonical_json` and signed with
Ed25519. Verification functions never raise: they return a verdict, and callers
inject ``now`` so that results depend only on their arguments.
"""

import base64
import binascii
import dataclasses
import enum
import functools
import gzip
import hashlib
import json
import logging
import pathlib
import uuid
import zlib
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from dsac.exceptions import (
    CorruptStatusListError,
    IndexOutOfRangeError,
    InvalidTokenError,
    KeyMismatchError,
    ValidationError,
)
from dsac.policy import Operation, Policy, ResourceUrl
from dsac.utils import get_filelock

logger = logging.getLogger(__name__)

STATUS_LIST_TYPE = "StatusListCredential"
CAPABILITY_TYPE = "CapabilityCredential"
PRESENTATION_TYPE = "VerifiablePresentation"

# 2 MiB once inflated
MAX_STATUS_LIST_BITS = 1 << 24


def canonical_json(data: Any) -> bytes:
    return json.dumps(
        data,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    ).encode("utf-8")


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    padding = "=" * (-len(text) % 4)
    return base64.urlsafe_b64decode(text + padding)


def key_fingerprint(public_key: str) -> str:
    """Stable identifier of a base64url-encoded raw Ed25519 public key."""
    return hashlib.sha256(b64url_decode(public_key)).hexdigest()[:32]


def load_public_key(public_key: str) -> Ed25519PublicKey:
    try:
        return Ed25519PublicKey.from_public_bytes(b64url_decode(public_key))
    except (ValueError, binascii.Error) as err:
        raise ValidationError(f"Not an Ed25519 public key: {public_key!r}") from err


def verify_signature(public_key: str, payload: bytes, signature: str) -> bool:
    try:
        load_public_key(public_key).verify(b64url_decode(signature), payload)
    except (InvalidSignature, ValueError, binascii.Error):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes
    key_id: str

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls.from_private_key(Ed25519PrivateKey.generate())

    @classmethod
    def from_private_key(cls, private_key: Ed25519PrivateKey) -> "KeyPair":
        public_raw = private_key.public_key().public_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PublicFormat.Raw,
        )
        private_raw = private_key.private_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PrivateFormat.Raw,
            encryption_algorithm=serialization.NoEncryption(),
        )
        return cls(public_raw, private_raw, key_fingerprint(b64url_encode(public_raw)))

    @property
    def public_key_b64(self) -> str:
        return b64url_encode(self.public_key)

    def sign(self, payload: bytes) -> str:
        return b64url_encode(Ed25519PrivateKey.from_private_bytes(self.private_key).sign(payload))

    def to_pem(self) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(self.private_key).private_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PrivateFormat.PKCS8,
            encryption_algorithm=serialization.NoEncryption(),
        )

    def public_pem(self) -> bytes:
        return load_public_key(self.public_key_b64).public_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PublicFormat.SubjectPublicKeyInfo,
        )

    @classmethod
    def from_pem(cls, data: bytes) -> "KeyPair":
        private_key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(private_key, Ed25519PrivateKey):
            raise ValidationError("PEM file does not hold an Ed25519 private key")
        return cls.from_private_key(private_key)

    def save(self, path: pathlib.Path) -> None:
        """Write the private key and a ``.pub`` public key next to it."""
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_pem())
        path.chmod(0o600)
        path.with_name(path.name + ".pub").write_bytes(self.public_pem())

    @classmethod
    def load(cls, path: pathlib.Path) -> "KeyPair":
        return cls.from_pem(path.read_bytes())

    @classmethod
    def load_or_create(cls, path: pathlib.Path) -> "KeyPair":
        with get_filelock(path):
            if path.exists():
                return cls.load(path)
            logger.info(f"Generating signing key {path}")
            key = cls.generate()
            key.save(path)
            return key


def read_public_key_file(path: pathlib.Path) -> str:
    """Return the base64url raw public key from a PEM public or private key file."""
    data = path.read_bytes()
    if b"PRIVATE KEY" in data:
        return KeyPair.from_pem(data).public_key_b64
    public_key = serialization.load_pem_public_key(data)
    if not isinstance(public_key, Ed25519PublicKey):
        raise ValidationError(f"{path} does not hold an Ed25519 public key")
    return b64url_encode(
        public_key.public_bytes(
            encoding=serialization.Encoding.Raw,
            format=serialization.PublicFormat.Raw,
        ),
    )


class Verdict(str, enum.Enum):
    OK = "ok"
    UNTRUSTED_ISSUER = "untrusted_issuer"
    BAD_SIGNATURE = "bad_signature"
    EXPIRED = "expired"
    NOT_YET_VALID = "not_yet_valid"
    REVOKED = "revoked"
    STATUS_UNKNOWN = "status_unknown"


def _check_validity(issued_at: int, expires_at: int, now: float, leeway: float) -> Verdict:
    if now + leeway < issued_at:
        return Verdict.NOT_YET_VALID
    if now >= expires_at + leeway:
        return Verdict.EXPIRED
    return Verdict.OK


# Identity tokens


@dataclass(frozen=True)
class IdentityToken:
    consumer_id: str
    issuer: str
    issued_at: int
    expires_at: int
    signature: str = ""

    def payload(self) -> Dict[str, Any]:
        return {
            "consumer_id": self.consumer_id,
            "issuer": self.issuer,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }

    def to_json(self) -> Dict[str, Any]:
        return {**self.payload(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "IdentityToken":
        try:
            return cls(
                consumer_id=str(data["consumer_id"]),
                issuer=str(data["issuer"]),
                issued_at=int(data["issued_at"]),
                expires_at=int(data["expires_at"]),
                signature=str(data["signature"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise InvalidTokenError("malformed") from err

    def encode(self) -> str:
        """Compact form carried in an ``Authorization: Bearer`` header."""
        return b64url_encode(canonical_json(self.to_json()))

    @classmethod
    def decode(cls, text: str) -> "IdentityToken":
        try:
            data = json.loads(b64url_decode(text.strip()))
        except (ValueError, binascii.Error) as err:
            raise InvalidTokenError("malformed") from err
        if not isinstance(data, dict):
            raise InvalidTokenError("malformed")
        return cls.from_json(data)


def sign_identity_token(
    consumer_id: str,
    issuer: str,
    idp_key: KeyPair,
    issued_at: int,
    lifetime: int,
) -> IdentityToken:
    if lifetime <= 0:
        raise ValidationError("Token lifetime must be positive")
    token = IdentityToken(consumer_id, issuer, issued_at, issued_at + lifetime)
    return dataclasses.replace(token, signature=idp_key.sign(canonical_json(token.payload())))


def verify_identity_token(
    token: IdentityToken,
    trusted_idps: Mapping[str, str],
    now: float,
    leeway: float = 0,
) -> Verdict:
    public_key = trusted_idps.get(token.issuer)
    if public_key is None:
        return Verdict.UNTRUSTED_ISSUER
    if not verify_signature(public_key, canonical_json(token.payload()), token.signature):
        return Verdict.BAD_SIGNATURE
    if token.expires_at <= token.issued_at:
        return Verdict.EXPIRED
    return _check_validity(token.issued_at, token.expires_at, now, leeway)


# Status lists


class Bitstring:
    """Fixed-length bitstring, index 0 being the most significant bit of byte 0."""

    __slots__ = ("_bytes", "bit_count")

    def __init__(self, bit_count: int, data: Optional[Union[bytes, bytearray]] = None):
        if bit_count < 0:
            raise ValidationError("Bit count must be non-negative")
        size = (bit_count + 7) // 8
        if data is None:
            data = bytes(size)
        if len(data) != size:
            raise CorruptStatusListError(f"expected {size} bytes, got {len(data)}")
        self.bit_count = bit_count
        self._bytes = bytearray(data)

    def __len__(self) -> int:
        return self.bit_count

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bitstring):
            return NotImplemented
        return self.bit_count == other.bit_count and self._bytes == other._bytes

    def __repr__(self) -> str:
        return f"Bitstring(bit_count={self.bit_count}, set={self.count()})"

    def _check(self, index: int) -> None:
        if not 0 <= index < self.bit_count:
            raise IndexOutOfRangeError(index, self.bit_count)

    def get(self, index: int) -> bool:
        self._check(index)
        return bool(self._bytes[index >> 3] & (0x80 >> (index & 7)))

    def set(self, index: int) -> None:
        self._check(index)
        self._bytes[index >> 3] |= 0x80 >> (index & 7)

    def count(self) -> int:
        return sum(bin(b).count("1") for b in self._bytes)

    def copy(self) -> "Bitstring":
        return Bitstring(self.bit_count, self._bytes)

    def to_bytes(self) -> bytes:
        return bytes(self._bytes)


def compress_list(bits: Bitstring) -> bytes:
    # mtime=0 keeps the gzip header, hence signatures over it, deterministic
    return gzip.compress(bits.to_bytes(), compresslevel=9, mtime=0)


def decompress_list(data: bytes, bit_count: int) -> Bitstring:
    """Inflate at most one byte past the expected size, whatever the payload claims."""
    size = (bit_count + 7) // 8
    inflater = zlib.decompressobj(16 + zlib.MAX_WBITS)
    try:
        raw = inflater.decompress(data, size + 1)
    except zlib.error as err:
        raise CorruptStatusListError(str(err)) from err
    if len(raw) > size or not inflater.eof:
        raise CorruptStatusListError(f"list does not inflate to {size} bytes")
    return Bitstring(bit_count, raw)


@dataclass(frozen=True)
class StatusList:
    """A revocation bitstring wrapped in a credential signed by its PAP.

    The bitstring is only decoded on first access to ``bits``.
    """

    id: str
    issuer: str
    issued_at: int
    bit_count: int
    encoded_list: str
    signature: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.bit_count <= MAX_STATUS_LIST_BITS:
            raise CorruptStatusListError(f"bit count {self.bit_count} out of range")

    @functools.cached_property
    def bits(self) -> Bitstring:
        try:
            data = b64url_decode(self.encoded_list)
        except (ValueError, binascii.Error) as err:
            raise CorruptStatusListError(str(err)) from err
        return decompress_list(data, self.bit_count)

    def payload(self) -> Dict[str, Any]:
        return {
            "type": STATUS_LIST_TYPE,
            "id": self.id,
            "issuer": self.issuer,
            "issued_at": self.issued_at,
            "bit_count": self.bit_count,
            "encoded_list": self.encoded_list,
        }

    def to_json(self) -> Dict[str, Any]:
        return {**self.payload(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "StatusList":
        try:
            if data.get("type", STATUS_LIST_TYPE) != STATUS_LIST_TYPE:
                raise CorruptStatusListError(f"unexpected type {data.get('type')!r}")
            return cls(
                id=str(data["id"]),
                issuer=str(data["issuer"]),
                issued_at=int(data["issued_at"]),
                bit_count=int(data["bit_count"]),
                encoded_list=str(data["encoded_list"]),
                signature=str(data["signature"]),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as err:
            raise CorruptStatusListError(f"malformed wrapper: {err}") from err

    def is_revoked(self, index: int) -> bool:
        return self.bits.get(index)


def issue_status_list(
    list_url: str,
    issuer: str,
    bits: Bitstring,
    issued_at: int,
    pap_key: KeyPair,
) -> StatusList:
    unsigned = StatusList(
        id=list_url,
        issuer=issuer,
        issued_at=issued_at,
        bit_count=bits.bit_count,
        encoded_list=b64url_encode(compress_list(bits)),
    )
    return dataclasses.replace(unsigned, signature=pap_key.sign(canonical_json(unsigned.payload())))


def verify_status_list(status_list: StatusList, trusted_paps: Mapping[str, str]) -> Verdict:
    public_key = trusted_paps.get(status_list.issuer)
    if public_key is None:
        return Verdict.UNTRUSTED_ISSUER
    payload = canonical_json(status_list.payload())
    if not verify_signature(public_key, payload, status_list.signature):
        return Verdict.BAD_SIGNATURE
    return Verdict.OK


def revoke(status_list: StatusList, index: int, pap_key: KeyPair, now: int) -> StatusList:
    bits = status_list.bits.copy()
    bits.set(index)
    return issue_status_list(status_list.id, status_list.issuer, bits, now, pap_key)


# Capability credentials


@dataclass(frozen=True)
class CredentialStatus:
    status_list_url: str
    status_index: int

    def to_json(self) -> Dict[str, Any]:
        return {"status_list_url": self.status_list_url, "status_index": self.status_index}


@dataclass(frozen=True)
class CapabilityCredential:
    id: str
    issuer: str
    issuer_key: str
    subject_id: str
    subject_public_key: str
    capabilities: Tuple[Tuple[Operation, ResourceUrl], ...]
    issued_at: int
    expires_at: int
    credential_status: CredentialStatus
    signature: str = ""

    @property
    def subject_key_id(self) -> str:
        return key_fingerprint(self.subject_public_key)

    def policies(self) -> List[Policy]:
        """Capabilities as policies bound to the subject key fingerprint."""
        consumer = self.subject_key_id
        return [Policy(consumer, op, resource) for op, resource in self.capabilities]

    def payload(self) -> Dict[str, Any]:
        return {
            "type": CAPABILITY_TYPE,
            "id": self.id,
            "issuer": self.issuer,
            "issuer_key": self.issuer_key,
            "subject_id": self.subject_id,
            "subject_public_key": self.subject_public_key,
            "capabilities": [
                {"operation": op.value, "resource": resource.to_json()}
                for op, resource in self.capabilities
            ],
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
            "credentialStatus": self.credential_status.to_json(),
        }

    def to_json(self) -> Dict[str, Any]:
        return {**self.payload(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "CapabilityCredential":
        try:
            if data.get("type", CAPABILITY_TYPE) != CAPABILITY_TYPE:
                raise ValidationError(f"Unexpected credential type {data.get('type')!r}")
            status = data["credentialStatus"]
            return cls(
                id=str(data["id"]),
                issuer=str(data["issuer"]),
                issuer_key=str(data["issuer_key"]),
                subject_id=str(data["subject_id"]),
                subject_public_key=str(data["subject_public_key"]),
                capabilities=tuple(
                    (Operation(c["operation"]), ResourceUrl.from_json(c["resource"]))
                    for c in data["capabilities"]
                ),
                issued_at=int(data["issued_at"]),
                expires_at=int(data["expires_at"]),
                credential_status=CredentialStatus(
                    str(status["status_list_url"]),
                    int(status["status_index"]),
                ),
                signature=str(data["signature"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, ValidationError):
                raise
            raise ValidationError(f"Malformed credential: {err}") from err


def sign_credential(credential: CapabilityCredential, pap_key: KeyPair) -> CapabilityCredential:
    if credential.expires_at <= credential.issued_at:
        raise ValidationError("Credential must expire after it is issued")
    if credential.credential_status.status_index < 0:
        raise ValidationError("Status index must be non-negative")
    load_public_key(credential.subject_public_key)
    unsigned = dataclasses.replace(credential, issuer_key=pap_key.public_key_b64, signature="")
    return dataclasses.replace(unsigned, signature=pap_key.sign(canonical_json(unsigned.payload())))


def new_credential_id() -> str:
    return f"urn:uuid:{uuid.uuid4()}"


def verify_credential(
    vc: CapabilityCredential,
    trusted_paps: Mapping[str, str],
    now: float,
    status_list: Optional[StatusList] = None,
    leeway: float = 0,
) -> Verdict:
    public_key = trusted_paps.get(vc.issuer)
    if public_key is None:
        return Verdict.UNTRUSTED_ISSUER
    if not verify_signature(public_key, canonical_json(vc.payload()), vc.signature):
        return Verdict.BAD_SIGNATURE
    validity = _check_validity(vc.issued_at, vc.expires_at, now, leeway)
    if validity is not Verdict.OK:
        return validity
    if (
        status_list is None
        or status_list.id != vc.credential_status.status_list_url
        or status_list.issuer != vc.issuer
        or vc.credential_status.status_index >= status_list.bit_count
    ):
        return Verdict.STATUS_UNKNOWN
    try:
        revoked = status_list.is_revoked(vc.credential_status.status_index)
    except CorruptStatusListError:
        return Verdict.STATUS_UNKNOWN
    return Verdict.REVOKED if revoked else Verdict.OK


# Presentations


class PresentationVerdict(str, enum.Enum):
    OK = "ok"
    BAD_PROOF = "bad_proof"
    WRONG_NONCE = "wrong_nonce"
    WRONG_AUDIENCE = "wrong_audience"
    VC_FAILURE = "vc_failure"


@dataclass(frozen=True)
class PresentationResult:
    verdict: PresentationVerdict
    credential_verdict: Optional[Verdict] = None
    credential_id: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.verdict is PresentationVerdict.OK

    @property
    def reason(self) -> str:
        if self.verdict is PresentationVerdict.VC_FAILURE and self.credential_verdict:
            return self.credential_verdict.value
        return self.verdict.value


@dataclass(frozen=True)
class Presentation:
    credentials: Tuple[CapabilityCredential, ...]
    nonce: str
    audience: str
    created_at: int
    signature: str = ""

    @property
    def subject_public_key(self) -> Optional[str]:
        keys = {vc.subject_public_key for vc in self.credentials}
        return keys.pop() if len(keys) == 1 else None

    def payload(self) -> Dict[str, Any]:
        return {
            "type": PRESENTATION_TYPE,
            "credentials": [vc.to_json() for vc in self.credentials],
            "nonce": self.nonce,
            "audience": self.audience,
            "created_at": self.created_at,
        }

    def to_json(self) -> Dict[str, Any]:
        return {**self.payload(), "signature": self.signature}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Presentation":
        try:
            return cls(
                credentials=tuple(
                    CapabilityCredential.from_json(vc) for vc in data["credentials"]
                ),
                nonce=str(data["nonce"]),
                audience=str(data["audience"]),
                created_at=int(data["created_at"]),
                signature=str(data["signature"]),
            )
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, ValidationError):
                raise
            raise ValidationError(f"Malformed presentation: {err}") from err

    def to_header(self) -> str:
        """Compact ASCII JSON carried in the presentation header."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_header(cls, value: str) -> "Presentation":
        try:
            data = json.loads(value)
        except ValueError as err:
            raise ValidationError("Presentation header is not JSON") from err
        if not isinstance(data, dict):
            raise ValidationError("Presentation header is not a JSON object")
        return cls.from_json(data)


def create_presentation(
    vcs: Iterable[CapabilityCredential],
    nonce: str,
    audience: str,
    subject_key: KeyPair,
    created_at: int,
) -> Presentation:
    credentials = tuple(vcs)
    if not credentials:
        raise ValidationError("A presentation needs at least one credential")
    if any(vc.subject_public_key != subject_key.public_key_b64 for vc in credentials):
        raise KeyMismatchError
    unsigned = Presentation(credentials, nonce, audience, created_at)
    return dataclasses.replace(
        unsigned,
        signature=subject_key.sign(canonical_json(unsigned.payload())),
    )


def _same_url(a: str, b: str) -> bool:
    return a.rstrip("/") == b.rstrip("/")


def presentation_signed(vp: Presentation) -> bool:
    """Whether the holder of every presented credential signed ``vp``."""
    subject_key = vp.subject_public_key
    if subject_key is None:
        return False
    return verify_signature(subject_key, canonical_json(vp.payload()), vp.signature)


def verify_presentation(
    vp: Presentation,
    expected_nonce: Optional[str],
    expected_audience: str,
    trusted_paps: Mapping[str, str],
    now: float,
    status_lists: Mapping[str, StatusList],
    leeway: float = 0,
) -> PresentationResult:
    """Verify a presentation offline; ``status_lists`` is keyed by list URL."""
    if not presentation_signed(vp):
        return PresentationResult(PresentationVerdict.BAD_PROOF)
    if expected_nonce is None or vp.nonce != expected_nonce:
        return PresentationResult(PresentationVerdict.WRONG_NONCE)
    if not _same_url(vp.audience, expected_audience):
        return PresentationResult(PresentationVerdict.WRONG_AUDIENCE)
    for vc in vp.credentials:
        verdict = verify_credential(
            vc,
            trusted_paps,
            now,
            status_lists.get(vc.credential_status.status_list_url),
            leeway,
        )
        if verdict is not Verdict.OK:
            return PresentationResult(PresentationVerdict.VC_FAILURE, verdict, vc.id)
    return PresentationResult(PresentationVerdict.OK)
