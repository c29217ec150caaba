import dataclasses
import gzip
import random
from pathlib import Path

import pytest

from dsac.credential import (
    MAX_STATUS_LIST_BITS,
    Bitstring,
    CapabilityCredential,
    CredentialStatus,
    IdentityToken,
    KeyPair,
    Presentation,
    PresentationVerdict,
    StatusList,
    Verdict,
    compress_list,
    create_presentation,
    decompress_list,
    key_fingerprint,
    read_public_key_file,
    revoke,
    sign_identity_token,
    verify_credential,
    verify_identity_token,
    verify_presentation,
    verify_status_list,
)
from dsac.exceptions import (
    CorruptStatusListError,
    IndexOutOfRangeError,
    InvalidTokenError,
    KeyMismatchError,
    ValidationError,
)
from dsac.policy import Operation, ResourceUrl
from tests.utils import AUDIENCE, LIST_URL, PAP_URL, FakeClock, make_status_list, make_vc

LAMP = ResourceUrl.type_url("https://example.org/types/SmartLamp")
SENSOR = ResourceUrl.type_url("https://example.org/types/Sensor")
IDP_URL = "https://idp.example.org"


def test_key_files_round_trip(tmp_path: Path) -> None:
    key = KeyPair.generate()
    key.save(tmp_path / "key.pem")
    assert KeyPair.load(tmp_path / "key.pem") == key
    assert read_public_key_file(tmp_path / "key.pem") == key.public_key_b64
    assert read_public_key_file(tmp_path / "key.pem.pub") == key.public_key_b64
    assert len(key.key_id) == 32
    assert key.key_id == key_fingerprint(key.public_key_b64)


def test_load_or_create_keeps_existing_key(tmp_path: Path) -> None:
    first = KeyPair.load_or_create(tmp_path / "pap.pem")
    assert KeyPair.load_or_create(tmp_path / "pap.pem") == first


# identity tokens


def test_identity_token(idp_key: KeyPair, clock: FakeClock) -> None:
    trusted = {IDP_URL: idp_key.public_key_b64}
    token = sign_identity_token("alice", IDP_URL, idp_key, int(clock()), 600)
    assert verify_identity_token(token, trusted, clock()) is Verdict.OK
    assert IdentityToken.decode(token.encode()) == token

    assert verify_identity_token(token, {}, clock()) is Verdict.UNTRUSTED_ISSUER
    forged = dataclasses.replace(token, consumer_id="mallory")
    assert verify_identity_token(forged, trusted, clock()) is Verdict.BAD_SIGNATURE
    assert verify_identity_token(token, trusted, clock() + 600) is Verdict.EXPIRED
    assert verify_identity_token(token, trusted, clock() + 599) is Verdict.OK
    assert verify_identity_token(token, trusted, clock() - 10) is Verdict.NOT_YET_VALID
    assert verify_identity_token(token, trusted, clock() - 10, leeway=30) is Verdict.OK


def test_identity_token_signed_by_other_key(idp_key: KeyPair, clock: FakeClock) -> None:
    token = sign_identity_token("alice", IDP_URL, KeyPair.generate(), int(clock()), 600)
    trusted = {IDP_URL: idp_key.public_key_b64}
    assert verify_identity_token(token, trusted, clock()) is Verdict.BAD_SIGNATURE


@pytest.mark.parametrize("text", ["", "not base64 !", "bnVsbA", "eyJhIjogMX0"])
def test_malformed_identity_token(text: str) -> None:
    with pytest.raises(InvalidTokenError):
        IdentityToken.decode(text)


# bitstrings and status lists


def test_bitstring_is_msb_first() -> None:
    bits = Bitstring(16)
    bits.set(0)
    bits.set(9)
    assert bits.to_bytes() == bytes([0x80, 0x40])
    assert bits.get(0)
    assert not bits.get(1)
    assert bits.count() == 2
    with pytest.raises(IndexOutOfRangeError):
        bits.set(16)
    with pytest.raises(IndexOutOfRangeError):
        bits.get(-1)


def test_bitstring_copy_is_independent() -> None:
    bits = Bitstring(8)
    copy = bits.copy()
    copy.set(3)
    assert bits.count() == 0
    assert copy != bits


def test_compression_is_deterministic() -> None:
    bits = Bitstring(10_000)
    for i in range(0, 10_000, 97):
        bits.set(i)
    assert compress_list(bits) == compress_list(bits.copy())
    assert decompress_list(compress_list(bits), 10_000) == bits


def test_corrupt_list() -> None:
    with pytest.raises(CorruptStatusListError):
        decompress_list(b"definitely not gzip", 8)
    with pytest.raises(CorruptStatusListError):
        decompress_list(compress_list(Bitstring(16)), 8)
    with pytest.raises(CorruptStatusListError):
        StatusList.from_json({"id": LIST_URL})


def test_inflation_stops_at_the_declared_size() -> None:
    bomb = gzip.compress(bytes(20 * 1024 * 1024), compresslevel=9)
    assert len(bomb) < 100_000
    with pytest.raises(CorruptStatusListError):
        decompress_list(bomb, 8)
    with pytest.raises(CorruptStatusListError):
        decompress_list(compress_list(Bitstring(16))[:-8], 16)


@pytest.mark.parametrize("bit_count", [-1, MAX_STATUS_LIST_BITS + 1])
def test_status_list_bit_count_is_bounded(bit_count: int) -> None:
    wrapper = {
        "id": LIST_URL,
        "issuer": PAP_URL,
        "issued_at": 0,
        "bit_count": bit_count,
        "encoded_list": "",
        "signature": "",
    }
    with pytest.raises(CorruptStatusListError):
        StatusList.from_json(wrapper)


def test_status_list_is_decoded_on_demand(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    status = make_status_list(pap_key, clock())
    corrupt = dataclasses.replace(status, encoded_list="not a list")
    assert verify_status_list(corrupt, {PAP_URL: pap_key.public_key_b64}) is Verdict.BAD_SIGNATURE
    with pytest.raises(CorruptStatusListError):
        corrupt.is_revoked(0)

    trusted = {PAP_URL: pap_key.public_key_b64}
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock())
    assert verify_credential(vc, trusted, clock(), corrupt) is Verdict.STATUS_UNKNOWN


def test_empty_million_bit_list_is_small() -> None:
    bits = Bitstring(1_000_000)
    assert len(bits.to_bytes()) == 125_000
    assert len(compress_list(bits)) < 2_000


def test_compressed_size_grows_with_revocations() -> None:
    rng = random.Random(1)
    sizes = []
    for density in (0.0001, 0.001, 0.01, 0.1, 0.5):
        bits = Bitstring(100_000)
        for i in rng.sample(range(100_000), round(density * 100_000)):
            bits.set(i)
        sizes.append(len(compress_list(bits)))
    assert sizes == sorted(sizes)
    assert sizes[0] < sizes[-1]


def test_status_list_signature(pap_key: KeyPair, clock: FakeClock) -> None:
    status = make_status_list(pap_key, clock(), revoked=[3])
    trusted = {PAP_URL: pap_key.public_key_b64}
    assert verify_status_list(status, trusted) is Verdict.OK
    assert status.is_revoked(3)
    assert not status.is_revoked(4)
    assert StatusList.from_json(status.to_json()).bits == status.bits

    assert verify_status_list(status, {}) is Verdict.UNTRUSTED_ISSUER
    other = make_status_list(pap_key, clock(), revoked=[3, 4])
    spliced = dataclasses.replace(status, encoded_list=other.encoded_list)
    assert verify_status_list(spliced, trusted) is Verdict.BAD_SIGNATURE
    older = dataclasses.replace(status, issued_at=status.issued_at - 1000)
    assert verify_status_list(older, trusted) is Verdict.BAD_SIGNATURE


def test_revoke_resigns(pap_key: KeyPair, clock: FakeClock) -> None:
    status = make_status_list(pap_key, clock())
    revoked = revoke(status, 7, pap_key, int(clock()) + 5)
    assert revoked.is_revoked(7)
    assert not status.is_revoked(7)
    assert revoked.issued_at == status.issued_at + 5
    assert verify_status_list(revoked, {PAP_URL: pap_key.public_key_b64}) is Verdict.OK


# capability credentials


def test_credential_verdicts(pap_key: KeyPair, holder_key: KeyPair, clock: FakeClock) -> None:
    trusted = {PAP_URL: pap_key.public_key_b64}
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock(), index=5)
    fresh = make_status_list(pap_key, clock())
    assert verify_credential(vc, trusted, clock(), fresh) is Verdict.OK
    assert CapabilityCredential.from_json(vc.to_json()) == vc

    revoked = make_status_list(pap_key, clock(), revoked=[5])
    assert verify_credential(vc, trusted, clock(), revoked) is Verdict.REVOKED
    assert verify_credential(vc, trusted, clock(), None) is Verdict.STATUS_UNKNOWN
    elsewhere = make_status_list(pap_key, clock(), list_url=f"{PAP_URL}/status-list/1")
    assert verify_credential(vc, trusted, clock(), elsewhere) is Verdict.STATUS_UNKNOWN
    tiny = make_status_list(pap_key, clock(), bit_count=4)
    assert verify_credential(vc, trusted, clock(), tiny) is Verdict.STATUS_UNKNOWN

    assert verify_credential(vc, trusted, clock() + 3600, fresh) is Verdict.EXPIRED
    assert verify_credential(vc, trusted, clock() - 60, fresh) is Verdict.NOT_YET_VALID
    assert verify_credential(vc, trusted, clock() - 60, fresh, leeway=60) is Verdict.OK


def test_credential_from_another_key_is_rejected(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    rogue = make_vc(KeyPair.generate(), holder_key, [(Operation.READ, LAMP)], clock())
    trusted = {PAP_URL: pap_key.public_key_b64}
    assert verify_credential(rogue, trusted, clock(), make_status_list(pap_key, clock())) is (
        Verdict.BAD_SIGNATURE
    )


@pytest.mark.parametrize(
    ("field", "value", "verdict"),
    [
        ("issuer", "https://evil.example.org", Verdict.UNTRUSTED_ISSUER),
        ("issuer", "https://other-pap.example.org", Verdict.BAD_SIGNATURE),
        ("capabilities", ((Operation.WRITE, LAMP),), Verdict.BAD_SIGNATURE),
        ("capabilities", ((Operation.READ, SENSOR),), Verdict.BAD_SIGNATURE),
        ("expires_at", 1_800_000_000, Verdict.BAD_SIGNATURE),
        ("credential_status", CredentialStatus(LIST_URL, 6), Verdict.BAD_SIGNATURE),
        ("subject_public_key", KeyPair.generate().public_key_b64, Verdict.BAD_SIGNATURE),
    ],
)
def test_tampered_credential(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
    field: str,
    value: object,
    verdict: Verdict,
) -> None:
    other = KeyPair.generate()
    trusted = {
        PAP_URL: pap_key.public_key_b64,
        "https://other-pap.example.org": other.public_key_b64,
    }
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock(), index=5)
    tampered = dataclasses.replace(vc, **{field: value})
    status = make_status_list(pap_key, clock())
    assert verify_credential(tampered, trusted, clock(), status) is verdict


def test_credential_policies_bind_the_key(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock())
    [policy] = vc.policies()
    assert policy.consumer_id == holder_key.key_id
    assert policy.operation is Operation.READ
    assert policy.resource == LAMP


def test_sign_credential_rejects_bad_fields(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    with pytest.raises(ValidationError):
        make_vc(pap_key, holder_key, [], clock(), lifetime=0)
    with pytest.raises(ValidationError):
        make_vc(pap_key, holder_key, [], clock(), index=-1)


# presentations


def test_presentation_verdicts(pap_key: KeyPair, holder_key: KeyPair, clock: FakeClock) -> None:
    trusted = {PAP_URL: pap_key.public_key_b64}
    lists = {LIST_URL: make_status_list(pap_key, clock())}
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock())
    vp = create_presentation([vc], "n-1", AUDIENCE, holder_key, int(clock()))

    def check(p: Presentation, nonce: str = "n-1", audience: str = AUDIENCE) -> str:
        return verify_presentation(p, nonce, audience, trusted, clock(), lists).reason

    assert check(vp) == "ok"
    assert check(Presentation.from_header(vp.to_header())) == "ok"
    assert check(vp, audience=AUDIENCE + "/") == "ok"
    assert check(vp, nonce="n-2") == PresentationVerdict.WRONG_NONCE.value
    assert check(vp, audience="https://mallory.example.org") == "wrong_audience"
    assert check(dataclasses.replace(vp, nonce="n-2"), nonce="n-2") == "bad_proof"
    assert check(dataclasses.replace(vp, audience="https://x.org"), audience="https://x.org") == (
        "bad_proof"
    )
    assert verify_presentation(vp, None, AUDIENCE, trusted, clock(), lists).reason == "wrong_nonce"


def test_presentation_reports_the_failing_credential(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    trusted = {PAP_URL: pap_key.public_key_b64}
    good = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock(), index=0)
    bad = make_vc(pap_key, holder_key, [(Operation.READ, SENSOR)], clock(), index=1)
    lists = {LIST_URL: make_status_list(pap_key, clock(), revoked=[1])}
    vp = create_presentation([good, bad], "n", AUDIENCE, holder_key, int(clock()))
    result = verify_presentation(vp, "n", AUDIENCE, trusted, clock(), lists)
    assert result.verdict is PresentationVerdict.VC_FAILURE
    assert result.credential_verdict is Verdict.REVOKED
    assert result.credential_id == bad.id
    assert result.reason == "revoked"


def test_presentation_needs_holder_key(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock())
    with pytest.raises(KeyMismatchError):
        create_presentation([vc], "n", AUDIENCE, KeyPair.generate(), int(clock()))
    with pytest.raises(ValidationError):
        create_presentation([], "n", AUDIENCE, holder_key, int(clock()))


def test_presentation_by_a_thief_is_rejected(
    pap_key: KeyPair,
    holder_key: KeyPair,
    clock: FakeClock,
) -> None:
    trusted = {PAP_URL: pap_key.public_key_b64}
    lists = {LIST_URL: make_status_list(pap_key, clock())}
    vc = make_vc(pap_key, holder_key, [(Operation.READ, LAMP)], clock())
    thief = KeyPair.generate()
    vp = create_presentation([vc], "n", AUDIENCE, holder_key, int(clock()))
    stolen = dataclasses.replace(vp, signature=thief.sign(b"anything"))
    assert verify_presentation(stolen, "n", AUDIENCE, trusted, clock(), lists).reason == "bad_proof"


@pytest.mark.parametrize("value", ["{", "[]", '{"credentials": []}'])
def test_malformed_presentation_header(value: str) -> None:
    with pytest.raises(ValidationError):
        Presentation.from_header(value)
