import random
import time
from typing import Dict, List, Optional

import pytest

from dsac.exceptions import ValidationError
from dsac.policy import (
    Operation,
    Policy,
    ResourceUrl,
    UrlKind,
    covers,
    decide,
    policies_from_json,
    policies_to_json,
)

LAMP = ResourceUrl.type_url("https://example.org/types/SmartLamp")
SENSOR = ResourceUrl.type_url("https://example.org/types/Sensor")
O1 = ResourceUrl.object_url("urn:ngsi-ld:SmartLamp:O1")
O1_STATUS = ResourceUrl.attribute_url(O1.value, "status")


def oracle_of(types: Dict[str, ResourceUrl]):  # noqa: ANN201
    return lambda obj: types.get(obj.value)


def test_read_status_of_lamp_with_type_grant() -> None:
    policies = [Policy("C", Operation.READ, LAMP)]
    assert decide(policies, "C", Operation.READ, O1_STATUS, oracle_of({O1.value: LAMP}))
    assert not decide(policies, "C", Operation.READ, O1_STATUS, oracle_of({O1.value: SENSOR}))


def test_covers_hierarchy() -> None:
    oracle = oracle_of({O1.value: LAMP})
    assert covers(LAMP, LAMP, oracle)
    assert covers(LAMP, O1, oracle)
    assert covers(LAMP, O1_STATUS, oracle)
    assert covers(O1, O1_STATUS, oracle)
    assert not covers(O1, LAMP, oracle)
    assert not covers(O1_STATUS, O1, oracle)
    assert not covers(LAMP, SENSOR, oracle)
    other_attr = ResourceUrl.attribute_url(O1.value, "brightness")
    assert not covers(O1_STATUS, other_attr, oracle)


def test_unknown_type_denies() -> None:
    policies = [Policy("C", Operation.READ, LAMP)]
    assert not decide(policies, "C", Operation.READ, O1, lambda obj: None)


def test_oracle_failure_denies() -> None:
    def broken(obj: ResourceUrl) -> Optional[ResourceUrl]:
        raise ConnectionError("broker down")

    policies = [Policy("C", Operation.READ, LAMP)]
    assert not decide(policies, "C", Operation.READ, O1_STATUS, broken)
    # an object grant needs no oracle
    assert decide([Policy("C", Operation.READ, O1)], "C", Operation.READ, O1_STATUS, broken)


def test_oracle_answering_a_non_type_denies() -> None:
    policies = [Policy("C", Operation.READ, LAMP)]
    assert not decide(policies, "C", Operation.READ, O1, lambda obj: O1)
    assert not covers(LAMP, O1, lambda obj: O1)


def test_decide_matches_consumer_and_operation() -> None:
    policies = [Policy("C", Operation.READ, O1)]
    oracle = oracle_of({})
    assert decide(policies, "C", Operation.READ, O1_STATUS, oracle)
    assert not decide(policies, "D", Operation.READ, O1_STATUS, oracle)
    assert not decide(policies, "C", Operation.WRITE, O1_STATUS, oracle)
    assert not decide([], "C", Operation.READ, O1, oracle)


def test_oracle_called_once_per_object() -> None:
    calls: List[str] = []

    def counting(obj: ResourceUrl) -> Optional[ResourceUrl]:
        calls.append(obj.value)
        return SENSOR

    policies = [Policy("C", Operation.READ, LAMP), Policy("C", Operation.READ, LAMP)]
    assert not decide(policies, "C", Operation.READ, O1_STATUS, counting)
    assert calls == [O1.value]


def test_trailing_slash_is_normalized() -> None:
    assert ResourceUrl.type_url("https://example.org/T/") == ResourceUrl.type_url(
        "https://example.org/T",
    )


@pytest.mark.parametrize(
    "value",
    ["", "SmartLamp", "https://exa mple.org/x", "/relative/path"],
)
def test_invalid_urls(value: str) -> None:
    with pytest.raises(ValidationError):
        ResourceUrl.object_url(value)


def test_attribute_url_parts() -> None:
    assert O1_STATUS.kind is UrlKind.ATTRIBUTE
    assert O1_STATUS.parent == O1
    assert O1_STATUS.attribute == "status"
    with pytest.raises(ValidationError):
        ResourceUrl.attribute_url(O1.value, "a/b")
    with pytest.raises(ValueError):
        _ = O1.parent


def test_parse_shorthand() -> None:
    assert ResourceUrl.parse("type:https://example.org/types/SmartLamp") == LAMP
    assert ResourceUrl.parse(f"entity:{O1.value}") == O1
    assert ResourceUrl.parse(f"attr:{O1.value}/status") == O1_STATUS
    assert str(O1_STATUS) == f"attribute:{O1.value}/status"
    with pytest.raises(ValidationError):
        ResourceUrl.parse("https://example.org/no-kind")


def test_operation_parse() -> None:
    assert Operation.parse("read") is Operation.READ
    assert Operation.parse("SUBSCRIBE") is Operation.SUBSCRIBE
    with pytest.raises(ValidationError):
        Operation.parse("Delete")


def test_policy_json() -> None:
    policies = [Policy("C", Operation.WRITE, O1_STATUS), Policy("D", Operation.READ, LAMP)]
    assert policies_from_json(policies_to_json(policies)) == policies
    with pytest.raises(ValidationError):
        Policy.from_json({"consumer_id": "C", "operation": "Read"})
    with pytest.raises(ValidationError):
        Policy.from_json({"consumer_id": "C", "operation": "Fly", "resource": LAMP.to_json()})


# randomized comparison against a direct case analysis

CONSUMERS = ["c0", "c1", "c2"]
TYPES = [ResourceUrl.type_url(f"https://example.org/types/T{i}") for i in range(3)]


def brute_force(
    policies: List[Policy],
    consumer: str,
    op: Operation,
    target: ResourceUrl,
    types: Dict[str, ResourceUrl],
) -> bool:
    for p in policies:
        if p.consumer_id != consumer or p.operation is not op:
            continue
        a = p.resource
        if a.kind is target.kind and a.value == target.value:
            return True
        if a.kind is UrlKind.TYPE and target.kind is UrlKind.OBJECT:
            if types.get(target.value) == a:
                return True
        if a.kind is UrlKind.TYPE and target.kind is UrlKind.ATTRIBUTE:
            if types.get(target.value.rsplit("/", 1)[0]) == a:
                return True
        if a.kind is UrlKind.OBJECT and target.kind is UrlKind.ATTRIBUTE:
            if target.value.rsplit("/", 1)[0] == a.value:
                return True
    return False


def random_instance(rng: random.Random):  # noqa: ANN201
    objects = [f"urn:ngsi-ld:Thing:o{i}" for i in range(rng.randint(1, 6))]
    types = {o: rng.choice(TYPES) for o in objects if rng.random() < 0.9}
    resources = list(TYPES)
    for o in objects:
        resources.append(ResourceUrl.object_url(o))
        resources.extend(ResourceUrl.attribute_url(o, a) for a in ("status", "power"))
    resources = resources[:20]
    policies = [
        Policy(rng.choice(CONSUMERS), rng.choice(list(Operation)), rng.choice(resources))
        for _ in range(rng.randint(0, 8))
    ]
    return policies, resources, types


def test_decide_agrees_with_brute_force() -> None:
    rng = random.Random(42)
    started = time.monotonic()
    for _ in range(10_000):
        policies, resources, types = random_instance(rng)
        consumer = rng.choice(CONSUMERS)
        op = rng.choice(list(Operation))
        target = rng.choice(resources)
        expected = brute_force(policies, consumer, op, target, types)
        assert decide(policies, consumer, op, target, oracle_of(types)) == expected
    assert time.monotonic() - started < 10


def test_type_grant_reaches_every_object_and_attribute() -> None:
    rng = random.Random(7)
    for _ in range(500):
        policies, resources, types = random_instance(rng)
        oracle = oracle_of(types)
        for p in policies:
            if p.resource.kind is not UrlKind.TYPE:
                continue
            for r in resources:
                owner = r.value if r.kind is UrlKind.OBJECT else None
                if r.kind is UrlKind.ATTRIBUTE:
                    owner = r.parent.value
                if owner is not None and types.get(owner) == p.resource:
                    assert decide(policies, p.consumer_id, p.operation, r, oracle)
