"""Resource URL taxonomy, the coverage relation and the access-control decision.

Everything here is pure: no I/O, no clocks, no shared state.
"""

import enum
import urllib.parse
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Callable, Dict, Iterable, List, Optional

from dsac.exceptions import ValidationError

__all__ = (
    "Operation",
    "Policy",
    "ResourceUrl",
    "TypeOracle",
    "UrlKind",
    "covers",
    "decide",
    "policies_from_json",
    "policies_to_json",
)


class Operation(str, enum.Enum):
    READ = "Read"
    WRITE = "Write"
    SUBSCRIBE = "Subscribe"

    @classmethod
    def parse(cls, value: str) -> "Operation":
        for op in cls:
            if value.lower() == op.value.lower():
                return op
        raise ValidationError(f"Unknown operation {value!r}")


class UrlKind(str, enum.Enum):
    TYPE = "type"
    OBJECT = "object"
    ATTRIBUTE = "attribute"


def _normalize(url: str) -> str:
    # a single trailing slash is the only normalization applied
    return url[:-1] if url.endswith("/") else url


def _check_absolute(url: str) -> None:
    parsed = urllib.parse.urlsplit(url)
    if not parsed.scheme or not (parsed.netloc or parsed.path):
        raise ValidationError(f"Not an absolute URL: {url!r}")
    if any(c.isspace() for c in url):
        raise ValidationError(f"URL contains whitespace: {url!r}")


@dataclass(frozen=True)
class ResourceUrl:
    """A URL whose kind is carried explicitly, never guessed from its shape."""

    kind: UrlKind
    value: str

    def __post_init__(self) -> None:
        if not isinstance(self.value, str) or not self.value:
            raise ValidationError("Resource URL must be a non-empty string")
        object.__setattr__(self, "kind", UrlKind(self.kind))
        object.__setattr__(self, "value", _normalize(self.value))
        _check_absolute(self.value)
        if self.kind is UrlKind.ATTRIBUTE:
            parent, sep, attr = self.value.rpartition("/")
            if not sep or not attr:
                raise ValidationError(f"Attribute URL without attribute name: {self.value!r}")
            _check_absolute(parent)

    @classmethod
    def type_url(cls, value: str) -> "ResourceUrl":
        return cls(UrlKind.TYPE, value)

    @classmethod
    def object_url(cls, value: str) -> "ResourceUrl":
        return cls(UrlKind.OBJECT, value)

    @classmethod
    def attribute_url(cls, object_url: str, attribute: str) -> "ResourceUrl":
        if not attribute or "/" in attribute:
            raise ValidationError(f"Invalid attribute name {attribute!r}")
        return cls(UrlKind.ATTRIBUTE, f"{_normalize(object_url)}/{attribute}")

    @property
    def parent(self) -> "ResourceUrl":
        """The object an attribute URL belongs to."""
        if self.kind is not UrlKind.ATTRIBUTE:
            raise ValueError(f"{self.kind.value} URL has no parent object")
        return ResourceUrl(UrlKind.OBJECT, self.value.rpartition("/")[0])

    @property
    def attribute(self) -> str:
        if self.kind is not UrlKind.ATTRIBUTE:
            raise ValueError(f"{self.kind.value} URL has no attribute name")
        return self.value.rpartition("/")[2]

    def to_json(self) -> Dict[str, str]:
        return {"kind": self.kind.value, "url": self.value}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "ResourceUrl":
        try:
            return cls(UrlKind(data["kind"]), data["url"])
        except (KeyError, TypeError, ValueError) as err:
            if isinstance(err, ValidationError):
                raise
            raise ValidationError(f"Malformed resource {data!r}") from err

    @classmethod
    def parse(cls, text: str) -> "ResourceUrl":
        """Parse the ``kind:url`` shorthand used on the command line."""
        kind, sep, url = text.partition(":")
        aliases = {
            "type": UrlKind.TYPE,
            "object": UrlKind.OBJECT,
            "entity": UrlKind.OBJECT,
            "attribute": UrlKind.ATTRIBUTE,
            "attr": UrlKind.ATTRIBUTE,
        }
        if not sep or kind.lower() not in aliases:
            raise ValidationError(f"Expected type:<url>, object:<url> or attr:<url>, got {text!r}")
        return cls(aliases[kind.lower()], url)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.value}"


@dataclass(frozen=True)
class Policy:
    consumer_id: str
    operation: Operation
    resource: ResourceUrl

    def __post_init__(self) -> None:
        if not self.consumer_id:
            raise ValidationError("Policy consumer_id must not be empty")
        object.__setattr__(self, "operation", Operation(self.operation))
        if not isinstance(self.resource, ResourceUrl):
            raise ValidationError("Policy resource must be a ResourceUrl")

    def to_json(self) -> Dict[str, Any]:
        return {
            "consumer_id": self.consumer_id,
            "operation": self.operation.value,
            "resource": self.resource.to_json(),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Policy":
        try:
            return cls(
                consumer_id=data["consumer_id"],
                operation=Operation(data["operation"]),
                resource=ResourceUrl.from_json(data["resource"]),
            )
        except (KeyError, TypeError) as err:
            raise ValidationError(f"Malformed policy {data!r}") from err
        except ValueError as err:
            if isinstance(err, ValidationError):
                raise
            raise ValidationError(f"Malformed policy {data!r}: {err}") from err


def policies_to_json(policies: Iterable[Policy]) -> List[Dict[str, Any]]:
    return [p.to_json() for p in policies]


def policies_from_json(data: Iterable[Dict[str, Any]]) -> List[Policy]:
    return [Policy.from_json(item) for item in data]


# Given an object URL, return its type URL, or None when the type is unknown.
TypeOracle = Callable[[ResourceUrl], Optional[ResourceUrl]]


def _type_of(obj: ResourceUrl, oracle: TypeOracle) -> Optional[ResourceUrl]:
    try:
        found = oracle(obj)
    except Exception:
        return None
    if found is None or found.kind is not UrlKind.TYPE:
        return None
    return found


def covers(a: ResourceUrl, b: ResourceUrl, oracle: TypeOracle) -> bool:
    """Whether a grant on ``a`` extends to ``b``."""
    if a == b:
        return True
    if a.kind is UrlKind.TYPE:
        if b.kind is UrlKind.OBJECT:
            return _type_of(b, oracle) == a
        if b.kind is UrlKind.ATTRIBUTE:
            return _type_of(b.parent, oracle) == a
        return False
    if a.kind is UrlKind.OBJECT and b.kind is UrlKind.ATTRIBUTE:
        return b.parent == a
    return False


def decide(
    policies: Iterable[Policy],
    consumer_id: str,
    operation: Operation,
    resource: ResourceUrl,
    oracle: TypeOracle,
) -> bool:
    # one oracle answer per object within a decision
    memo_oracle = lru_cache(maxsize=None)(oracle)
    return any(
        p.consumer_id == consumer_id
        and p.operation == operation
        and covers(p.resource, resource, memo_oracle)
        for p in policies
    )
