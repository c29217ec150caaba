"""A context broker implementing the NGSI-LD subset the access-control flow uses.

The broker knows nothing about authorization; it is the protected resource
behind the PEP and the data source of the PIP.
"""

import copy
import logging
import pathlib
import threading
import time
import urllib.parse
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional

import requests
from fastapi import Body, FastAPI, Query, Response
from pydantic import BaseModel, ConfigDict, Field

from dsac.exceptions import ConflictError, NotFoundError, ValidationError
from dsac.policy import ResourceUrl, UrlKind
from dsac.utils import (
    install_error_handlers,
    install_request_log,
    read_json_snapshot,
    split_csv,
    write_json_snapshot,
)

logger = logging.getLogger(__name__)

NGSI_LD_PREFIX = "/ngsi-ld/v1"
RESERVED_KEYS = frozenset({"id", "type", "@context"})


def _check_attribute_name(name: str) -> None:
    if not name or "/" in name:
        raise ValidationError(f"Invalid attribute name {name!r}")
    if name in RESERVED_KEYS:
        raise ValidationError(f"{name!r} is reserved")


@dataclass
class Entity:
    id: str
    type: str
    attributes: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ResourceUrl.object_url(self.id)
        ResourceUrl.type_url(self.type)
        for name in self.attributes:
            _check_attribute_name(name)

    def to_json(self, attrs: Optional[Iterable[str]] = None) -> Dict[str, Any]:
        wanted = set(attrs) if attrs is not None else None
        body: Dict[str, Any] = {"id": self.id, "type": self.type}
        for name, value in self.attributes.items():
            if wanted is None or name in wanted:
                body[name] = copy.deepcopy(value)
        return body

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Entity":
        if not isinstance(data, dict):
            raise ValidationError("Entity must be a JSON object")
        try:
            entity_id, entity_type = data["id"], data["type"]
        except KeyError as err:
            raise ValidationError(f"Entity is missing {err.args[0]!r}") from err
        if not isinstance(entity_id, str) or not isinstance(entity_type, str):
            raise ValidationError("Entity id and type must be strings")
        attributes = {k: v for k, v in data.items() if k not in RESERVED_KEYS}
        return cls(entity_id, entity_type, attributes)


@dataclass
class Subscription:
    entity_filter: ResourceUrl
    notification_endpoint: str
    watched_attributes: Optional[FrozenSet[str]] = None
    id: str = field(default_factory=lambda: f"urn:ngsi-ld:Subscription:{uuid.uuid4().hex}")
    active: bool = True

    def __post_init__(self) -> None:
        if self.entity_filter.kind is UrlKind.ATTRIBUTE:
            raise ValidationError("Subscriptions filter on a type or an entity id")
        parsed = urllib.parse.urlsplit(self.notification_endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValidationError(f"Invalid notification endpoint {self.notification_endpoint!r}")

    def matches(self, entity: Entity, attr: str) -> bool:
        if not self.active:
            return False
        if self.entity_filter.kind is UrlKind.TYPE:
            selected = ResourceUrl.type_url(entity.type) == self.entity_filter
        else:
            selected = ResourceUrl.object_url(entity.id) == self.entity_filter
        return selected and (self.watched_attributes is None or attr in self.watched_attributes)

    def to_json(self) -> Dict[str, Any]:
        selector = "type" if self.entity_filter.kind is UrlKind.TYPE else "id"
        body: Dict[str, Any] = {
            "id": self.id,
            "type": "Subscription",
            "entities": [{selector: self.entity_filter.value}],
            "notification": {"endpoint": {"uri": self.notification_endpoint}},
            "isActive": self.active,
        }
        if self.watched_attributes is not None:
            body["watchedAttributes"] = sorted(self.watched_attributes)
        return body

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Subscription":
        """Parse an NGSI-LD style subscription body."""
        entity_filter = subscription_filter(data)
        try:
            endpoint = data["notification"]["endpoint"]["uri"]
        except (KeyError, TypeError) as err:
            raise ValidationError("Subscription needs notification.endpoint.uri") from err
        watched = data.get("watchedAttributes")
        if watched is not None and not isinstance(watched, list):
            raise ValidationError("watchedAttributes must be a list")
        kwargs: Dict[str, Any] = {}
        if data.get("id"):
            kwargs["id"] = str(data["id"])
        return cls(
            entity_filter=entity_filter,
            notification_endpoint=str(endpoint),
            watched_attributes=frozenset(watched) if watched is not None else None,
            **kwargs,
        )


def subscription_filter(data: Dict[str, Any]) -> ResourceUrl:
    """The single type or entity filter of a subscription body."""
    entities = data.get("entities") if isinstance(data, dict) else None
    if not isinstance(entities, list) or len(entities) != 1 or not isinstance(entities[0], dict):
        raise ValidationError("Subscription needs exactly one entities selector")
    selector = entities[0]
    if "id" in selector:
        return ResourceUrl.object_url(str(selector["id"]))
    if "type" in selector:
        return ResourceUrl.type_url(str(selector["type"]))
    raise ValidationError("Entities selector needs an id or a type")


class Notifier:
    """Best-effort, at-most-once webhook delivery on a worker pool."""

    def __init__(
        self,
        session: Optional[requests.Session] = None,
        timeout: float = 3.0,
        workers: int = 4,
    ):
        self._session = session or requests.Session()
        self._timeout = timeout
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="notify")

    def submit(self, sub: Subscription, payload: Dict[str, Any]) -> None:
        self._pool.submit(self._deliver_while_active, sub, payload)

    def _deliver_while_active(self, sub: Subscription, payload: Dict[str, Any]) -> bool:
        if not sub.active:
            logger.debug(f"Dropped notification of deleted subscription {sub.id}")
            return False
        return self.deliver(sub.notification_endpoint, payload)

    def deliver(self, endpoint: str, payload: Dict[str, Any]) -> bool:
        try:
            r = self._session.post(endpoint, json=payload, timeout=self._timeout)
        except requests.RequestException as err:
            logger.warning(f"Notification to {endpoint} failed: {err}")
            return False
        if r.status_code >= 300:
            logger.warning(f"Notification to {endpoint} rejected ({r.status_code})")
            return False
        logger.debug(f"Notified {endpoint} about {payload['entity_id']}")
        return True

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)


class Broker:
    def __init__(
        self,
        notifier: Optional[Notifier] = None,
        snapshot: Optional[pathlib.Path] = None,
        clock: Callable[[], float] = time.time,
    ):
        self._entities: Dict[str, Entity] = {}
        self._subscriptions: Dict[str, Subscription] = {}
        self._entity_locks: Dict[str, threading.Lock] = {}
        self._lock = threading.RLock()
        self._notifier = notifier or Notifier()
        self._snapshot = snapshot
        self._clock = clock
        self._load_snapshot()

    def _load_snapshot(self) -> None:
        data = read_json_snapshot(self._snapshot)
        if not data:
            return
        for item in data.get("entities", []):
            entity = Entity.from_json(item)
            self._entities[entity.id] = entity
        for item in data.get("subscriptions", []):
            sub = Subscription.from_json(item)
            self._subscriptions[sub.id] = sub
        logger.info(
            f"Loaded {len(self._entities)} entities and "
            f"{len(self._subscriptions)} subscriptions from {self._snapshot}",
        )

    def _save_snapshot(self) -> None:
        if self._snapshot is None:
            return
        with self._lock:
            data = {
                "entities": [e.to_json() for e in self._entities.values()],
                "subscriptions": [s.to_json() for s in self._subscriptions.values()],
            }
        write_json_snapshot(self._snapshot, data)

    def _entity_lock(self, entity_id: str) -> threading.Lock:
        with self._lock:
            if entity_id not in self._entities:
                raise NotFoundError("Entity", entity_id)
            return self._entity_locks.setdefault(entity_id, threading.Lock())

    def create_entity(self, entity: Entity) -> str:
        with self._lock:
            if entity.id in self._entities:
                raise ConflictError("Entity", entity.id)
            self._entities[entity.id] = copy.deepcopy(entity)
        logger.info(f"Created entity {entity.id} of type {entity.type}")
        self._save_snapshot()
        return entity.id

    def get_entity(self, entity_id: str, attrs: Optional[Iterable[str]] = None) -> Dict[str, Any]:
        with self._lock:
            entity = self._entities.get(entity_id)
            if entity is None:
                raise NotFoundError("Entity", entity_id)
            return entity.to_json(attrs)

    def query_by_type(self, entity_type: str) -> List[Dict[str, Any]]:
        with self._lock:
            return [e.to_json() for e in self._entities.values() if e.type == entity_type]

    def delete_entity(self, entity_id: str) -> None:
        with self._lock:
            if self._entities.pop(entity_id, None) is None:
                raise NotFoundError("Entity", entity_id)
            self._entity_locks.pop(entity_id, None)
        self._save_snapshot()

    def update_attribute(self, entity_id: str, attr: str, value: Any) -> None:
        _check_attribute_name(attr)
        with self._entity_lock(entity_id):
            with self._lock:
                entity = self._entities.get(entity_id)
                if entity is None:
                    raise NotFoundError("Entity", entity_id)
                # copy-on-write: readers see the old or the new entity, never a torn one
                updated = Entity(entity.id, entity.type, {**entity.attributes, attr: value})
                self._entities[entity_id] = updated
                matching = [s for s in self._subscriptions.values() if s.matches(updated, attr)]
            for sub in matching:
                self.notify(sub, updated, attr)
        self._save_snapshot()

    def create_subscription(self, subscription: Subscription) -> str:
        with self._lock:
            if subscription.id in self._subscriptions:
                raise ConflictError("Subscription", subscription.id)
            self._subscriptions[subscription.id] = subscription
        logger.info(f"Created subscription {subscription.id} on {subscription.entity_filter}")
        self._save_snapshot()
        return subscription.id

    def get_subscription(self, subscription_id: str) -> Subscription:
        with self._lock:
            sub = self._subscriptions.get(subscription_id)
        if sub is None:
            raise NotFoundError("Subscription", subscription_id)
        return sub

    def list_subscriptions(self) -> List[Subscription]:
        with self._lock:
            return list(self._subscriptions.values())

    def delete_subscription(self, subscription_id: str) -> None:
        with self._lock:
            sub = self._subscriptions.pop(subscription_id, None)
            if sub is None:
                raise NotFoundError("Subscription", subscription_id)
            # queued notifications check this flag before delivery
            sub.active = False
        logger.info(f"Deleted subscription {subscription_id}")
        self._save_snapshot()

    def notify(self, sub: Subscription, changed: Entity, attr: str) -> None:
        payload = {
            "subscription_id": sub.id,
            "entity_id": changed.id,
            "attr": attr,
            "value": changed.attributes.get(attr),
            "timestamp": self._clock(),
        }
        self._notifier.submit(sub, payload)

    def close(self) -> None:
        self._notifier.shutdown()


class AttributeValue(BaseModel):
    value: Any = None


class SubscriptionBody(BaseModel):
    model_config = ConfigDict(extra="allow", populate_by_name=True)

    id: Optional[str] = None
    type: str = "Subscription"
    entities: List[Dict[str, Any]]
    watched_attributes: Optional[List[str]] = Field(default=None, alias="watchedAttributes")
    notification: Dict[str, Any]


def create_app(broker: Broker) -> FastAPI:
    app = FastAPI(title="dsac context broker")
    install_error_handlers(app)
    install_request_log(app)
    app.state.broker = broker

    @app.post(f"{NGSI_LD_PREFIX}/entities", status_code=201)
    def create_entity(body: Dict[str, Any] = Body(...)) -> Response:
        entity_id = broker.create_entity(Entity.from_json(body))
        location = f"{NGSI_LD_PREFIX}/entities/{urllib.parse.quote(entity_id, safe='')}"
        return Response(status_code=201, headers={"Location": location})

    @app.get(f"{NGSI_LD_PREFIX}/entities")
    def query_entities(entity_type: str = Query(..., alias="type")) -> List[Dict[str, Any]]:
        return broker.query_by_type(entity_type)

    @app.patch(f"{NGSI_LD_PREFIX}/entities/{{entity_id:path}}/attrs/{{attr}}", status_code=204)
    def update_attribute(entity_id: str, attr: str, body: AttributeValue) -> None:
        broker.update_attribute(entity_id, attr, body.value)

    @app.get(f"{NGSI_LD_PREFIX}/entities/{{entity_id:path}}")
    def get_entity(entity_id: str, attrs: Optional[str] = None) -> Dict[str, Any]:
        return broker.get_entity(entity_id, split_csv(attrs) if attrs is not None else None)

    @app.delete(f"{NGSI_LD_PREFIX}/entities/{{entity_id:path}}", status_code=204)
    def delete_entity(entity_id: str) -> None:
        broker.delete_entity(entity_id)

    @app.post(f"{NGSI_LD_PREFIX}/subscriptions", status_code=201)
    def create_subscription(body: SubscriptionBody, response: Response) -> Dict[str, str]:
        sub = Subscription.from_json(body.model_dump(by_alias=True, exclude_none=True))
        subscription_id = broker.create_subscription(sub)
        response.headers["Location"] = f"{NGSI_LD_PREFIX}/subscriptions/{subscription_id}"
        return {"id": subscription_id}

    @app.get(f"{NGSI_LD_PREFIX}/subscriptions/{{subscription_id}}")
    def get_subscription(subscription_id: str) -> Dict[str, Any]:
        return broker.get_subscription(subscription_id).to_json()

    @app.delete(f"{NGSI_LD_PREFIX}/subscriptions/{{subscription_id}}", status_code=204)
    def delete_subscription(subscription_id: str) -> None:
        broker.delete_subscription(subscription_id)

    @app.on_event("shutdown")
    def shutdown() -> None:
        broker.close()

    return app
