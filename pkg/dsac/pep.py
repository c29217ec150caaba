"""Policy Enforcement Point: a reverse proxy in front of the context broker.

Every request under the NGSI-LD prefix is classified into an operation and a
set of resource URLs, decided by the PDP and forwarded only on permit.
"""

import json
import logging
import urllib.parse
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import requests
from fastapi import FastAPI, Request, Response
from starlette.concurrency import run_in_threadpool

from dsac.broker import NGSI_LD_PREFIX, subscription_filter
from dsac.credential import IdentityToken, Presentation
from dsac.exceptions import DataSpaceError, ServiceUnavailableError, UnclassifiableRequestError
from dsac.pdp import AccessRequest, Decision
from dsac.policy import Operation, ResourceUrl
from dsac.utils import install_error_handlers, split_csv, status_for

__all__ = (
    "PRESENTATION_HEADER",
    "SESSION_HEADER",
    "Classification",
    "PolicyEnforcementPoint",
    "ProxyResponse",
    "classify",
    "create_app",
)

logger = logging.getLogger(__name__)

PRESENTATION_HEADER = "X-Verifiable-Presentation"
SESSION_HEADER = "X-Capability-Session"
AUTH_HEADERS = frozenset(
    {"authorization", PRESENTATION_HEADER.lower(), SESSION_HEADER.lower()},
)
HOP_BY_HOP_HEADERS = frozenset(
    {
        "connection",
        "keep-alive",
        "proxy-authenticate",
        "proxy-authorization",
        "te",
        "trailers",
        "transfer-encoding",
        "upgrade",
        # recomputed by whichever side serializes the body
        "content-length",
        "content-encoding",
        "host",
    },
)


@dataclass(frozen=True)
class Classification:
    operation: Operation
    targets: Tuple[ResourceUrl, ...] = ()
    subscription_id: Optional[str] = None


class ProxyResponse(NamedTuple):
    status_code: int
    headers: Dict[str, str]
    content: bytes

    @classmethod
    def from_json(
        cls,
        status_code: int,
        body: Dict[str, Any],
        headers: Optional[Dict[str, str]] = None,
    ) -> "ProxyResponse":
        return cls(
            status_code,
            {"content-type": "application/json", **(headers or {})},
            json.dumps(body).encode("utf-8"),
        )

    @classmethod
    def from_error(cls, err: DataSpaceError) -> "ProxyResponse":
        return cls.from_json(status_for(err), {"error": err.kind, "detail": str(err)})


def _json_body(body: bytes) -> Dict[str, Any]:
    try:
        data = json.loads(body or b"null")
    except ValueError:
        data = None
    if not isinstance(data, dict):
        raise ValueError("request body is not a JSON object")
    return data


def classify(
    method: str,
    path: str,
    query: Mapping[str, str],
    body: bytes = b"",
) -> Classification:
    """Map an NGSI-LD request onto (operation, resource URLs).

    ``path`` is the raw request path; entity ids are percent-encoded segments.
    """
    method = method.upper()
    if not path.startswith(NGSI_LD_PREFIX + "/"):
        raise UnclassifiableRequestError(method, path, "outside the NGSI-LD prefix")
    segments = [urllib.parse.unquote(s) for s in path[len(NGSI_LD_PREFIX) + 1 :].split("/")]
    if segments and segments[-1] == "":
        segments.pop()
    try:
        return _classify(method, segments, query, body)
    except ValueError as err:
        # ValidationError included
        raise UnclassifiableRequestError(method, path, str(err)) from err


def _classify(
    method: str,
    segments: List[str],
    query: Mapping[str, str],
    body: bytes,
) -> Classification:
    route = tuple(s if i % 2 == 0 else "*" for i, s in enumerate(segments))
    if route == ("entities",) and method == "GET" and query.get("type"):
        return Classification(Operation.READ, (ResourceUrl.type_url(query["type"]),))
    if route == ("entities",) and method == "POST":
        entity_type = _json_body(body).get("type")
        if not isinstance(entity_type, str):
            raise ValueError("posted entity has no type")
        return Classification(Operation.WRITE, (ResourceUrl.type_url(entity_type),))
    if route == ("entities", "*") and method == "GET":
        obj = ResourceUrl.object_url(segments[1])
        if "attrs" not in query:
            return Classification(Operation.READ, (obj,))
        attrs = split_csv(query["attrs"])
        if not attrs:
            raise ValueError("empty attrs projection")
        return Classification(
            Operation.READ,
            tuple(ResourceUrl.attribute_url(obj.value, a) for a in attrs),
        )
    if route == ("entities", "*") and method == "DELETE":
        return Classification(Operation.WRITE, (ResourceUrl.object_url(segments[1]),))
    if route == ("entities", "*", "attrs", "*") and method == "PATCH":
        obj = ResourceUrl.object_url(segments[1])
        attr = ResourceUrl.attribute_url(obj.value, segments[3])
        return Classification(Operation.WRITE, (attr,))
    if route == ("subscriptions",) and method == "POST":
        return Classification(Operation.SUBSCRIBE, (subscription_filter(_json_body(body)),))
    if route == ("subscriptions", "*") and method in ("GET", "DELETE"):
        return Classification(Operation.SUBSCRIBE, subscription_id=segments[1])
    raise ValueError("no matching NGSI-LD operation")


class PolicyEnforcementPoint:
    def __init__(
        self,
        broker_url: str,
        pdp_url: str,
        session: Optional[requests.Session] = None,
        timeout: float = 10,
    ):
        self.broker_url = broker_url.rstrip("/")
        self.pdp_url = pdp_url.rstrip("/")
        self._session = session or requests.Session()
        self._timeout = timeout

    def _pdp(self, method: str, path: str, **kwargs: Any) -> requests.Response:
        try:
            r = self._session.request(
                method, f"{self.pdp_url}{path}", timeout=self._timeout, **kwargs,
            )
        except requests.RequestException as err:
            raise ServiceUnavailableError("PDP", str(err)) from err
        if r.status_code >= 500:
            raise ServiceUnavailableError("PDP", f"{method} {path} answered {r.status_code}")
        return r

    def challenge(self) -> ProxyResponse:
        r = self._pdp("POST", "/nonces")
        if r.status_code != 201:
            raise ServiceUnavailableError("PDP", f"nonce request answered {r.status_code}")
        body = r.json()
        return ProxyResponse.from_json(
            401,
            {"error": "proof_required", **body},
            {"www-authenticate": f'VerifiablePresentation nonce="{body["nonce"]}"'},
        )

    def decide(self, req: AccessRequest) -> Decision:
        r = self._pdp("POST", "/decide", json=req.to_json())
        if r.status_code != 200:
            raise ServiceUnavailableError("PDP", f"decision answered {r.status_code}")
        return Decision.from_json(r.json())

    def forward(
        self,
        method: str,
        path: str,
        query_string: str,
        headers: Mapping[str, str],
        body: bytes,
    ) -> ProxyResponse:
        url = f"{self.broker_url}{path}"
        if query_string:
            url = f"{url}?{query_string}"
        upstream_headers = {
            k: v
            for k, v in headers.items()
            if k.lower() not in HOP_BY_HOP_HEADERS and k.lower() not in AUTH_HEADERS
        }
        try:
            r = self._session.request(
                method,
                url,
                headers=upstream_headers,
                data=body,
                timeout=self._timeout,
                allow_redirects=False,
            )
        except requests.RequestException as err:
            raise ServiceUnavailableError("broker", str(err)) from err
        relayed = {k: v for k, v in r.headers.items() if k.lower() not in HOP_BY_HOP_HEADERS}
        return ProxyResponse(r.status_code, relayed, r.content)

    def handle(
        self,
        method: str,
        path: str,
        query_string: str,
        headers: Mapping[str, str],
        body: bytes = b"",
    ) -> ProxyResponse:
        try:
            return self._handle(method.upper(), path, query_string, headers, body)
        except DataSpaceError as err:
            logger.info(f"Rejected {method} {path}: {err}")
            return ProxyResponse.from_error(err)

    def _handle(
        self,
        method: str,
        path: str,
        query_string: str,
        headers: Mapping[str, str],
        body: bytes,
    ) -> ProxyResponse:
        query = dict(urllib.parse.parse_qsl(query_string, keep_blank_values=True))
        classified = classify(method, path, query, body)

        lowered = {k.lower(): v for k, v in headers.items()}
        token: Optional[IdentityToken] = None
        presentation: Optional[Presentation] = None
        session = lowered.get(SESSION_HEADER.lower()) or None
        if PRESENTATION_HEADER.lower() in lowered:
            presentation = Presentation.from_header(lowered[PRESENTATION_HEADER.lower()])
            session = None
        elif lowered.get("authorization", "").startswith("Bearer "):
            token = IdentityToken.decode(lowered["authorization"][len("Bearer ") :].strip())
            session = None
        elif session is None:
            return self.challenge()

        decision = self.decide(
            AccessRequest(
                operation=classified.operation,
                targets=classified.targets,
                identity_token=token,
                presentation=presentation,
                session=session,
                subscription_id=classified.subscription_id,
                method=method,
                path=path,
            ),
        )
        if not decision.permit:
            if session is not None and decision.reason == "session_invalid":
                return self.challenge()
            return ProxyResponse.from_json(
                403, {"error": "access_denied", "detail": decision.reason},
            )

        response = self.forward(method, path, query_string, headers, body)
        if decision.grant and response.status_code == 201:
            self._register_subscription(decision.grant, response)
        elif (
            classified.subscription_id
            and method == "DELETE"
            and response.status_code in (204, 404)
        ):
            self._forget_subscription(classified.subscription_id)
        if decision.session:
            response.headers[SESSION_HEADER] = decision.session
        return response

    def _register_subscription(self, grant: str, response: ProxyResponse) -> None:
        subscription_id = json.loads(response.content)["id"]
        try:
            r = self._pdp(
                "POST",
                "/subscriptions",
                json={"grant": grant, "subscription_id": subscription_id},
            )
            if r.status_code == 201:
                return
            detail = f"registration answered {r.status_code}"
        except ServiceUnavailableError as err:
            detail = str(err)
        # an untracked subscription would outlive a revocation
        logger.error(f"Could not register subscription {subscription_id}: {detail}")
        try:
            self._session.delete(
                f"{self.broker_url}{NGSI_LD_PREFIX}/subscriptions/{subscription_id}",
                timeout=self._timeout,
            )
        except requests.RequestException as err:
            logger.error(f"Could not withdraw subscription {subscription_id}: {err}")
        raise ServiceUnavailableError("PDP", detail)

    def _forget_subscription(self, subscription_id: str) -> None:
        try:
            self._pdp("DELETE", f"/subscriptions/{subscription_id}")
        except ServiceUnavailableError as err:
            logger.warning(f"PDP still tracks deleted subscription {subscription_id}: {err}")


PROXIED_METHODS = ["GET", "POST", "PATCH", "PUT", "DELETE"]


def create_app(pep: PolicyEnforcementPoint) -> FastAPI:
    app = FastAPI(
        title="dsac policy enforcement point",
        openapi_url=None,
        docs_url=None,
        redoc_url=None,
    )
    install_error_handlers(app)
    app.state.pep = pep

    @app.api_route("/{path:path}", methods=PROXIED_METHODS)
    async def proxy(request: Request) -> Response:
        raw_path = request.scope.get("raw_path") or request.url.path.encode("utf-8")
        body = await request.body()
        result = await run_in_threadpool(
            pep.handle,
            request.method,
            raw_path.decode("latin-1"),
            request.scope.get("query_string", b"").decode("latin-1"),
            dict(request.headers),
            body,
        )
        return Response(
            content=result.content,
            status_code=result.status_code,
            headers=result.headers,
        )

    return app

