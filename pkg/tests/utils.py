import os
import socket
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import uvicorn
from fastapi import FastAPI

from dsac.broker import Broker, Notifier
from dsac.broker import create_app as create_broker_app
from dsac.credential import (
    Bitstring,
    CapabilityCredential,
    CredentialStatus,
    KeyPair,
    StatusList,
    issue_status_list,
    new_credential_id,
    sign_credential,
)
from dsac.dsac import create_listener_app
from dsac.idp import IdentityProvider
from dsac.idp import create_app as create_idp_app
from dsac.pap import PolicyAdministrationPoint
from dsac.pap import create_app as create_pap_app
from dsac.pdp import PdpSettings, PolicyDecisionPoint
from dsac.pdp import create_app as create_pdp_app
from dsac.pep import PolicyEnforcementPoint
from dsac.pep import create_app as create_pep_app
from dsac.policy import Operation, ResourceUrl

OWNER_KEY = "owner-key-of-alice-the-owner"
OTHER_OWNER_KEY = "owner-key-of-bob-the-owner"
PDP_SECRET = "pdp-shared-secret"
LAMP_TYPE = "https://example.org/types/SmartLamp"
SENSOR_TYPE = "https://example.org/types/Sensor"
LAMP_1 = "urn:ngsi-ld:SmartLamp:lamp1"
LAMP_2 = "urn:ngsi-ld:SmartLamp:lamp2"
SENSOR_1 = "urn:ngsi-ld:Sensor:sensor1"


class FakeClock:
    def __init__(self, now: float = 1_700_000_000):
        self.now = now

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


def bind_socket() -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind(("127.0.0.1", 0))
    return sock


class ServiceThread:
    """Serve an app with uvicorn on a pre-bound socket in a daemon thread."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.url = f"http://127.0.0.1:{sock.getsockname()[1]}"
        self._server: Optional[uvicorn.Server] = None
        self._thread: Optional[threading.Thread] = None

    def start(self, app: FastAPI) -> "ServiceThread":
        self._server = uvicorn.Server(uvicorn.Config(app, log_level="warning", lifespan="on"))
        self._thread = threading.Thread(
            target=self._server.run,
            kwargs={"sockets": [self.sock]},
            daemon=True,
        )
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError(f"{self.url} did not start")
            time.sleep(0.01)
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=10)
        self.sock.close()


def serve(app: FastAPI) -> ServiceThread:
    return ServiceThread(bind_socket()).start(app)


class WebhookReceiver:
    def __init__(self) -> None:
        self.notifications: List[Dict[str, Any]] = []
        self._service = ServiceThread(bind_socket())
        self.url = f"{self._service.url}/notify"

    def __enter__(self) -> "WebhookReceiver":
        self._service.start(create_listener_app("/notify", self.notifications.append))
        return self

    def __exit__(self, *exc: object) -> None:
        self._service.stop()

    def wait_for(self, count: int, timeout: float = 10) -> bool:
        deadline = time.monotonic() + timeout
        while len(self.notifications) < count:
            if time.monotonic() > deadline:
                return False
            time.sleep(0.05)
        return True


@dataclass
class DataSpace:
    """Broker, IdP, PAP, PDP and PEP running on ephemeral ports."""

    broker: Broker
    idp: IdentityProvider
    pap: PolicyAdministrationPoint
    pdp: PolicyDecisionPoint
    pep: PolicyEnforcementPoint
    apps: Dict[str, FastAPI]
    services: Dict[str, ServiceThread] = field(default_factory=dict)

    def url(self, name: str) -> str:
        return self.services[name].url

    def stop(self, name: Optional[str] = None) -> None:
        for key in [name] if name else list(self.services):
            self.services.pop(key).stop()


def start_data_space(
    refresh_interval: float = 60,
    sweep_interval: float = 30,
    background: bool = False,
    pdp_url: Optional[str] = None,
) -> DataSpace:
    """Start the five services; ``pdp_url`` points the PEP at another PDP."""
    sockets = {name: bind_socket() for name in ("broker", "idp", "pap", "pdp", "pep")}
    urls = {name: f"http://127.0.0.1:{s.getsockname()[1]}" for name, s in sockets.items()}

    idp_key, pap_key = KeyPair.generate(), KeyPair.generate()
    broker = Broker(Notifier(timeout=1))
    idp = IdentityProvider(urls["idp"], idp_key, kdf_iterations=1_000)
    pap = PolicyAdministrationPoint(
        urls["pap"],
        pap_key,
        urls["pap"],
        owner_keys={OWNER_KEY: "alice-owner", OTHER_OWNER_KEY: "bob-owner"},
        pdp_secrets=[PDP_SECRET],
        trusted_idps={urls["idp"]: idp_key.public_key_b64},
        capacity=1024,
    )
    pdp = PolicyDecisionPoint(
        PdpSettings(
            audience=urls["pep"],
            broker_url=urls["broker"],
            trusted_paps={urls["pap"]: pap_key.public_key_b64},
            trusted_idps={urls["idp"]: idp_key.public_key_b64},
            pap_url=urls["pap"],
            pdp_secret=PDP_SECRET,
            refresh_interval=refresh_interval,
            sweep_interval=sweep_interval,
            pip_ttl=0,
        ),
    )
    pep = PolicyEnforcementPoint(urls["broker"], pdp_url or urls["pdp"])
    apps = {
        "broker": create_broker_app(broker),
        "idp": create_idp_app(idp),
        "pap": create_pap_app(pap),
        "pdp": create_pdp_app(pdp, background=background),
        "pep": create_pep_app(pep),
    }
    space = DataSpace(broker, idp, pap, pdp, pep, apps)
    for name, sock in sockets.items():
        space.services[name] = ServiceThread(sock).start(apps[name])
    return space


def call_dsac(
    *args: str,
    config: Optional[Path] = None,
    env: Optional[Dict[str, str]] = None,
) -> subprocess.CompletedProcess:
    if config is not None:
        args = (*args, f"--config={config}")
    return subprocess.run(
        ("dsac", *args),
        capture_output=True,
        encoding="utf-8",
        errors="ignore",
        env={**os.environ, **(env or {})},
        check=False,
    )


PAP_URL = "https://pap.example.org"
LIST_URL = f"{PAP_URL}/status-list/0"
AUDIENCE = "https://pep.example.org"


def make_vc(
    pap_key: KeyPair,
    holder_key: KeyPair,
    capabilities: Sequence[Tuple[Operation, ResourceUrl]],
    issued_at: float,
    lifetime: int = 3600,
    index: int = 0,
    list_url: str = LIST_URL,
    issuer: str = PAP_URL,
) -> CapabilityCredential:
    return sign_credential(
        CapabilityCredential(
            id=new_credential_id(),
            issuer=issuer,
            issuer_key="",
            subject_id="consumer",
            subject_public_key=holder_key.public_key_b64,
            capabilities=tuple(capabilities),
            issued_at=int(issued_at),
            expires_at=int(issued_at) + lifetime,
            credential_status=CredentialStatus(list_url, index),
        ),
        pap_key,
    )


def make_status_list(
    pap_key: KeyPair,
    issued_at: float,
    revoked: Sequence[int] = (),
    bit_count: int = 1024,
    list_url: str = LIST_URL,
    issuer: str = PAP_URL,
) -> StatusList:
    bits = Bitstring(bit_count)
    for index in revoked:
        bits.set(index)
    return issue_status_list(list_url, issuer, bits, int(issued_at), pap_key)
