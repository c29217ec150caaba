"""Minimal identity provider: consumer registry and identity-token issuance."""

import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict

from cryptography.exceptions import InvalidKey
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC
from fastapi import FastAPI
from pydantic import BaseModel

from dsac.credential import IdentityToken, KeyPair, sign_identity_token
from dsac.exceptions import AuthenticationError, ConflictError, ValidationError
from dsac.utils import install_error_handlers

logger = logging.getLogger(__name__)

PBKDF2_ITERATIONS = 200_000
DEFAULT_TOKEN_LIFETIME = 60 * 60


def _kdf(salt: bytes, iterations: int) -> PBKDF2HMAC:
    return PBKDF2HMAC(algorithm=hashes.SHA256(), length=32, salt=salt, iterations=iterations)


@dataclass(frozen=True)
class ConsumerRecord:
    consumer_id: str
    salt: bytes
    secret_hash: bytes
    registered_at: int
    iterations: int = PBKDF2_ITERATIONS

    def check(self, secret: str) -> bool:
        try:
            # constant-time comparison inside verify()
            _kdf(self.salt, self.iterations).verify(secret.encode("utf-8"), self.secret_hash)
        except InvalidKey:
            return False
        return True


class IdentityProvider:
    def __init__(
        self,
        issuer: str,
        key: KeyPair,
        token_lifetime: int = DEFAULT_TOKEN_LIFETIME,
        kdf_iterations: int = PBKDF2_ITERATIONS,
        clock: Callable[[], float] = time.time,
    ):
        self.issuer = issuer
        self.key = key
        self.token_lifetime = token_lifetime
        self.kdf_iterations = kdf_iterations
        self._clock = clock
        self._consumers: Dict[str, ConsumerRecord] = {}
        self._lock = threading.Lock()

    def register_consumer(self, consumer_id: str, secret: str) -> None:
        if not consumer_id or not consumer_id.strip():
            raise ValidationError("consumer_id must not be empty")
        if not secret:
            raise ValidationError("secret must not be empty")
        salt = os.urandom(16)
        record = ConsumerRecord(
            consumer_id=consumer_id,
            salt=salt,
            secret_hash=_kdf(salt, self.kdf_iterations).derive(secret.encode("utf-8")),
            registered_at=int(self._clock()),
            iterations=self.kdf_iterations,
        )
        with self._lock:
            if consumer_id in self._consumers:
                raise ConflictError("Consumer", consumer_id)
            self._consumers[consumer_id] = record
        logger.info(f"Registered consumer {consumer_id}")

    def issue_identity_token(self, consumer_id: str, secret: str) -> IdentityToken:
        with self._lock:
            record = self._consumers.get(consumer_id)
        if record is None:
            # same KDF cost for unknown ids as for wrong secrets
            _kdf(os.urandom(16), self.kdf_iterations).derive(secret.encode("utf-8"))
        if record is None or not record.check(secret):
            logger.warning(f"Authentication failed for {consumer_id!r}")
            raise AuthenticationError
        token = sign_identity_token(
            consumer_id,
            self.issuer,
            self.key,
            issued_at=int(self._clock()),
            lifetime=self.token_lifetime,
        )
        logger.debug(f"Issued identity token for {consumer_id}")
        return token

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


class ConsumerSecret(BaseModel):
    consumer_id: str
    secret: str


def create_app(idp: IdentityProvider) -> FastAPI:
    app = FastAPI(title="dsac identity provider")
    install_error_handlers(app)
    app.state.idp = idp

    @app.post("/register", status_code=201)
    def register(body: ConsumerSecret) -> Dict[str, str]:
        idp.register_consumer(body.consumer_id, body.secret)
        return {"consumer_id": body.consumer_id}

    @app.post("/token")
    def token(body: ConsumerSecret) -> Dict[str, Any]:
        issued = idp.issue_identity_token(body.consumer_id, body.secret)
        return {"token": issued.encode(), "identity_token": issued.to_json()}

    @app.get("/jwks")
    def jwks() -> Dict[str, Any]:
        return idp.jwks()

    return app
