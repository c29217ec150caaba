"""dsac enforces capability-based access control in front of an NGSI-LD broker

Usage:
    dsac serve (broker | idp | pap | pdp | pep) [options]
    dsac keygen [--force] [options]
    dsac register [options]
    dsac token [options]
    dsac get-vc [options]
    dsac read (--entity <id> [--attrs <attrs>] | --type <type>) [options]
    dsac write --entity <id> --attr <attr> --value <value> [options]
    dsac write --entity <id> --type <type> [--data <data>] [options]
    dsac subscribe (--entity <id> | --type <type>) --endpoint <url> [--attrs <attrs>]
    [--listen] [options]
    dsac unsubscribe <subscription_id> [options]
    dsac policy put <consumer> <operation> <resource> [options]
    dsac policy list <consumer> [options]
    dsac policy delete <policy_id> [options]
    dsac revoke (--consumer <consumer> | --index <index>) [--list <number>] [options]
    dsac status-list show [--list <number>] [options]
    dsac bench-revocation [--bits <bits>] [--densities <densities>] [--seeds <seeds>]
    [--gnuplot] [options]

    dsac -h | --help
    dsac --version


Options:
    -h --help                   Show this screen
    --version                   Show version
    --config <file>             Use a custom config file instead of ~/.config/dsac/dsac.cfg
    --mode <mode>               centralized or distributed, overrides [dsac] mode
    --json                      Print machine-readable JSON
    --debug                     Set log level to DEBUG
    --error                     Set log level to ERROR
    --hide-progress             Hide the progress bar
    --force                     Overwrite an existing wallet key
    --entity <id>               Entity id (an absolute URL or URN)
    --type <type>               Entity type URL
    --attrs <attrs>             Comma separated attribute names
    --attr <attr>               Attribute name
    --value <value>             New attribute value as JSON (plain strings accepted)
    --data <data>               Attributes of a new entity as a JSON object
    --endpoint <url>            Notification endpoint of a subscription
    --listen                    Receive notifications on the endpoint until interrupted
    --consumer <consumer>       Consumer id
    --index <index>             Status list index of a single credential
    --list <number>             Status list number
    --bits <bits>               Status list size in bits [default: 1000000]
    --densities <densities>     Comma separated revoked fractions
                                [default: 0.0001,0.001,0.01,0.1,0.5]
    --seeds <seeds>             Random lists per density [default: 5]
    --gnuplot                   Print a whitespace separated table instead of CSV
"""

import configparser
import csv
import json
import logging
import os
import pathlib
import random
import statistics
import sys
import time
import traceback
import typing
import urllib.parse
from types import TracebackType
from typing import (
    Any,
    Callable,
    Dict,
    List,
    NamedTuple,
    NoReturn,
    Optional,
    Sequence,
    Type,
    TypedDict,
)

import requests
import uvicorn
from docopt import docopt
from fastapi import Body, FastAPI
from tqdm import tqdm

from dsac import __version__, utils
from dsac.broker import NGSI_LD_PREFIX, Broker, Notifier
from dsac.broker import create_app as create_broker_app
from dsac.credential import (
    Bitstring,
    CapabilityCredential,
    KeyPair,
    StatusList,
    b64url_decode,
    compress_list,
    create_presentation,
    read_public_key_file,
)
from dsac.exceptions import DataSpaceError, ValidationError
from dsac.idp import IdentityProvider
from dsac.idp import create_app as create_idp_app
from dsac.pap import OWNER_KEY_HEADER, PolicyAdministrationPoint
from dsac.pap import create_app as create_pap_app
from dsac.pdp import PdpSettings, PolicyDecisionPoint, load_status_list_files
from dsac.pdp import create_app as create_pdp_app
from dsac.pep import PRESENTATION_HEADER, SESSION_HEADER, PolicyEnforcementPoint
from dsac.pep import create_app as create_pep_app
from dsac.policy import Operation, ResourceUrl

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_DENIED = 3

COMPONENTS = ("broker", "idp", "pap", "pdp", "pep")


class DsacArgs(TypedDict):
    attr: Optional[str]
    attrs: Optional[str]
    bits: str
    config: Optional[str]
    consumer: Optional[str]
    data: Optional[str]
    densities: str
    endpoint: Optional[str]
    entity: Optional[str]
    force: bool
    gnuplot: bool
    hide_progress: bool
    index: Optional[str]
    json: bool
    list: Optional[str]
    listen: bool
    mode: Optional[str]
    seeds: str
    type: Optional[str]
    value: Optional[str]


class BenchRow(NamedTuple):
    density: float
    raw_bytes: int
    compressed_bytes_mean: float
    compressed_bytes_stddev: float


def handle_exception(
    exc_type: Type[BaseException],
    exc_value: BaseException,
    exc_traceback: Optional[TracebackType],
) -> NoReturn:
    if issubclass(exc_type, KeyboardInterrupt):
        logger.error("\nGoodbye!")
    else:
        logger.error("".join(traceback.format_exception(exc_type, exc_value, exc_traceback)))
    sys.exit(1)


sys.excepthook = handle_exception


def fail(message: str, exit_code: int = EXIT_ERROR) -> NoReturn:
    logger.error(message)
    sys.exit(exit_code)


def main() -> None:
    """Main function, dispatches the subcommand"""
    package_logger = logging.getLogger("dsac")
    handler = logging.StreamHandler()
    handler.addFilter(utils.ColorizeFilter())
    package_logger.addHandler(handler)
    package_logger.setLevel(logging.INFO)

    arguments = docopt(__doc__, version=__version__)

    if arguments["--debug"]:
        package_logger.setLevel(logging.DEBUG)
    elif arguments["--error"]:
        package_logger.setLevel(logging.ERROR)

    if arguments["--config"]:
        config_file = pathlib.Path(arguments["--config"]).expanduser()
    elif "XDG_CONFIG_HOME" in os.environ:
        config_file = pathlib.Path(os.environ["XDG_CONFIG_HOME"], "dsac", "dsac.cfg")
    else:
        config_file = pathlib.Path.home().joinpath(".config", "dsac", "dsac.cfg")

    config = get_config(config_file)
    apply_env_overrides(config, os.environ)
    logger.debug(arguments)

    # convert arguments dict to python_args (kwargs-friendly args)
    python_args = {}
    for key, value in arguments.items():
        if key.startswith("--"):
            python_args[key.strip("-").replace("-", "_")] = value
    kwargs = typing.cast(DsacArgs, python_args)

    try:
        if arguments["serve"]:
            component = next(c for c in COMPONENTS if arguments[c])
            serve(component, config, debug=bool(arguments["--debug"]))
        elif arguments["bench-revocation"]:
            bench_command(kwargs)
        elif arguments["policy"] or arguments["revoke"] or arguments["status-list"]:
            admin_command(arguments, kwargs, config)
        else:
            consumer_command(arguments, kwargs, config)
    except (DataSpaceError, ValueError, OSError) as err:
        fail(str(err))
    except requests.RequestException as err:
        fail(f"Service unreachable: {err}")


# configuration


def get_config(config_file: pathlib.Path) -> configparser.ConfigParser:
    """Gets config from dsac.cfg, seeding the user file from the defaults"""
    config = configparser.ConfigParser()

    default_config_file = pathlib.Path(__file__).with_name("dsac.cfg")

    with utils.get_filelock(config_file):
        # load default config first
        with open(default_config_file, encoding="UTF-8") as f:
            config.read_file(f)

        if config_file.exists():
            with open(config_file, encoding="UTF-8") as f:
                config.read_file(f)
        else:
            config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(config_file, "w", encoding="UTF-8") as f:
                config.write(f)

    return config


def apply_env_overrides(
    config: configparser.ConfigParser,
    environ: typing.Mapping[str, str],
) -> None:
    """DSAC_<SECTION>_<KEY> environment variables win over both config files."""
    for section in config.sections():
        for key in list(config[section]):
            name = f"DSAC_{section}_{key}".upper()
            if name in environ:
                config[section][key] = environ[name]


def config_path(value: Optional[str]) -> Optional[pathlib.Path]:
    if not value or not value.strip():
        return None
    return pathlib.Path(value.strip()).expanduser()


def config_seconds(section: configparser.SectionProxy, key: str) -> float:
    return utils.duration_in_seconds(section[key])


def parse_assignments(value: Optional[str]) -> Dict[str, str]:
    """``a=b, c=d`` into ``{"a": "b", "c": "d"}``; the last ``=`` separates."""
    pairs = {}
    for entry in utils.split_csv(value):
        left, sep, right = entry.rpartition("=")
        if not sep or not left.strip() or not right.strip():
            raise ValidationError(f"Expected <name>=<value>, got {entry!r}")
        pairs[left.strip()] = right.strip()
    return pairs


def parse_trust_anchors(value: Optional[str]) -> Dict[str, str]:
    anchors = {}
    for issuer, key_file in parse_assignments(value).items():
        path = config_path(key_file)
        assert path is not None
        anchors[issuer] = read_public_key_file(path)
    return anchors


# services


def build_app(component: str, config: configparser.ConfigParser) -> FastAPI:
    section = config[component]
    if component == "broker":
        notifier = Notifier(
            timeout=config_seconds(section, "notify_timeout"),
            workers=section.getint("notify_workers"),
        )
        return create_broker_app(Broker(notifier, snapshot=config_path(section["snapshot"])))
    if component == "idp":
        key_file = config_path(section["key_file"])
        assert key_file is not None
        idp = IdentityProvider(
            section["issuer"],
            KeyPair.load_or_create(key_file),
            token_lifetime=int(config_seconds(section, "token_lifetime")),
        )
        return create_idp_app(idp)
    if component == "pap":
        key_file = config_path(section["key_file"])
        assert key_file is not None
        pap = PolicyAdministrationPoint(
            section["issuer"],
            KeyPair.load_or_create(key_file),
            section["public_url"],
            owner_keys=parse_assignments(section["owner_keys"]),
            pdp_secrets=utils.split_csv(section["pdp_secrets"]),
            trusted_idps=parse_trust_anchors(section["trusted_idps"]),
            capacity=section.getint("capacity"),
            credential_lifetime=int(config_seconds(section, "credential_lifetime")),
            clock_skew=config_seconds(section, "clock_skew"),
            snapshot=config_path(section["snapshot"]),
        )
        return create_pap_app(pap)
    if component == "pdp":
        settings = PdpSettings(
            audience=section["audience"],
            broker_url=section["broker_url"],
            trusted_paps=parse_trust_anchors(section["trusted_paps"]),
            trusted_idps=parse_trust_anchors(section["trusted_idps"]),
            pap_url=section["pap_url"] or None,
            pdp_secret=section["pdp_secret"],
            refresh_interval=config_seconds(section, "refresh_interval"),
            sweep_interval=config_seconds(section, "sweep_interval"),
            freshness_window=config_seconds(section, "freshness_window"),
            nonce_window=config_seconds(section, "nonce_window"),
            clock_skew=config_seconds(section, "clock_skew"),
            pip_ttl=config_seconds(section, "pip_ttl"),
            request_timeout=config_seconds(section, "request_timeout"),
            session_lifetime=config_seconds(section, "session_lifetime"),
            max_status_list_bits=section.getint("max_status_list_bits"),
        )
        pdp = PolicyDecisionPoint(settings)
        files = [config_path(p) for p in utils.split_csv(section["status_list_files"])]
        accepted = load_status_list_files(pdp, [p for p in files if p is not None])
        if files:
            logger.info(f"Preloaded {accepted} of {len(files)} status list files")
        return create_pdp_app(pdp, background=True)
    if component == "pep":
        pep = PolicyEnforcementPoint(
            section["broker_url"],
            section["pdp_url"],
            timeout=config_seconds(section, "timeout"),
        )
        return create_pep_app(pep)
    raise ValidationError(f"Unknown component {component!r}")


def serve(component: str, config: configparser.ConfigParser, debug: bool = False) -> None:
    app = build_app(component, config)
    section = config[component]
    logger.info(f"Serving {component} on {section['host']}:{section['port']}")
    uvicorn.run(
        app,
        host=section["host"],
        port=section.getint("port"),
        log_level="debug" if debug else "info",
    )


# consumer workflows


class Wallet:
    """Holder key and the last capability credential obtained from the PAP."""

    def __init__(self, path: pathlib.Path):
        self.path = path
        self.key_path = path / "key.pem"
        self.credential_path = path / "vc.json"

    def create_key(self, force: bool = False) -> KeyPair:
        if self.key_path.exists() and not force:
            raise ValidationError(f"{self.key_path} already exists, use --force to replace it")
        key = KeyPair.generate()
        with utils.get_filelock(self.key_path):
            key.save(self.key_path)
        return key

    def key(self) -> KeyPair:
        if not self.key_path.exists():
            raise ValidationError(f"No key in {self.path}, run `dsac keygen` first")
        return KeyPair.load(self.key_path)

    def credential(self) -> CapabilityCredential:
        data = utils.read_json_snapshot(self.credential_path)
        if data is None:
            raise ValidationError(f"No credential in {self.path}, run `dsac get-vc` first")
        return CapabilityCredential.from_json(data)

    def store_credential(self, vc: CapabilityCredential) -> None:
        utils.write_json_snapshot(self.credential_path, vc.to_json())


class DataSpaceClient:
    """Consumer side of both protocols, talking to the IdP, the PAP and the PEP."""

    def __init__(
        self,
        config: configparser.ConfigParser,
        mode: Optional[str] = None,
        session: Optional[requests.Session] = None,
        clock: Callable[[], float] = time.time,
    ):
        section = config["dsac"]
        self.mode = (mode or section["mode"]).lower()
        if self.mode not in ("centralized", "distributed"):
            raise ValidationError(f"Unknown mode {self.mode!r}")
        self.consumer_id = section["consumer_id"]
        self.secret = section["secret"]
        self.owner_key = section["owner_key"]
        self.idp_url = section["idp_url"].rstrip("/")
        self.pap_url = section["pap_url"].rstrip("/")
        self.pep_url = section["pep_url"].rstrip("/")
        self.timeout = config_seconds(section, "timeout")
        wallet_path = config_path(section["wallet"])
        assert wallet_path is not None
        self.wallet = Wallet(wallet_path)
        self.session = session or requests.Session()
        self._clock = clock
        # handed out by the PDP after a verified presentation
        self.capability_session: Optional[str] = None

    def _credentials(self) -> Dict[str, str]:
        if not self.consumer_id or not self.secret:
            raise ValidationError("Set consumer_id and secret in the [dsac] config section")
        return {"consumer_id": self.consumer_id, "secret": self.secret}

    def register(self) -> requests.Response:
        return self.session.post(
            f"{self.idp_url}/register", json=self._credentials(), timeout=self.timeout,
        )

    def identity_token(self) -> str:
        r = self.session.post(
            f"{self.idp_url}/token", json=self._credentials(), timeout=self.timeout,
        )
        check_response(r)
        return r.json()["token"]

    def get_vc(self) -> CapabilityCredential:
        r = self.session.post(
            f"{self.pap_url}/credentials",
            json={
                "identity_token": self.identity_token(),
                "subject_public_key": self.wallet.key().public_key_b64,
            },
            timeout=self.timeout,
        )
        check_response(r)
        vc = CapabilityCredential.from_json(r.json())
        self.wallet.store_credential(vc)
        return vc

    def call(
        self,
        method: str,
        path: str,
        params: Optional[Dict[str, str]] = None,
        body: Optional[Any] = None,
    ) -> requests.Response:
        """Call the data space, answering the PEP's nonce challenge in distributed mode."""
        url = f"{self.pep_url}{path}"
        if self.mode == "centralized":
            headers = {"Authorization": f"Bearer {self.identity_token()}"}
            return self.session.request(
                method, url, params=params, json=body, headers=headers, timeout=self.timeout,
            )

        vc = self.wallet.credential()
        key = self.wallet.key()
        headers = {SESSION_HEADER: self.capability_session} if self.capability_session else {}
        r = self.session.request(
            method, url, params=params, json=body, headers=headers, timeout=self.timeout,
        )
        if r.status_code != 401:
            return self._keep_session(r)
        nonce = r.json().get("nonce")
        if not nonce:
            return r
        # audience is the PEP we chose to talk to, never what it claims
        vp = create_presentation([vc], nonce, self.pep_url, key, int(self._clock()))
        logger.debug(f"Answering challenge with a presentation of {vc.id}")
        r = self.session.request(
            method,
            url,
            params=params,
            json=body,
            headers={PRESENTATION_HEADER: vp.to_header()},
            timeout=self.timeout,
        )
        return self._keep_session(r)

    def _keep_session(self, r: requests.Response) -> requests.Response:
        if r.status_code == 403:
            self.capability_session = None
        elif SESSION_HEADER in r.headers:
            self.capability_session = r.headers[SESSION_HEADER]
        return r


def entity_path(entity_id: str) -> str:
    return f"{NGSI_LD_PREFIX}/entities/{urllib.parse.quote(entity_id, safe='')}"


def check_response(r: requests.Response) -> None:
    if r.status_code < 400:
        return
    try:
        detail = utils.error_detail(r.json())
    except ValueError:
        detail = r.text or r.reason
    if r.status_code == 403:
        fail(f"Access denied: {detail}", EXIT_DENIED)
    fail(f"{r.request.method} {r.url} failed ({r.status_code}): {detail}")


def emit(data: Any, as_json: bool, text: Optional[str] = None) -> None:
    if as_json or text is None:
        print(json.dumps(data, indent=2, sort_keys=True))
    else:
        print(text)


def parse_value(value: str) -> Any:
    try:
        return json.loads(value)
    except ValueError:
        return value


def subscription_body(kwargs: DsacArgs) -> Dict[str, Any]:
    selector = {"id": kwargs["entity"]} if kwargs["entity"] else {"type": kwargs["type"]}
    body: Dict[str, Any] = {
        "type": "Subscription",
        "entities": [selector],
        "notification": {"endpoint": {"uri": kwargs["endpoint"]}},
    }
    if kwargs["attrs"]:
        body["watchedAttributes"] = utils.split_csv(kwargs["attrs"])
    return body


def create_listener_app(path: str, sink: Callable[[Dict[str, Any]], None]) -> FastAPI:
    app = FastAPI(title="dsac notification listener")

    @app.post(path or "/")
    def receive(body: Dict[str, Any] = Body(...)) -> Dict[str, str]:
        sink(body)
        return {"status": "received"}

    return app


def listen(endpoint: str, as_json: bool) -> None:
    parsed = urllib.parse.urlsplit(endpoint)

    def print_notification(body: Dict[str, Any]) -> None:
        if as_json:
            print(json.dumps(body, sort_keys=True), flush=True)
        else:
            value = json.dumps(body.get("value"))
            print(f"{body.get('entity_id')} {body.get('attr')} = {value}", flush=True)

    logger.info(f"Listening for notifications on {endpoint}, Ctrl+C to stop")
    uvicorn.run(
        create_listener_app(parsed.path, print_notification),
        host=parsed.hostname or "127.0.0.1",
        port=parsed.port or 80,
        log_level="warning",
    )


def consumer_command(
    arguments: Dict[str, Any],
    kwargs: DsacArgs,
    config: configparser.ConfigParser,
) -> None:
    client = DataSpaceClient(config, kwargs["mode"])
    as_json = kwargs["json"]

    if arguments["keygen"]:
        key = client.wallet.create_key(force=kwargs["force"])
        emit({"key_id": key.key_id, "public_key": key.public_key_b64}, as_json, key.key_id)
    elif arguments["register"]:
        r = client.register()
        check_response(r)
        emit(r.json(), as_json, f"Registered {client.consumer_id}")
    elif arguments["token"]:
        token = client.identity_token()
        emit({"token": token}, as_json, token)
    elif arguments["get-vc"]:
        vc = client.get_vc()
        capabilities = ", ".join(f"{op.value} {url}" for op, url in vc.capabilities)
        description = f"{vc.id} valid until {vc.expires_at}: {capabilities or 'no capabilities'}"
        emit(vc.to_json(), as_json, description)
    elif arguments["read"]:
        if kwargs["type"]:
            r = client.call("GET", f"{NGSI_LD_PREFIX}/entities", params={"type": kwargs["type"]})
        else:
            assert kwargs["entity"] is not None
            params = {"attrs": kwargs["attrs"]} if kwargs["attrs"] else None
            r = client.call("GET", entity_path(kwargs["entity"]), params=params)
        check_response(r)
        body = r.json()
        text = None
        if kwargs["attrs"] and isinstance(body, dict):
            text = "\n".join(
                f"{name}: {json.dumps(body.get(name))}" for name in utils.split_csv(kwargs["attrs"])
            )
        emit(body, as_json, text)
    elif arguments["write"]:
        assert kwargs["entity"] is not None
        if kwargs["attr"]:
            assert kwargs["value"] is not None
            r = client.call(
                "PATCH",
                f"{entity_path(kwargs['entity'])}/attrs/"
                f"{urllib.parse.quote(kwargs['attr'], safe='')}",
                body={"value": parse_value(kwargs["value"])},
            )
        else:
            data = json.loads(kwargs["data"]) if kwargs["data"] else {}
            if not isinstance(data, dict):
                raise ValidationError("--data must be a JSON object")
            body = {**data, "id": kwargs["entity"], "type": kwargs["type"]}
            r = client.call("POST", f"{NGSI_LD_PREFIX}/entities", body=body)
        check_response(r)
        emit({"status": r.status_code}, as_json, "OK")
    elif arguments["subscribe"]:
        assert kwargs["endpoint"] is not None
        r = client.call("POST", f"{NGSI_LD_PREFIX}/subscriptions", body=subscription_body(kwargs))
        check_response(r)
        emit(r.json(), as_json, r.json()["id"])
        if kwargs["listen"]:
            listen(kwargs["endpoint"], as_json)
    elif arguments["unsubscribe"]:
        subscription_id = arguments["<subscription_id>"]
        r = client.call("DELETE", f"{NGSI_LD_PREFIX}/subscriptions/{subscription_id}")
        check_response(r)
        emit({"status": r.status_code}, as_json, "OK")


# owner workflows


def admin_command(
    arguments: Dict[str, Any],
    kwargs: DsacArgs,
    config: configparser.ConfigParser,
) -> None:
    section = config["dsac"]
    pap_url = section["pap_url"].rstrip("/")
    timeout = config_seconds(section, "timeout")
    headers = {OWNER_KEY_HEADER: section["owner_key"]}
    as_json = kwargs["json"]

    if arguments["policy"] and arguments["put"]:
        body = {
            "consumer_id": arguments["<consumer>"],
            "operation": Operation.parse(arguments["<operation>"]).value,
            "resource": ResourceUrl.parse(arguments["<resource>"]).to_json(),
        }
        r = requests.put(f"{pap_url}/policies", json=body, headers=headers, timeout=timeout)
        check_response(r)
        emit(r.json(), as_json, r.json()["id"])
    elif arguments["policy"] and arguments["list"]:
        r = requests.get(
            f"{pap_url}/policies",
            params={"consumer_id": arguments["<consumer>"]},
            headers=headers,
            timeout=timeout,
        )
        check_response(r)
        policies = r.json()
        lines = [
            f"{p['id']}  {p['owner']}  {p['consumer_id']}  {p['operation']}  "
            f"{p['resource']['kind']}:{p['resource']['url']}"
            for p in policies
        ]
        emit(policies, as_json, "\n".join(lines) or "No policies")
    elif arguments["policy"] and arguments["delete"]:
        policy_url = f"{pap_url}/policies/{arguments['<policy_id>']}"
        r = requests.delete(policy_url, headers=headers, timeout=timeout)
        check_response(r)
        emit({"deleted": arguments["<policy_id>"]}, as_json, "Deleted")
    elif arguments["revoke"]:
        body: Dict[str, Any] = {}
        if kwargs["consumer"]:
            body["consumer_id"] = kwargs["consumer"]
        else:
            assert kwargs["index"] is not None
            body["status_index"] = int(kwargs["index"])
        if kwargs["list"] is not None:
            body["list_number"] = int(kwargs["list"])
        r = requests.post(f"{pap_url}/revocations", json=body, headers=headers, timeout=timeout)
        check_response(r)
        revoked = r.json()["revoked"]
        lines = [f"{s['status_list_url']} #{s['status_index']}" for s in revoked]
        emit(r.json(), as_json, "\n".join(lines))
    elif arguments["status-list"]:
        url = f"{pap_url}/status-list"
        if kwargs["list"] is not None:
            url = f"{url}/{int(kwargs['list'])}"
        r = requests.get(url, timeout=timeout)
        check_response(r)
        status_list = StatusList.from_json(r.json())
        summary = status_list_summary(status_list)
        emit(summary, as_json, format_summary(summary))


def status_list_summary(status_list: StatusList) -> Dict[str, Any]:
    revoked = status_list.bits.count()
    return {
        "id": status_list.id,
        "issuer": status_list.issuer,
        "issued_at": status_list.issued_at,
        "bit_count": status_list.bit_count,
        "revoked": revoked,
        "unrevoked": status_list.bit_count - revoked,
        "compressed_bytes": len(b64url_decode(status_list.encoded_list)),
    }


def format_summary(summary: Dict[str, Any]) -> str:
    return "\n".join(f"{key}: {value}" for key, value in summary.items())


# experiment harness


def bench_revocation(
    bits: int,
    densities: Sequence[float],
    seeds: int,
    hide_progress: bool = False,
) -> List[BenchRow]:
    """Compressed size of random status lists as the revoked fraction grows."""
    if bits <= 0 or seeds <= 0:
        raise ValidationError("--bits and --seeds must be positive")
    if any(not 0 <= d <= 1 for d in densities):
        raise ValidationError("densities must lie within [0, 1]")
    rows = []
    with tqdm(total=len(densities) * seeds, disable=hide_progress, file=sys.stderr) as progress:
        for density in densities:
            sizes = []
            for seed in range(seeds):
                rng = random.Random(seed)
                status = Bitstring(bits)
                for index in rng.sample(range(bits), round(density * bits)):
                    status.set(index)
                sizes.append(len(compress_list(status)))
                progress.update()
            rows.append(
                BenchRow(
                    density,
                    (bits + 7) // 8,
                    statistics.mean(sizes),
                    statistics.stdev(sizes) if len(sizes) > 1 else 0.0,
                ),
            )
    return rows


def is_non_decreasing(rows: Sequence[BenchRow]) -> bool:
    means = [row.compressed_bytes_mean for row in sorted(rows, key=lambda r: r.density)]
    return all(a <= b for a, b in zip(means, means[1:]))


def write_bench(rows: Sequence[BenchRow], gnuplot: bool, out: typing.TextIO) -> None:
    if gnuplot:
        out.write(f"# {' '.join(BenchRow._fields)}\n")
        for row in rows:
            out.write(
                f"{row.density:g} {row.raw_bytes} "
                f"{row.compressed_bytes_mean:.1f} {row.compressed_bytes_stddev:.1f}\n",
            )
        return
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(BenchRow._fields)
    for row in rows:
        writer.writerow(
            [
                f"{row.density:g}",
                row.raw_bytes,
                f"{row.compressed_bytes_mean:.1f}",
                f"{row.compressed_bytes_stddev:.1f}",
            ],
        )


def bench_command(kwargs: DsacArgs) -> None:
    try:
        bits = int(kwargs["bits"])
        seeds = int(kwargs["seeds"])
        densities = [float(d) for d in utils.split_csv(kwargs["densities"])]
    except ValueError:
        fail("--bits and --seeds take integers, --densities comma separated numbers")
    rows = bench_revocation(bits, densities, seeds, kwargs["hide_progress"])
    write_bench(rows, kwargs["gnuplot"], sys.stdout)
    if not is_non_decreasing(rows):
        fail("Compressed size is not monotonic in the revoked fraction")


if __name__ == "__main__":
    main()
