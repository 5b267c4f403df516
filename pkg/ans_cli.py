#!/usr/bin/env python3
"""
Filename: ans_cli.py
Description: Command-line interface for the Agent Name Service

Verbs:
    serve          run the registry service
    keygen         create an agent (or operator) key pair
    register       register an agent with the registry
    renew          renew an agent certificate
    resolve        resolve an ANSName to a verified endpoint
    deregister     withdraw an agent (agent or operator key)
    revoke         operator revocation
    crl            fetch and check the registry CRL
    challenge      run a capability challenge (operator key)
    audit-verify   verify the registry audit log hash chain

Results go to stdout as JSON. Exit codes: 0 ok, 1 usage, 2 schema,
3 network, 4 verification failure, 5 not found.
"""

import argparse
import json
import os
import sys
from typing import Any, List, Optional

from rich.console import Console
from rich.panel import Panel

import agent_requests
from ans_errors import EXIT_USAGE, EXIT_VERIFICATION, ANSError, ConfigError, InvalidEndpoint
from ans_service import run_service
from audit_log import AuditLog
from config import AUDIT_LOG_FILENAME, SUPPORTED_ALGORITHMS, load_config
from pki import (
    RevocationList,
    generate_keypair,
    load_certificates,
    load_private_key,
    passphrase_from_env,
    save_private_key,
    save_public_key,
)
from registry import derive_agent_uuid
from resolver import HttpRegistryClient, Resolver

console = Console()
err_console = Console(stderr=True)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; usage errors here exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        err_console.print(f"[bold red]Usage error:[/bold red] {message}")
        sys.exit(EXIT_USAGE)


def _emit(data: Any) -> None:
    console.print_json(json.dumps(data, sort_keys=True))


def _load_json_file(path: Optional[str]) -> Any:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read {path}: {e}")


def _key(path: str):
    return load_private_key(path, passphrase_from_env(required=False))


def _client(args, cfg) -> HttpRegistryClient:
    server_url = args.server or cfg.server_url
    if server_url.startswith("http://"):
        verify: Any = False
    else:
        verify = args.tls_ca or cfg.trust_anchor or True
    return HttpRegistryClient(server_url, verify=verify)


# ================================== VERBS ================================== #
def cmd_serve(args, cfg) -> int:
    return run_service(cfg)


def cmd_keygen(args, cfg) -> int:
    passphrase = None if args.insecure_no_passphrase else passphrase_from_env(required=True)
    key, public_key = generate_keypair(args.alg)
    key_path, pub_path = f"{args.out}.key", f"{args.out}.pub"
    save_private_key(key, key_path, passphrase)
    save_public_key(public_key, pub_path)
    _emit({
        "algorithm": args.alg,
        "privateKey": os.path.abspath(key_path),
        "publicKey": os.path.abspath(pub_path),
        "encrypted": passphrase is not None,
        "agentUUID": derive_agent_uuid(public_key),
    })
    return 0


def cmd_register(args, cfg) -> int:
    body = agent_requests.registration_request(
        args.name, _key(args.key), _load_json_file(args.extensions), args.endpoint
    )
    if args.dry_run:
        _emit(body)
        return 0
    response = _client(args, cfg).post("/v1/register", body)
    if args.cert_out:
        with open(args.cert_out, "w", encoding="ascii") as f:
            f.write(response["certificate"]["pem"])
    _emit(response)
    return 0


def cmd_renew(args, cfg) -> int:
    body = agent_requests.renewal_request(args.name, _key(args.key))
    response = _client(args, cfg).post("/v1/renew", body)
    if args.cert_out:
        with open(args.cert_out, "w", encoding="ascii") as f:
            f.write(response["certificate"]["pem"])
    _emit(response)
    return 0


def cmd_resolve(args, cfg) -> int:
    anchor = args.trust_anchor or cfg.trust_anchor
    if not anchor:
        raise ConfigError("resolve needs --trust-anchor (the registry root CA certificate)")
    resolver = Resolver.from_anchor_file(_client(args, cfg), anchor)
    _emit(resolver.resolve(args.name, args.range).to_json())
    return 0


def cmd_deregister(args, cfg) -> int:
    body = agent_requests.deregistration_request(args.name, _key(args.key))
    _emit(_client(args, cfg).post("/v1/deregister", body))
    return 0


def cmd_revoke(args, cfg) -> int:
    body = agent_requests.revocation_request(args.name, args.reason, _key(args.key))
    _emit(_client(args, cfg).post("/v1/revoke", body))
    return 0


def cmd_crl(args, cfg) -> int:
    pem = _client(args, cfg).get("/v1/crl").text
    crl = RevocationList.from_pem(pem)
    anchor = args.trust_anchor or cfg.trust_anchor
    signed = None
    if anchor:
        with open(anchor, "rb") as f:
            signed = crl.is_signed_by(load_certificates(f.read())[0])
        if not signed:
            raise InvalidEndpoint("CRL signature does not verify against the trust anchor")
    if args.pem:
        sys.stdout.write(pem)
        return 0
    _emit({
        "issuer": crl.issuer.rfc4514_string(),
        "issuedAt": crl.issued_at,
        "nextUpdate": crl.next_update,
        "revoked": sorted(format(s, "x") for s in crl.revoked),
        "signatureVerified": signed,
    })
    return 0


def cmd_challenge(args, cfg) -> int:
    try:
        challenge_input = json.loads(args.input)
    except ValueError:
        challenge_input = args.input
    body = agent_requests.challenge_request(
        args.uuid, challenge_input, args.expected, args.claimed_accuracy, _key(args.key)
    )
    _emit(_client(args, cfg).post("/v1/challenge", body))
    return 0


def cmd_audit_verify(args, cfg) -> int:
    path = args.log or os.path.join(cfg.store_dir, AUDIT_LOG_FILENAME)
    if not os.path.exists(path):
        raise ConfigError(f"audit log {path} does not exist")
    verdict = AuditLog(path).verify()
    _emit({"log": path, "valid": verdict.valid, "entries": verdict.entries, "reason": verdict.reason})
    return 0 if verdict else EXIT_VERIFICATION


COMMANDS = {
    "serve": cmd_serve,
    "keygen": cmd_keygen,
    "register": cmd_register,
    "renew": cmd_renew,
    "resolve": cmd_resolve,
    "deregister": cmd_deregister,
    "revoke": cmd_revoke,
    "crl": cmd_crl,
    "challenge": cmd_challenge,
    "audit-verify": cmd_audit_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ans_cli.py", description="Agent Name Service command-line tool")
    parser.add_argument("--config", help="JSON config file (default: $ANS_CONFIG)")
    parser.add_argument("--server", help="registry base URL")
    parser.add_argument("--trust-anchor", help="registry root CA certificate (PEM)")
    parser.add_argument("--tls-ca", help="CA bundle for the HTTPS connection")
    parser.add_argument("--listen", help="host:port for serve")
    parser.add_argument("--ttl", type=int, help="EndpointRecord TTL in seconds")
    parser.add_argument("--store-dir", help="registry store directory")
    parser.add_argument("--dev-no-tls", action="store_true", default=None,
                        help="serve plain HTTP (development only)")

    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("serve", help="run the registry service")

    p = sub.add_parser("keygen", help="create a key pair")
    p.add_argument("--alg", choices=SUPPORTED_ALGORITHMS, default="ed25519")
    p.add_argument("--out", default="agent", help="output prefix (<out>.key, <out>.pub)")
    p.add_argument("--insecure-no-passphrase", action="store_true",
                   help="write the private key unencrypted")

    p = sub.add_parser("register", help="register an agent")
    p.add_argument("name", help="ANSName, e.g. mcp://sentimentAnalyzer.analysis.acme.v1.0.0")
    p.add_argument("--key", required=True, help="agent private key")
    p.add_argument("--extensions", help="protocolExtensions JSON file")
    p.add_argument("--endpoint", help="agent endpoint (default: taken from the extensions)")
    p.add_argument("--cert-out", help="write the issued certificate here")
    p.add_argument("--dry-run", action="store_true", help="print the request instead of sending it")

    p = sub.add_parser("renew", help="renew an agent certificate")
    p.add_argument("name")
    p.add_argument("--key", required=True)
    p.add_argument("--cert-out")

    p = sub.add_parser("resolve", help="resolve an ANSName")
    p.add_argument("name")
    p.add_argument("--range", help='version range, e.g. "*" or "^1.0.0" (default: the exact version)')

    p = sub.add_parser("deregister", help="withdraw an agent")
    p.add_argument("name")
    p.add_argument("--key", required=True, help="agent key or registry operator key")

    p = sub.add_parser("revoke", help="revoke an agent (operator)")
    p.add_argument("name")
    p.add_argument("--reason", default="keyCompromise")
    p.add_argument("--key", required=True, help="registry operator key")

    p = sub.add_parser("crl", help="fetch the registry CRL")
    p.add_argument("--pem", action="store_true", help="print the raw PEM")

    p = sub.add_parser("challenge", help="run a capability challenge (operator)")
    p.add_argument("uuid", help="agent UUID")
    p.add_argument("--input", required=True, help="challenge input (JSON or text)")
    p.add_argument("--expected", required=True)
    p.add_argument("--claimed-accuracy", type=float, required=True)
    p.add_argument("--key", required=True, help="registry operator key")

    p = sub.add_parser("audit-verify", help="verify the audit log")
    p.add_argument("--log", help="audit log path (default: <store>/audit.ndjson)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    try:
        cfg = load_config(
            args.config,
            listen=args.listen,
            default_ttl_seconds=args.ttl,
            store_dir=args.store_dir,
            dev_no_tls=args.dev_no_tls,
            trust_anchor=args.trust_anchor,
        )
        return COMMANDS[args.command](args, cfg)
    except ANSError as e:
        err_console.print(Panel.fit(
            f"{e.message}" + (f"\n{json.dumps(e.details)}" if e.details else ""),
            title=f"[bold red]{e.code}[/bold red]",
            style="red",
        ))
        return e.exit_code
    except KeyboardInterrupt:
        err_console.print("[bold red]Interrupted[/bold red]")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
