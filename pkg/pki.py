#!/usr/bin/env python3
"""
Filename: pki.py
Description: Key generation, CSRs, a small certificate authority, chain
verification with CRL revocation, and detached signatures.

Supported signature algorithms are ``ed25519`` (default) and
``ecdsa-p256-sha256``. ECDSA signatures travel as the raw 64-byte r||s
encoding so both algorithms produce fixed-length values.
"""

import base64
import datetime
import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.x509.oid import NameOID

from ans_errors import (
    ConfigError,
    InvalidCertificate,
    InvalidCSR,
    UnknownSerial,
    UnsupportedAlgorithm,
)
from ansname import ANSName
from config import (
    CA_VALIDITY_DAYS,
    CERT_VALIDITY_DAYS,
    CRL_VALIDITY_SECONDS,
    DEFAULT_SIGNATURE_ALGORITHM,
    KEY_FILE_MODE,
    KEY_PASSPHRASE_ENV,
    SUPPORTED_ALGORITHMS,
)
from logging_config import setup_registry_logger

logger = setup_registry_logger()

ED25519 = "ed25519"
ECDSA_P256 = "ecdsa-p256-sha256"
SIGNATURE_LENGTH = {ED25519: 64, ECDSA_P256: 64}

PrivateKey = Union[ed25519.Ed25519PrivateKey, ec.EllipticCurvePrivateKey]
PublicKey = Union[ed25519.Ed25519PublicKey, ec.EllipticCurvePublicKey]
Clock = Callable[[], float]

# Chain verification reasons
REVOKED = "Revoked"
EXPIRED = "Expired"
UNTRUSTED_ROOT = "UntrustedRoot"
BAD_SIGNATURE = "BadSignature"


def _utc(ts: float) -> datetime.datetime:
    return datetime.datetime.fromtimestamp(int(ts), tz=datetime.timezone.utc)


def _epoch(dt: datetime.datetime) -> int:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=datetime.timezone.utc)
    return int(dt.timestamp())


def not_before(cert: x509.Certificate) -> int:
    value = getattr(cert, "not_valid_before_utc", None) or cert.not_valid_before
    return _epoch(value)


def not_after(cert: x509.Certificate) -> int:
    value = getattr(cert, "not_valid_after_utc", None) or cert.not_valid_after
    return _epoch(value)


# ================================= KEYS ==================================== #
def generate_keypair(algorithm: str = DEFAULT_SIGNATURE_ALGORITHM) -> Tuple[PrivateKey, PublicKey]:
    """
    Generate a fresh signing keypair.

    Args:
        algorithm (str): "ed25519" or "ecdsa-p256-sha256"

    Returns:
        tuple: (private key, public key)

    Raises:
        UnsupportedAlgorithm: anything else (RSA, weak curves, typos)
    """
    if algorithm == ED25519:
        key = ed25519.Ed25519PrivateKey.generate()
    elif algorithm == ECDSA_P256:
        key = ec.generate_private_key(ec.SECP256R1())
    else:
        raise UnsupportedAlgorithm(
            f"unsupported algorithm {algorithm!r}; use one of {SUPPORTED_ALGORITHMS}"
        )
    return key, key.public_key()


def algorithm_of(key: Union[PrivateKey, PublicKey]) -> str:
    """Name of the signature algorithm a key belongs to."""
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return ED25519
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        if isinstance(key.curve, ec.SECP256R1):
            return ECDSA_P256
    raise UnsupportedAlgorithm(f"unsupported key type {type(key).__name__}")


def _hash_for(key: PrivateKey) -> Optional[hashes.HashAlgorithm]:
    # Ed25519 hashes internally and takes no digest
    return None if algorithm_of(key) == ED25519 else hashes.SHA256()


def public_key_der(public_key: PublicKey) -> bytes:
    """Canonical SubjectPublicKeyInfo DER encoding."""
    return public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def same_public_key(a: PublicKey, b: PublicKey) -> bool:
    try:
        return public_key_der(a) == public_key_der(b)
    except (TypeError, ValueError):
        return False


def passphrase_from_env(required: bool = True) -> Optional[bytes]:
    """
    Read the key passphrase from $ANS_KEY_PASSPHRASE.

    Raises:
        ConfigError: when required and unset
    """
    value = os.environ.get(KEY_PASSPHRASE_ENV)
    if not value:
        if required:
            raise ConfigError(f"{KEY_PASSPHRASE_ENV} is not set")
        return None
    return value.encode("utf-8")


def _write_private(path: str, data: bytes) -> None:
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, KEY_FILE_MODE)
    with os.fdopen(fd, "wb") as f:
        f.write(data)
    os.chmod(path, KEY_FILE_MODE)


def save_private_key(key: PrivateKey, path: str, passphrase: Optional[bytes]) -> None:
    """Write ``key`` as PKCS#8 PEM, encrypted when a passphrase is given."""
    encryption = (
        serialization.BestAvailableEncryption(passphrase)
        if passphrase
        else serialization.NoEncryption()
    )
    pem = key.private_bytes(
        serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8, encryption
    )
    _write_private(path, pem)
    logger.info(f"[PKI] Private key written to {path}")


def load_private_key(path: str, passphrase: Optional[bytes]) -> PrivateKey:
    """
    Load a PEM private key.

    Raises:
        ConfigError: unreadable file or wrong passphrase
        UnsupportedAlgorithm: key type other than Ed25519 / P-256
    """
    try:
        with open(path, "rb") as f:
            key = serialization.load_pem_private_key(f.read(), password=passphrase)
    except (OSError, ValueError, TypeError) as e:
        raise ConfigError(f"cannot load private key {path}: {e}")
    algorithm_of(key)
    return key


def save_public_key(public_key: PublicKey, path: str) -> None:
    with open(path, "wb") as f:
        f.write(public_key.public_bytes(
            serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
        ))


# ================================= CSRs ==================================== #
def build_subject(name: ANSName) -> x509.Name:
    """DN mapping: CN=agentID, OU=capability, O=provider."""
    return x509.Name([
        x509.NameAttribute(NameOID.COMMON_NAME, name.agent_id),
        x509.NameAttribute(NameOID.ORGANIZATIONAL_UNIT_NAME, name.capability),
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, name.provider),
    ])


def subject_text(dn: x509.Name) -> str:
    return dn.rfc4514_string()


def create_csr(key: PrivateKey, subject: Union[ANSName, x509.Name]) -> x509.CertificateSigningRequest:
    """Create a self-signed CSR for ``key`` with the given subject."""
    dn = build_subject(subject) if isinstance(subject, ANSName) else subject
    return (
        x509.CertificateSigningRequestBuilder()
        .subject_name(dn)
        .sign(key, _hash_for(key))
    )


def csr_pem(csr: x509.CertificateSigningRequest) -> str:
    return csr.public_bytes(serialization.Encoding.PEM).decode("ascii")


def load_csr(data: Union[str, bytes]) -> x509.CertificateSigningRequest:
    """
    Parse a PEM or DER CSR.

    Raises:
        InvalidCSR: unparsable input
    """
    raw = data.encode("ascii", "replace") if isinstance(data, str) else data
    try:
        if raw.lstrip().startswith(b"-----BEGIN"):
            return x509.load_pem_x509_csr(raw)
        return x509.load_der_x509_csr(raw)
    except (ValueError, TypeError) as e:
        raise InvalidCSR(f"cannot parse CSR: {e}")


def verify_csr(csr: Union[x509.CertificateSigningRequest, str, bytes]) -> bool:
    """True iff the CSR parses and its self-signature verifies."""
    try:
        if not isinstance(csr, x509.CertificateSigningRequest):
            csr = load_csr(csr)
        return bool(csr.is_signature_valid)
    except Exception:
        return False


# ========================== CERTIFICATE BUNDLES =========================== #
def load_certificates(data: Union[str, bytes]) -> List[x509.Certificate]:
    """
    Parse one or more PEM certificates, or a single DER certificate.

    Raises:
        InvalidCertificate: unparsable input
    """
    raw = data.encode("ascii", "replace") if isinstance(data, str) else data
    try:
        if raw.lstrip().startswith(b"-----BEGIN"):
            return x509.load_pem_x509_certificates(raw)
        return [x509.load_der_x509_certificate(raw)]
    except (ValueError, TypeError) as e:
        raise InvalidCertificate(f"cannot parse certificate: {e}")


def certificate_pem(cert: x509.Certificate) -> str:
    return cert.public_bytes(serialization.Encoding.PEM).decode("ascii")


@dataclass(frozen=True)
class CertificateBundle:
    """Leaf certificate plus its ordered issuer chain (nearest issuer first)."""

    certificate: x509.Certificate
    chain: Tuple[x509.Certificate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "chain", tuple(self.chain))
        if self.chain and self.certificate.issuer != self.chain[0].subject:
            raise InvalidCertificate("leaf issuer does not match first chain subject")

    @classmethod
    def from_pem(cls, data: Union[str, bytes]) -> "CertificateBundle":
        certs = load_certificates(data)
        if not certs:
            raise InvalidCertificate("no certificate found")
        return cls(certs[0], tuple(certs[1:]))

    @property
    def pem(self) -> str:
        return "".join(certificate_pem(c) for c in (self.certificate, *self.chain))

    @property
    def leaf_pem(self) -> str:
        return certificate_pem(self.certificate)

    @property
    def serial(self) -> int:
        return self.certificate.serial_number

    @property
    def public_key(self) -> PublicKey:
        return self.certificate.public_key()

    @property
    def not_after(self) -> int:
        return not_after(self.certificate)

    def der(self) -> bytes:
        return self.certificate.public_bytes(serialization.Encoding.DER)


# ============================ REVOCATION LISTS ============================ #
@dataclass(frozen=True)
class RevocationList:
    """Signed CRL snapshot."""

    issuer: x509.Name
    revoked: FrozenSet[int]
    issued_at: int
    next_update: int
    pem: str = ""

    def __post_init__(self):
        if self.next_update <= self.issued_at:
            raise InvalidCertificate("CRL next_update must be after issued_at")

    @classmethod
    def from_pem(cls, data: Union[str, bytes]) -> "RevocationList":
        raw = data.encode("ascii") if isinstance(data, str) else data
        try:
            crl = (x509.load_pem_x509_crl(raw) if raw.lstrip().startswith(b"-----BEGIN")
                   else x509.load_der_x509_crl(raw))
        except (ValueError, TypeError) as e:
            raise InvalidCertificate(f"cannot parse CRL: {e}")
        last = getattr(crl, "last_update_utc", None) or crl.last_update
        nxt = getattr(crl, "next_update_utc", None) or crl.next_update
        return cls(
            issuer=crl.issuer,
            revoked=frozenset(r.serial_number for r in crl),
            issued_at=_epoch(last),
            next_update=_epoch(nxt),
            pem=crl.public_bytes(serialization.Encoding.PEM).decode("ascii"),
        )

    def covers(self, cert: x509.Certificate) -> bool:
        """True when this list is authoritative for ``cert`` and names its serial."""
        return cert.issuer == self.issuer and cert.serial_number in self.revoked

    def is_signed_by(self, ca_cert: x509.Certificate) -> bool:
        """Check the CRL signature against an issuing CA certificate."""
        try:
            crl = x509.load_pem_x509_crl(self.pem.encode("ascii"))
            return crl.issuer == ca_cert.subject and crl.is_signature_valid(ca_cert.public_key())
        except Exception:
            return False


@dataclass(frozen=True)
class ChainVerdict:
    """Result of chain verification; falsy when invalid."""

    valid: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


def _is_ca(cert: x509.Certificate) -> bool:
    try:
        return bool(cert.extensions.get_extension_for_class(x509.BasicConstraints).value.ca)
    except x509.ExtensionNotFound:
        return False


def _issued_by(cert: x509.Certificate, issuer: x509.Certificate) -> bool:
    try:
        cert.verify_directly_issued_by(issuer)
        return True
    except (ValueError, TypeError, InvalidSignature):
        return False


def verify_cert_chain(
    bundle: CertificateBundle,
    trusted_ca: x509.Certificate,
    revocation: Union[None, RevocationList, Iterable[RevocationList]] = None,
    now: Optional[float] = None,
) -> ChainVerdict:
    """
    Verify ``bundle`` up to ``trusted_ca``.

    Per certificate, starting at the leaf: expiry, revocation, trust-anchor
    match, then the issuer's signature. The walk ends when a certificate is
    the trust anchor or is directly issued by it.

    Args:
        bundle: leaf + chain
        trusted_ca: trust anchor certificate
        revocation: CRL(s); each applies only to certificates of its issuer
        now: epoch seconds (default: current time)

    Returns:
        ChainVerdict: valid, or invalid with Revoked | Expired | UntrustedRoot | BadSignature
    """
    now = time.time() if now is None else now
    if revocation is None:
        crls: Tuple[RevocationList, ...] = ()
    elif isinstance(revocation, RevocationList):
        crls = (revocation,)
    else:
        crls = tuple(revocation)

    anchor_der = trusted_ca.public_bytes(serialization.Encoding.DER)
    path = [bundle.certificate, *bundle.chain]
    for idx, cert in enumerate(path):
        if not (not_before(cert) <= now <= not_after(cert)):
            return ChainVerdict(False, EXPIRED)
        if any(crl.covers(cert) for crl in crls):
            return ChainVerdict(False, REVOKED)
        if cert.public_bytes(serialization.Encoding.DER) == anchor_der:
            return ChainVerdict(True)
        if idx + 1 < len(path):
            issuer = path[idx + 1]
            if not _is_ca(issuer):
                return ChainVerdict(False, UNTRUSTED_ROOT)
            if not _issued_by(cert, issuer):
                return ChainVerdict(False, BAD_SIGNATURE)
            continue
        # Top of the supplied chain: must be issued by the anchor itself
        if cert.issuer != trusted_ca.subject or not _issued_by(cert, trusted_ca):
            return ChainVerdict(False, UNTRUSTED_ROOT)
        if not _is_ca(trusted_ca):
            return ChainVerdict(False, UNTRUSTED_ROOT)
        if not (not_before(trusted_ca) <= now <= not_after(trusted_ca)):
            return ChainVerdict(False, EXPIRED)
        return ChainVerdict(True)
    return ChainVerdict(False, UNTRUSTED_ROOT)


# =============================== SIGNATURES =============================== #
@dataclass(frozen=True)
class Signature:
    """Detached signature; text form is ``<algorithm>:<base64>``."""

    algorithm: str
    value: bytes

    def __post_init__(self):
        expected = SIGNATURE_LENGTH.get(self.algorithm)
        if expected is None:
            raise UnsupportedAlgorithm(f"unsupported signature algorithm {self.algorithm!r}")
        if len(self.value) != expected:
            raise ValueError(
                f"{self.algorithm} signature must be {expected} bytes, got {len(self.value)}"
            )

    def to_text(self) -> str:
        return f"{self.algorithm}:{base64.b64encode(self.value).decode('ascii')}"

    @classmethod
    def from_text(cls, text: str) -> "Signature":
        """
        Raises:
            ValueError: malformed text
            UnsupportedAlgorithm: unknown algorithm prefix
        """
        if not isinstance(text, str) or ":" not in text:
            raise ValueError("signature must look like '<algorithm>:<base64>'")
        algorithm, encoded = text.split(":", 1)
        return cls(algorithm, base64.b64decode(encoded.encode("ascii"), validate=True))

    def __str__(self) -> str:
        return self.to_text()


def sign(data: bytes, key: PrivateKey) -> Signature:
    """Sign ``data`` (SHA-256 for ECDSA, algorithm-internal for Ed25519)."""
    algorithm = algorithm_of(key)
    if algorithm == ED25519:
        return Signature(ED25519, key.sign(data))
    r, s = decode_dss_signature(key.sign(data, ec.ECDSA(hashes.SHA256())))
    return Signature(ECDSA_P256, r.to_bytes(32, "big") + s.to_bytes(32, "big"))


def verify_signature(data: bytes, sig: Union[Signature, str], public_key: PublicKey) -> bool:
    """True iff ``sig`` is a valid signature over ``data``. Never raises."""
    try:
        if not isinstance(sig, Signature):
            sig = Signature.from_text(sig)
        if algorithm_of(public_key) != sig.algorithm:
            return False
        if sig.algorithm == ED25519:
            public_key.verify(sig.value, data)
        else:
            r = int.from_bytes(sig.value[:32], "big")
            s = int.from_bytes(sig.value[32:], "big")
            public_key.verify(encode_dss_signature(r, s), data, ec.ECDSA(hashes.SHA256()))
        return True
    except Exception:
        return False


# ========================== CERTIFICATE AUTHORITY ========================= #
@dataclass
class _CAState:
    issued: Dict[int, Dict[str, object]] = field(default_factory=dict)
    revoked: Dict[int, int] = field(default_factory=dict)
    crl_number: int = 0

    def to_json(self) -> Dict[str, object]:
        return {
            "issued": {format(k, "x"): v for k, v in self.issued.items()},
            "revoked": {format(k, "x"): v for k, v in self.revoked.items()},
            "crl_number": self.crl_number,
        }

    @classmethod
    def from_json(cls, doc: Dict[str, object]) -> "_CAState":
        return cls(
            issued={int(k, 16): v for k, v in dict(doc.get("issued", {})).items()},
            revoked={int(k, 16): int(v) for k, v in dict(doc.get("revoked", {})).items()},
            crl_number=int(doc.get("crl_number", 0)),
        )


class CertificateAuthority:
    """
    Issuing CA context.

    Issuance and revocation serialize on an internal lock. Issued and
    revoked serials persist to a JSON state file when ``state_path`` is set.
    """

    def __init__(
        self,
        certificate: x509.Certificate,
        private_key: PrivateKey,
        chain: Iterable[x509.Certificate] = (),
        clock: Clock = time.time,
        state_path: Optional[str] = None,
        crl_validity_seconds: int = CRL_VALIDITY_SECONDS,
    ):
        self.certificate = certificate
        self.private_key = private_key
        self.chain = tuple(chain)
        self.clock = clock
        self.state_path = state_path
        self.crl_validity_seconds = crl_validity_seconds
        self._lock = threading.RLock()
        self._state = self._load_state()
        self._crl: Optional[RevocationList] = None

    # ------------------------------------------------------------ creation
    @classmethod
    def create_root(
        cls,
        common_name: str = "ANS Root CA",
        algorithm: str = DEFAULT_SIGNATURE_ALGORITHM,
        validity_days: int = CA_VALIDITY_DAYS,
        clock: Clock = time.time,
        organization: str = "Agent Name Service",
        **kwargs,
    ) -> "CertificateAuthority":
        key, public_key = generate_keypair(algorithm)
        dn = x509.Name([
            x509.NameAttribute(NameOID.COMMON_NAME, common_name),
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, organization),
        ])
        now = clock()
        cert = (
            x509.CertificateBuilder()
            .subject_name(dn)
            .issuer_name(dn)
            .public_key(public_key)
            .serial_number(x509.random_serial_number())
            .not_valid_before(_utc(now))
            .not_valid_after(_utc(now + validity_days * 86400))
            .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
            .add_extension(_ca_key_usage(), critical=True)
            .add_extension(x509.SubjectKeyIdentifier.from_public_key(public_key), critical=False)
            .sign(key, _hash_for(key))
        )
        logger.info(f"[CA] Created root CA {dn.rfc4514_string()} serial={cert.serial_number:x}")
        return cls(cert, key, clock=clock, **kwargs)

    def create_intermediate(
        self,
        common_name: str,
        algorithm: str = DEFAULT_SIGNATURE_ALGORITHM,
        validity_days: int = CA_VALIDITY_DAYS,
        **kwargs,
    ) -> "CertificateAuthority":
        """Issue a subordinate CA signed by this one."""
        key, _ = generate_keypair(algorithm)
        dn = x509.Name([
            x509.NameAttribute(NameOID.COMMON_NAME, common_name),
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Agent Name Service"),
        ])
        csr = create_csr(key, dn)
        bundle = self.issue_certificate(csr, validity_days, is_ca=True)
        return CertificateAuthority(
            bundle.certificate, key, chain=(self.certificate, *self.chain),
            clock=self.clock, **kwargs,
        )

    @classmethod
    def load_or_create(
        cls,
        directory: str,
        passphrase: Optional[bytes],
        clock: Clock = time.time,
        algorithm: str = DEFAULT_SIGNATURE_ALGORITHM,
        common_name: str = "ANS Root CA",
    ) -> "CertificateAuthority":
        """Load the CA from ``directory`` or bootstrap a new root there."""
        os.makedirs(directory, exist_ok=True)
        cert_path = os.path.join(directory, "ca_cert.pem")
        key_path = os.path.join(directory, "ca_key.pem")
        state_path = os.path.join(directory, "ca_state.json")
        if os.path.exists(cert_path) and os.path.exists(key_path):
            with open(cert_path, "rb") as f:
                cert = load_certificates(f.read())[0]
            key = load_private_key(key_path, passphrase)
            logger.info(f"[CA] Loaded CA from {directory}")
            return cls(cert, key, clock=clock, state_path=state_path)
        ca = cls.create_root(common_name, algorithm, clock=clock, state_path=state_path)
        with open(cert_path, "w", encoding="ascii") as f:
            f.write(certificate_pem(ca.certificate))
        save_private_key(ca.private_key, key_path, passphrase)
        ca._save_state()
        return ca

    # --------------------------------------------------------------- state
    def _load_state(self) -> _CAState:
        if self.state_path and os.path.exists(self.state_path):
            try:
                with open(self.state_path, "r", encoding="utf-8") as f:
                    return _CAState.from_json(json.load(f))
            except (OSError, ValueError) as e:
                raise ConfigError(f"cannot read CA state {self.state_path}: {e}")
        return _CAState()

    def _save_state(self) -> None:
        if not self.state_path:
            return
        tmp = f"{self.state_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self._state.to_json(), f, indent=2, sort_keys=True)
        os.replace(tmp, self.state_path)

    @property
    def bundle(self) -> CertificateBundle:
        return CertificateBundle(self.certificate, self.chain)

    def is_issued(self, serial: int) -> bool:
        return serial in self._state.issued

    def is_revoked(self, serial: int) -> bool:
        return serial in self._state.revoked

    @property
    def revoked_serials(self) -> FrozenSet[int]:
        return frozenset(self._state.revoked)

    # ------------------------------------------------------------ issuance
    def issue_certificate(
        self,
        csr: x509.CertificateSigningRequest,
        validity_days: int = CERT_VALIDITY_DAYS,
        is_ca: bool = False,
    ) -> CertificateBundle:
        """
        Sign ``csr`` into a certificate valid from now for ``validity_days``.

        Raises:
            InvalidCSR: CSR self-signature does not verify
        """
        if not verify_csr(csr):
            raise InvalidCSR("CSR signature does not verify")
        if validity_days <= 0:
            raise InvalidCSR("validity_days must be positive")
        public_key = csr.public_key()
        try:
            algorithm_of(public_key)
        except UnsupportedAlgorithm as e:
            raise InvalidCSR(str(e))

        with self._lock:
            serial = x509.random_serial_number()
            while serial in self._state.issued:
                serial = x509.random_serial_number()
            now = int(self.clock())
            builder = (
                x509.CertificateBuilder()
                .subject_name(csr.subject)
                .issuer_name(self.certificate.subject)
                .public_key(public_key)
                .serial_number(serial)
                .not_valid_before(_utc(now))
                .not_valid_after(_utc(now + validity_days * 86400))
                .add_extension(
                    x509.AuthorityKeyIdentifier.from_issuer_public_key(
                        self.certificate.public_key()),
                    critical=False,
                )
                .add_extension(x509.SubjectKeyIdentifier.from_public_key(public_key),
                               critical=False)
            )
            if is_ca:
                builder = builder.add_extension(
                    x509.BasicConstraints(ca=True, path_length=None), critical=True
                ).add_extension(_ca_key_usage(), critical=True)
            else:
                builder = builder.add_extension(
                    x509.BasicConstraints(ca=False, path_length=None), critical=True
                ).add_extension(_leaf_key_usage(), critical=True)
            cert = builder.sign(self.private_key, _hash_for(self.private_key))
            self._state.issued[serial] = {
                "subject": csr.subject.rfc4514_string(),
                "not_after": now + validity_days * 86400,
            }
            self._save_state()
        logger.info(
            f"[CA] Issued certificate serial={serial:x} to {csr.subject.rfc4514_string()}"
        )
        return CertificateBundle(cert, (self.certificate, *self.chain))

    # ---------------------------------------------------------- revocation
    def revoke_certificate(self, serial: int) -> RevocationList:
        """
        Add ``serial`` to the CRL. Idempotent; entries are never removed.

        Raises:
            UnknownSerial: serial never issued by this CA
        """
        with self._lock:
            if serial not in self._state.issued:
                raise UnknownSerial(f"serial {serial:x} was not issued by this CA")
            if serial in self._state.revoked and self._crl is not None:
                if self.clock() < self._crl.next_update:
                    return self._crl
                return self._sign_crl()
            self._state.revoked.setdefault(serial, int(self.clock()))
            self._save_state()
            crl = self._sign_crl()
        logger.warning(f"[CA] Revoked certificate serial={serial:x}")
        return crl

    @property
    def crl(self) -> RevocationList:
        """Current CRL, re-signed once its next_update has passed."""
        with self._lock:
            if self._crl is None or self.clock() >= self._crl.next_update:
                return self._sign_crl()
            return self._crl

    def _sign_crl(self) -> RevocationList:
        now = int(self.clock())
        self._state.crl_number += 1
        builder = (
            x509.CertificateRevocationListBuilder()
            .issuer_name(self.certificate.subject)
            .last_update(_utc(now))
            .next_update(_utc(now + self.crl_validity_seconds))
            .add_extension(x509.CRLNumber(self._state.crl_number), critical=False)
        )
        for serial, revoked_at in sorted(self._state.revoked.items()):
            builder = builder.add_revoked_certificate(
                x509.RevokedCertificateBuilder()
                .serial_number(serial)
                .revocation_date(_utc(revoked_at))
                .build()
            )
        crl = builder.sign(self.private_key, _hash_for(self.private_key))
        self._save_state()
        self._crl = RevocationList(
            issuer=self.certificate.subject,
            revoked=frozenset(self._state.revoked),
            issued_at=now,
            next_update=now + self.crl_validity_seconds,
            pem=crl.public_bytes(serialization.Encoding.PEM).decode("ascii"),
        )
        return self._crl


def _ca_key_usage() -> x509.KeyUsage:
    return x509.KeyUsage(
        digital_signature=True, content_commitment=False, key_encipherment=False,
        data_encipherment=False, key_agreement=False, key_cert_sign=True,
        crl_sign=True, encipher_only=False, decipher_only=False,
    )


def _leaf_key_usage() -> x509.KeyUsage:
    return x509.KeyUsage(
        digital_signature=True, content_commitment=False, key_encipherment=False,
        data_encipherment=False, key_agreement=False, key_cert_sign=False,
        crl_sign=False, encipher_only=False, decipher_only=False,
    )


def issue_certificate(
    csr: x509.CertificateSigningRequest,
    ca: CertificateAuthority,
    validity_days: int = CERT_VALIDITY_DAYS,
) -> CertificateBundle:
    """Module-level form of ``CertificateAuthority.issue_certificate``."""
    return ca.issue_certificate(csr, validity_days)


def revoke_certificate(serial: int, ca: CertificateAuthority) -> RevocationList:
    """Module-level form of ``CertificateAuthority.revoke_certificate``."""
    return ca.revoke_certificate(serial)
