"""Cryptographic core: identity keys, envelopes and transport frames.

Algorithm suite
---------------
* Ed25519 signatures, X25519 key agreement.
* AES-256-GCM for envelope payloads, session-key wrapping, locked private
  keys and client<->device transport frames.
* HKDF-SHA-256 for wrapping keys, PBKDF2-HMAC-SHA-256 for passwords.
* SHA-256 fingerprints over the canonical public-key bytes.

Byte layouts
------------
Canonical public key (fingerprint input)::

    0x01 | ed25519_pub[32] | x25519_pub[32] | u16be len(user_id) | user_id utf-8

Revocation signature message::

    fingerprint[32] | b"REVOKE"

Envelope plaintext block (sealed with the session key)::

    plaintext | sender_fpr[32] | ed25519_signature[64]

The signature covers ``b"MEG-SIG-v1\\0" | sender_fpr | u16be count |
recipient fprs... | plaintext`` so a signed message cannot be silently
re-addressed to a different recipient set.

Wrapped session key, one per recipient::

    ephemeral_x25519_pub[32] | nonce[12] | AES-GCM(session_key)[48]

Transport frame, binary form::

    version[1] | u8 len(client_id) | client_id | u8 len(action) | action |
    nonce[12] | ciphertext+tag
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import re
import secrets
import struct
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import (
    AuthFailure,
    InvalidArgument,
    MegError,
    NotARecipient,
    ParseError,
    SignatureInvalid,
    TamperDetected,
)

ENVELOPE_VERSION = 1
FRAME_VERSION = 1
KEYFILE_VERSION = 1
PUBLIC_KEY_VERSION = 1

PBKDF2_ITERATIONS = 200_000
SALT_LEN = 16
NONCE_LEN = 12
KEY_LEN = 32
FPR_LEN = 32
SIG_LEN = 64

TRANSPORT_ACTIONS = frozenset({"encrypt", "decrypt", "result"})

ARMOR_BEGIN = "-----BEGIN MEG MESSAGE-----"
ARMOR_END = "-----END MEG MESSAGE-----"

_SIG_DOMAIN = b"MEG-SIG-v1\x00"
_ENV_AAD_DOMAIN = b"MEG-ENV-v1\x00"
_WRAP_INFO = b"MEG-WRAP-v1\x00"
_FRAME_AAD_DOMAIN = b"MEG-TF-v1\x00"
_LOCK_AAD_DOMAIN = b"MEG-KEY-v1\x00"
_REVOKE_SUFFIX = b"REVOKE"


def b64e(data: bytes) -> str:
    """base64url without padding."""
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64d(text: str) -> bytes:
    if not isinstance(text, str) or not re.fullmatch(r"[A-Za-z0-9_\-]*", text):
        raise ParseError("not base64url text")
    try:
        return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except (binascii.Error, ValueError) as exc:
        raise ParseError(f"bad base64url: {exc}") from None


def _random(n: int) -> bytes:
    try:
        return secrets.token_bytes(n)
    except (OSError, NotImplementedError) as exc:  # pragma: no cover - entropy failure
        raise MegError(f"entropy source failure: {exc}", code="internal-error") from exc


def _raw_public(key: Ed25519PublicKey | X25519PublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def _raw_private(key: Ed25519PrivateKey | X25519PrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )


def _hkdf(secret: bytes, *, salt: bytes | None, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_LEN, salt=salt, info=info).derive(secret)


# ---------------------------------------------------------------------------
# identities and keys
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UserIdentity:
    first_name: str
    last_name: str
    phone: str
    email: str

    def __post_init__(self) -> None:
        if not self.first_name.strip() or not self.last_name.strip():
            raise InvalidArgument("first and last name are required")
        if self.email.count("@") != 1:
            raise InvalidArgument(f"not an email address: {self.email!r}")
        local, domain = self.email.split("@")
        if not local or not domain:
            raise InvalidArgument(f"not an email address: {self.email!r}")

    @property
    def user_id(self) -> str:
        return f"{self.first_name} {self.last_name} <{self.email}>"


@dataclass(frozen=True)
class Fingerprint:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != FPR_LEN:
            raise ParseError("fingerprint must be 32 bytes")

    @property
    def hex(self) -> str:
        return self.digest.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Fingerprint":
        if not isinstance(text, str) or not re.fullmatch(r"[0-9a-f]{64}", text):
            raise ParseError(f"bad fingerprint text: {text!r}")
        return cls(bytes.fromhex(text))

    def __str__(self) -> str:
        return self.hex


@dataclass(frozen=True)
class PublicKey:
    """Public half of an identity: signing key, encryption key, user id."""

    sign_key: bytes
    enc_key: bytes
    user_id: str

    def __post_init__(self) -> None:
        if len(self.sign_key) != 32 or len(self.enc_key) != 32:
            raise ParseError("public key components must be 32 bytes")

    def to_bytes(self) -> bytes:
        uid = self.user_id.encode("utf-8")
        if len(uid) > 0xFFFF:
            raise InvalidArgument("user id too long")
        return bytes([PUBLIC_KEY_VERSION]) + self.sign_key + self.enc_key + struct.pack(">H", len(uid)) + uid

    @classmethod
    def from_bytes(cls, data: bytes) -> "PublicKey":
        if not isinstance(data, (bytes, bytearray)) or len(data) < 67:
            raise ParseError("public key too short")
        data = bytes(data)
        if data[0] != PUBLIC_KEY_VERSION:
            raise ParseError(f"unsupported public key version {data[0]}")
        (uid_len,) = struct.unpack(">H", data[65:67])
        if len(data) != 67 + uid_len:
            raise ParseError("public key length mismatch")
        try:
            uid = data[67:].decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("public key user id is not utf-8") from None
        return cls(data[1:33], data[33:65], uid)

    @property
    def email(self) -> str:
        m = re.search(r"<([^<>]+)>\s*$", self.user_id)
        return m.group(1) if m else self.user_id

    @property
    def fingerprint(self) -> Fingerprint:
        return fingerprint(self)


def fingerprint(public_key: PublicKey | bytes) -> Fingerprint:
    """SHA-256 of the canonical public-key bytes."""
    if isinstance(public_key, PublicKey):
        raw = public_key.to_bytes()
    else:
        raw = PublicKey.from_bytes(public_key).to_bytes()
    return Fingerprint(hashlib.sha256(raw).digest())


@dataclass(frozen=True)
class KdfParams:
    salt: bytes
    iterations: int = PBKDF2_ITERATIONS
    algorithm: str = "pbkdf2-hmac-sha256"

    def to_dict(self) -> dict[str, Any]:
        return {"algorithm": self.algorithm, "iterations": self.iterations, "salt": b64e(self.salt)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KdfParams":
        try:
            algorithm = data["algorithm"]
            iterations = int(data["iterations"])
            salt = b64d(data["salt"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad kdf params: {exc}") from None
        if algorithm != "pbkdf2-hmac-sha256" or iterations < 1 or len(salt) < 8:
            raise ParseError("unsupported kdf params")
        return cls(salt=salt, iterations=iterations, algorithm=algorithm)

    def derive(self, password: str) -> bytes:
        return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), self.salt, self.iterations, KEY_LEN)


@dataclass(frozen=True)
class KeyPair:
    """Public key plus password-locked private material.

    ``locked_private`` is ``nonce | AES-GCM(ed25519_seed | x25519_private)``;
    the plaintext private bytes never appear in any serialized form.
    """

    public_key: PublicKey
    locked_private: bytes
    kdf_params: KdfParams
    fingerprint: Fingerprint

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": KEYFILE_VERSION,
            "public_key": b64e(self.public_key.to_bytes()),
            "locked_private": b64e(self.locked_private),
            "kdf_params": self.kdf_params.to_dict(),
            "fingerprint": self.fingerprint.hex,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KeyPair":
        try:
            if data["version"] != KEYFILE_VERSION:
                raise ParseError(f"unsupported key file version {data['version']!r}")
            public_key = PublicKey.from_bytes(b64d(data["public_key"]))
            locked = b64d(data["locked_private"])
            kdf = KdfParams.from_dict(data["kdf_params"])
            fpr = Fingerprint.from_hex(data["fingerprint"])
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed key file: {exc}") from None
        if fpr != fingerprint(public_key):
            raise ParseError("key file fingerprint does not match its public key")
        return cls(public_key, locked, kdf, fpr)

    @classmethod
    def from_json(cls, text: str | bytes) -> "KeyPair":
        try:
            data = json.loads(text)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ParseError(f"key file is not JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ParseError("key file must be a JSON object")
        return cls.from_dict(data)


class UnlockedKey:
    """In-memory private key handle.

    Refuses pickling; ``close()`` wipes the raw bytes it holds and drops the
    key objects, after which every operation raises ``AuthFailure``.
    """

    def __init__(self, public_key: PublicKey, raw_private: bytes, storage_key: bytes):
        self.public_key = public_key
        self.fingerprint = fingerprint(public_key)
        self._raw = bytearray(raw_private)
        self._storage_key = bytearray(storage_key)
        self._sign: Ed25519PrivateKey | None = Ed25519PrivateKey.from_private_bytes(bytes(self._raw[:32]))
        self._enc: X25519PrivateKey | None = X25519PrivateKey.from_private_bytes(bytes(self._raw[32:]))

    @property
    def closed(self) -> bool:
        return self._sign is None

    def _require_open(self) -> None:
        if self._sign is None:
            raise AuthFailure("private key handle is closed")

    def sign(self, message: bytes) -> bytes:
        self._require_open()
        return self._sign.sign(message)

    def exchange(self, peer_public: bytes) -> bytes:
        self._require_open()
        return self._enc.exchange(X25519PublicKey.from_public_bytes(peer_public))

    @property
    def storage_key(self) -> bytes:
        """Password-derived key for encrypting agent-side files."""
        self._require_open()
        return bytes(self._storage_key)

    def close(self) -> None:
        for buf in (self._raw, self._storage_key):
            for i in range(len(buf)):
                buf[i] = 0
        self._sign = None
        self._enc = None

    def export_raw_for_tests(self) -> bytes:
        self._require_open()
        return bytes(self._raw)

    def __reduce__(self):
        raise TypeError("UnlockedKey cannot be serialized")

    def __repr__(self) -> str:
        state = "closed" if self.closed else "open"
        return f"<UnlockedKey {self.fingerprint.hex[:16]} {state}>"


def _lock_aad(fpr: Fingerprint) -> bytes:
    return _LOCK_AAD_DOMAIN + fpr.digest


def _derive_lock_keys(master: bytes) -> tuple[bytes, bytes]:
    kek = _hkdf(master, salt=None, info=b"MEG private key lock")
    storage = _hkdf(master, salt=None, info=b"MEG agent storage")
    return kek, storage


@dataclass(frozen=True)
class RevocationCertificate:
    fingerprint: Fingerprint
    issued_at: float
    self_signature: bytes

    @staticmethod
    def signed_message(fpr: Fingerprint) -> bytes:
        return fpr.digest + _REVOKE_SUFFIX

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": 1,
            "fingerprint": self.fingerprint.hex,
            "issued_at": self.issued_at,
            "self_signature": b64e(self.self_signature),
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> "RevocationCertificate":
        try:
            obj = json.loads(data)
            if obj["version"] != 1:
                raise ParseError("unsupported revocation certificate version")
            return cls(
                Fingerprint.from_hex(obj["fingerprint"]),
                float(obj["issued_at"]),
                b64d(obj["self_signature"]),
            )
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise ParseError(f"malformed revocation certificate: {exc}") from None


def generate_keypair(identity: UserIdentity, password: str) -> tuple[KeyPair, RevocationCertificate]:
    if not password:
        raise InvalidArgument("password must not be empty")
    sign = Ed25519PrivateKey.generate()
    enc = X25519PrivateKey.generate()
    public = PublicKey(_raw_public(sign.public_key()), _raw_public(enc.public_key()), identity.user_id)
    fpr = fingerprint(public)

    kdf = KdfParams(salt=_random(SALT_LEN))
    kek, _ = _derive_lock_keys(kdf.derive(password))
    nonce = _random(NONCE_LEN)
    locked = nonce + AESGCM(kek).encrypt(nonce, _raw_private(sign) + _raw_private(enc), _lock_aad(fpr))

    cert = RevocationCertificate(fpr, time.time(), sign.sign(RevocationCertificate.signed_message(fpr)))
    return KeyPair(public, locked, kdf, fpr), cert


def unlock_private_key(kp: KeyPair, password: str) -> UnlockedKey:
    kek, storage = _derive_lock_keys(kp.kdf_params.derive(password))
    locked = kp.locked_private
    if len(locked) < NONCE_LEN + 16:
        raise AuthFailure("cannot unlock private key")
    try:
        raw = AESGCM(kek).decrypt(locked[:NONCE_LEN], locked[NONCE_LEN:], _lock_aad(kp.fingerprint))
    except InvalidTag:
        raise AuthFailure("cannot unlock private key") from None
    if len(raw) != 64:
        raise AuthFailure("cannot unlock private key")
    key = UnlockedKey(kp.public_key, raw, storage)
    # the sealed bytes must belong to this public key, not merely decrypt
    check_sign = _raw_public(key._sign.public_key())
    check_enc = _raw_public(key._enc.public_key())
    if check_sign != kp.public_key.sign_key or check_enc != kp.public_key.enc_key:
        key.close()
        raise AuthFailure("cannot unlock private key")
    return key


def verify_revocation(cert: RevocationCertificate, public_key: PublicKey | bytes) -> bool:
    try:
        if not isinstance(public_key, PublicKey):
            public_key = PublicKey.from_bytes(public_key)
        if cert.fingerprint != fingerprint(public_key):
            return False
        Ed25519PublicKey.from_public_bytes(public_key.sign_key).verify(
            cert.self_signature, RevocationCertificate.signed_message(cert.fingerprint)
        )
        return True
    except Exception:
        return False


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecipientEntry:
    fpr: Fingerprint
    wrapped_key: bytes


@dataclass(frozen=True)
class MegEnvelope:
    version: int
    sender_fpr: Fingerprint
    recipients: tuple[RecipientEntry, ...]
    nonce: bytes
    ciphertext: bytes

    def header_aad(self) -> bytes:
        parts = [_ENV_AAD_DOMAIN, struct.pack(">BH", self.version, len(self.recipients)), self.sender_fpr.digest]
        for r in self.recipients:
            parts += [r.fpr.digest, struct.pack(">H", len(r.wrapped_key)), r.wrapped_key]
        return b"".join(parts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "sender_fpr": self.sender_fpr.hex,
            "recipients": [{"fpr": r.fpr.hex, "wrapped_key": b64e(r.wrapped_key)} for r in self.recipients],
            "nonce": b64e(self.nonce),
            "ciphertext": b64e(self.ciphertext),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Any) -> "MegEnvelope":
        try:
            if data["version"] != ENVELOPE_VERSION:
                raise ParseError(f"unsupported envelope version {data['version']!r}")
            recipients = tuple(
                RecipientEntry(Fingerprint.from_hex(r["fpr"]), b64d(r["wrapped_key"])) for r in data["recipients"]
            )
            env = cls(
                ENVELOPE_VERSION,
                Fingerprint.from_hex(data["sender_fpr"]),
                recipients,
                b64d(data["nonce"]),
                b64d(data["ciphertext"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed envelope: {exc}") from None
        if not env.recipients:
            raise ParseError("envelope has no recipients")
        if len(env.nonce) != NONCE_LEN:
            raise ParseError("envelope nonce must be 12 bytes")
        return env

    @classmethod
    def from_json(cls, text: str | bytes) -> "MegEnvelope":
        try:
            data = json.loads(text)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ParseError(f"envelope is not JSON: {exc}") from None
        return cls.from_dict(data)

    def armor(self) -> str:
        b64 = base64.b64encode(self.to_json().encode("utf-8")).decode("ascii")
        lines = [b64[i : i + 64] for i in range(0, len(b64), 64)]
        return "\n".join([ARMOR_BEGIN, *lines, ARMOR_END]) + "\n"

    @classmethod
    def dearmor(cls, text: str) -> "MegEnvelope":
        start = text.find(ARMOR_BEGIN)
        end = text.find(ARMOR_END)
        if start < 0 or end < start:
            raise ParseError("no MEG armor block found")
        body = "".join(text[start + len(ARMOR_BEGIN) : end].split())
        try:
            raw = base64.b64decode(body, validate=True)
        except (binascii.Error, ValueError):
            raise ParseError("armor body is not base64") from None
        return cls.from_json(raw)


def is_armored(text: str) -> bool:
    return ARMOR_BEGIN in text and ARMOR_END in text


def _signed_content(sender_fpr: Fingerprint, recipient_fprs: Sequence[Fingerprint], plaintext: bytes) -> bytes:
    parts = [_SIG_DOMAIN, sender_fpr.digest, struct.pack(">H", len(recipient_fprs))]
    parts += [f.digest for f in recipient_fprs]
    parts.append(plaintext)
    return b"".join(parts)


def _wrap_session_key(session_key: bytes, recipient: PublicKey, rfpr: Fingerprint) -> bytes:
    eph = X25519PrivateKey.generate()
    eph_pub = _raw_public(eph.public_key())
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient.enc_key))
    wrap_key = _hkdf(shared, salt=eph_pub + recipient.enc_key, info=_WRAP_INFO + rfpr.digest)
    nonce = _random(NONCE_LEN)
    return eph_pub + nonce + AESGCM(wrap_key).encrypt(nonce, session_key, rfpr.digest)


def _unwrap_session_key(wrapped: bytes, recipient: UnlockedKey) -> bytes:
    if len(wrapped) != 32 + NONCE_LEN + KEY_LEN + 16:
        raise TamperDetected("wrapped session key has the wrong length")
    eph_pub, nonce, sealed = wrapped[:32], wrapped[32:44], wrapped[44:]
    try:
        shared = recipient.exchange(eph_pub)
    except ValueError:
        raise TamperDetected("bad ephemeral key") from None
    rfpr = recipient.fingerprint
    wrap_key = _hkdf(shared, salt=eph_pub + recipient.public_key.enc_key, info=_WRAP_INFO + rfpr.digest)
    try:
        return AESGCM(wrap_key).decrypt(nonce, sealed, rfpr.digest)
    except InvalidTag:
        raise TamperDetected("session key failed authentication") from None


def sign_and_encrypt(plaintext: bytes, sender: UnlockedKey, recipients: Iterable[PublicKey]) -> MegEnvelope:
    """Sign ``plaintext`` with ``sender`` then seal it for every recipient.

    The sender is always added as a recipient so sent mail stays readable.
    """
    recipients = list(recipients)
    if not recipients:
        raise InvalidArgument("at least one recipient is required")
    everyone: list[PublicKey] = []
    seen: set[Fingerprint] = set()
    for pk in [*recipients, sender.public_key]:
        f = fingerprint(pk)
        if f not in seen:
            seen.add(f)
            everyone.append(pk)
    fprs = [fingerprint(pk) for pk in everyone]

    signature = sender.sign(_signed_content(sender.fingerprint, fprs, plaintext))
    session_key = _random(KEY_LEN)
    entries = tuple(RecipientEntry(f, _wrap_session_key(session_key, pk, f)) for pk, f in zip(everyone, fprs))
    nonce = _random(NONCE_LEN)
    shell = MegEnvelope(ENVELOPE_VERSION, sender.fingerprint, entries, nonce, b"")
    block = plaintext + sender.fingerprint.digest + signature
    ciphertext = AESGCM(session_key).encrypt(nonce, block, shell.header_aad())
    return MegEnvelope(ENVELOPE_VERSION, sender.fingerprint, entries, nonce, ciphertext)


def verify_and_decrypt(env: MegEnvelope, recipient: UnlockedKey, sender_pub: PublicKey) -> bytes:
    """Open ``env``; plaintext is released only after the signature checks out."""
    if env.version != ENVELOPE_VERSION:
        raise ParseError(f"unsupported envelope version {env.version}")
    entry = next((r for r in env.recipients if r.fpr == recipient.fingerprint), None)
    if entry is None:
        raise NotARecipient("this key is not among the envelope recipients")
    session_key = _unwrap_session_key(entry.wrapped_key, recipient)
    try:
        block = AESGCM(session_key).decrypt(env.nonce, env.ciphertext, env.header_aad())
    except InvalidTag:
        raise TamperDetected("envelope failed authentication") from None
    if len(block) < FPR_LEN + SIG_LEN:
        raise TamperDetected("envelope payload too short")
    body = block[: -(FPR_LEN + SIG_LEN)]
    inner_fpr = Fingerprint(block[-(FPR_LEN + SIG_LEN) : -SIG_LEN])
    signature = block[-SIG_LEN:]
    expected = fingerprint(sender_pub)
    if inner_fpr != env.sender_fpr or inner_fpr != expected:
        raise SignatureInvalid("message was not signed by the expected sender")
    content = _signed_content(inner_fpr, [r.fpr for r in env.recipients], body)
    try:
        Ed25519PublicKey.from_public_bytes(sender_pub.sign_key).verify(signature, content)
    except InvalidSignature:
        raise SignatureInvalid("signature verification failed") from None
    return body


# ---------------------------------------------------------------------------
# transport frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransportKey:
    key: bytes = field(repr=False)
    client_id: str

    def __post_init__(self) -> None:
        if len(self.key) != KEY_LEN:
            raise InvalidArgument("transport key must be 32 bytes")


def generate_transport_key() -> TransportKey:
    return TransportKey(_random(KEY_LEN), str(uuid.uuid4()))


@dataclass(frozen=True)
class TransportFrame:
    version: int
    client_id: str
    nonce: bytes
    ciphertext: bytes
    aad_tag: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "client_id": self.client_id,
            "nonce": b64e(self.nonce),
            "ciphertext": b64e(self.ciphertext),
            "aad_tag": self.aad_tag,
        }

    @classmethod
    def from_dict(cls, data: Any) -> "TransportFrame":
        try:
            frame = cls(
                int(data["version"]),
                str(data["client_id"]),
                b64d(data["nonce"]),
                b64d(data["ciphertext"]),
                str(data["aad_tag"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed transport frame: {exc}") from None
        if frame.version != FRAME_VERSION or len(frame.nonce) != NONCE_LEN or len(frame.ciphertext) < 16:
            raise ParseError("malformed transport frame")
        return frame

    def to_bytes(self) -> bytes:
        cid = self.client_id.encode("utf-8")
        act = self.aad_tag.encode("utf-8")
        return bytes([self.version, len(cid)]) + cid + bytes([len(act)]) + act + self.nonce + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransportFrame":
        try:
            version, cid_len = data[0], data[1]
            pos = 2 + cid_len
            cid = data[2:pos].decode("utf-8")
            act_len = data[pos]
            act = data[pos + 1 : pos + 1 + act_len].decode("utf-8")
            pos += 1 + act_len
            nonce, ct = data[pos : pos + NONCE_LEN], data[pos + NONCE_LEN :]
        except (IndexError, UnicodeDecodeError):
            raise ParseError("malformed transport frame") from None
        if version != FRAME_VERSION or len(nonce) != NONCE_LEN or len(ct) < 16:
            raise ParseError("malformed transport frame")
        return cls(version, cid, nonce, ct, act)


def _frame_aad(client_id: str, action: str) -> bytes:
    return _FRAME_AAD_DOMAIN + client_id.encode("utf-8") + b"\x00" + action.encode("utf-8")


def transport_encrypt(payload: bytes, key: TransportKey, action: str) -> TransportFrame:
    if action not in TRANSPORT_ACTIONS:
        raise InvalidArgument(f"unknown transport action {action!r}")
    nonce = _random(NONCE_LEN)
    ct = AESGCM(key.key).encrypt(nonce, payload, _frame_aad(key.client_id, action))
    return TransportFrame(FRAME_VERSION, key.client_id, nonce, ct, action)


def transport_decrypt(frame: TransportFrame, key: TransportKey, action: str) -> bytes:
    if action not in TRANSPORT_ACTIONS:
        raise InvalidArgument(f"unknown transport action {action!r}")
    if frame.version != FRAME_VERSION:
        raise ParseError(f"unsupported frame version {frame.version}")
    if frame.aad_tag != action or frame.client_id != key.client_id:
        raise TamperDetected("transport frame bound to a different action or client")
    if len(frame.nonce) != NONCE_LEN:
        raise TamperDetected("transport frame nonce has the wrong length")
    try:
        return AESGCM(key.key).decrypt(frame.nonce, frame.ciphertext, _frame_aad(key.client_id, action))
    except InvalidTag:
        raise TamperDetected("transport frame failed authentication") from None
