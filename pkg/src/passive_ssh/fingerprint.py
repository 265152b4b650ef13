"""hasshServer and host-key fingerprints."""

from __future__ import annotations

import base64
import binascii
import hashlib
import re
from dataclasses import dataclass

from passive_ssh.wire import HostKeyBlob, KexInitSummary

_MD5_COLON = re.compile(r"^[0-9a-f]{2}(:[0-9a-f]{2}){15}$")
_MD5_HEX = re.compile(r"^[0-9a-f]{32}$")


def hassh_server_string(k: KexInitSummary) -> str:
    return ";".join(
        ",".join(names)
        for names in (k.kex_algorithms, k.encryption_s2c, k.mac_s2c, k.compression_s2c)
    )


def hassh_server(k: KexInitSummary) -> str:
    """Lowercase hex MD5 of kex;enc_s2c;mac_s2c;comp_s2c."""
    return hashlib.md5(hassh_server_string(k).encode()).hexdigest()


@dataclass(frozen=True)
class KeyFingerprints:
    algorithm: str
    md5_colon: str
    sha256_b64: str
    base64_blob: str

    @property
    def md5_hex(self) -> str:
        return self.md5_colon.replace(":", "")

    @property
    def blob(self) -> bytes:
        return base64.b64decode(self.base64_blob)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "md5": self.md5_colon,
            "sha256": self.sha256_b64,
            "base64": self.base64_blob,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KeyFingerprints":
        """Rebuild from JSON, recomputing digests from the base64 blob.

        Supplied md5/sha256 values must agree with the blob.
        """
        try:
            blob = base64.b64decode(data["base64"], validate=True)
        except (KeyError, TypeError, binascii.Error) as exc:
            raise ValueError(f"host key needs a valid base64 blob: {exc}") from exc
        fp = fingerprint_key(HostKeyBlob(str(data.get("algorithm", "")), blob))
        md5 = data.get("md5")
        if md5 is not None and normalize_md5(md5) != fp.md5_hex:
            raise ValueError("md5 does not match key blob")
        sha = data.get("sha256")
        if sha is not None and sha.removeprefix("SHA256:").rstrip("=") != fp.sha256_b64:
            raise ValueError("sha256 does not match key blob")
        return fp


def fingerprint_key(h: HostKeyBlob) -> KeyFingerprints:
    md5 = hashlib.md5(h.blob).hexdigest()
    sha = base64.b64encode(hashlib.sha256(h.blob).digest()).decode().rstrip("=")
    return KeyFingerprints(
        algorithm=h.algorithm,
        md5_colon=":".join(md5[i:i + 2] for i in range(0, 32, 2)),
        sha256_b64=sha,
        base64_blob=base64.b64encode(h.blob).decode(),
    )


def normalize_md5(text: str) -> str:
    """Accept ``aa:bb:..``, ``MD5:aa:bb:..`` or bare hex; return bare lowercase hex."""
    value = text.strip().lower().removeprefix("md5:")
    if _MD5_COLON.match(value):
        value = value.replace(":", "")
    if not _MD5_HEX.match(value):
        raise ValueError(f"not an MD5 digest: {text!r}")
    return value


def is_md5_hex(text: str) -> bool:
    return bool(_MD5_HEX.match(text))
