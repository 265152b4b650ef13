"""Client half of the key exchanges used to elicit a server host key.

Only the initiation message is built and the reply parsed. No shared secret
is derived and the exchange-hash signature is not checked.
"""

from __future__ import annotations

import secrets

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec, x25519

from passive_ssh import wire
from passive_ssh.errors import Malformed, NoCommonAlgorithm, ProtocolError

# RFC 3526 group 14, 2048-bit MODP
GROUP14_P = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)
GROUP14_G = 2

SUPPORTED_KEX = (
    "curve25519-sha256",
    "curve25519-sha256@libssh.org",
    "ecdh-sha2-nistp256",
    "diffie-hellman-group14-sha256",
)

# the six key types worth collecting, plus the RSA signature aliases
SUPPORTED_HOSTKEY_ALGORITHMS = (
    "ssh-ed25519",
    "ecdsa-sha2-nistp256",
    "ecdsa-sha2-nistp384",
    "ecdsa-sha2-nistp521",
    "rsa-sha2-512",
    "rsa-sha2-256",
    "ssh-rsa",
    "ssh-dss",
)


def kex_init_payload(kex_name: str) -> bytes:
    """Fresh ephemeral public value wrapped in the client's initiation message."""
    if kex_name in ("curve25519-sha256", "curve25519-sha256@libssh.org"):
        public = x25519.X25519PrivateKey.generate().public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return bytes([wire.MSG_KEX_ECDH_INIT]) + wire.string(public)
    if kex_name == "ecdh-sha2-nistp256":
        public = ec.generate_private_key(ec.SECP256R1()).public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint
        )
        return bytes([wire.MSG_KEX_ECDH_INIT]) + wire.string(public)
    if kex_name == "diffie-hellman-group14-sha256":
        x = secrets.randbelow((GROUP14_P - 1) // 2 - 2) + 2
        e = pow(GROUP14_G, x, GROUP14_P)
        return bytes([wire.MSG_KEX_ECDH_INIT]) + wire.mpint(e)
    raise NoCommonAlgorithm(f"unsupported key exchange {kex_name!r}")


def parse_kex_reply(payload: bytes, kex_name: str) -> wire.HostKeyBlob:
    """Extract K_S from a KEXDH/KEX_ECDH reply; the remaining fields must parse."""
    if not payload or payload[0] != wire.MSG_KEX_ECDH_REPLY:
        got = payload[0] if payload else None
        raise ProtocolError(f"expected key exchange reply ({wire.MSG_KEX_ECDH_REPLY}), got message {got}")
    try:
        r = wire.Reader(payload, 1)
        host_key = r.string()
        if kex_name == "diffie-hellman-group14-sha256":
            r.mpint()
        else:
            r.string()
        signature = wire.Reader(r.string())
        signature.string()
        signature.string()
        return wire.parse_hostkey_blob(host_key)
    except Malformed as exc:
        raise ProtocolError(f"malformed key exchange reply: {exc}") from exc


def describe_disconnect(payload: bytes) -> str:
    try:
        r = wire.Reader(payload, 1)
        code = r.uint32()
        reason = r.string().decode("utf-8", errors="replace")
        return f"server disconnected ({code}): {reason}"
    except Malformed:
        return "server disconnected"
