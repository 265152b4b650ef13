"""Active collection and historical lookup of SSH fingerprints."""

from passive_ssh.errors import (
    ConnectFailed,
    Malformed,
    NoCommonAlgorithm,
    NotFound,
    NotSsh,
    Oversize,
    PassiveSSHError,
    ProtocolError,
    StorageFailure,
    Timeout,
    Truncated,
)
from passive_ssh.fingerprint import KeyFingerprints, fingerprint_key, hassh_server
from passive_ssh.records import Endpoint, ScanRecord
from passive_ssh.scanner import ScanPolicy, ScanSummary, scan_endpoint, scan_many
from passive_ssh.store import Store

__version__ = "0.1.0"

__all__ = [
    "ConnectFailed",
    "Endpoint",
    "KeyFingerprints",
    "Malformed",
    "NoCommonAlgorithm",
    "NotFound",
    "NotSsh",
    "Oversize",
    "PassiveSSHError",
    "ProtocolError",
    "ScanPolicy",
    "ScanRecord",
    "ScanSummary",
    "StorageFailure",
    "Store",
    "Timeout",
    "Truncated",
    "fingerprint_key",
    "hassh_server",
    "scan_endpoint",
    "scan_many",
]
