"""Exception hierarchy shared by the wire parser, scanner and store."""

from __future__ import annotations


class PassiveSSHError(Exception):
    """Base class. ``stage`` names the handshake step reached, when known."""

    def __init__(self, message: str = "", stage: str | None = None) -> None:
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "PassiveSSHError":
        if self.stage is None:
            self.stage = stage
        return self

    def __str__(self) -> str:
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class ProtocolError(PassiveSSHError):
    """The peer sent something that is not valid SSH transport traffic."""


class Malformed(ProtocolError):
    pass


class Oversize(Malformed):
    pass


class Truncated(ProtocolError):
    pass


class NotSsh(ProtocolError):
    """The peer did not present an SSH identification line."""


class NoCommonAlgorithm(ProtocolError):
    pass


class ConnectFailed(PassiveSSHError):
    pass


class Timeout(PassiveSSHError, TimeoutError):
    pass


class NotFound(PassiveSSHError, LookupError):
    pass


class StorageFailure(PassiveSSHError):
    pass
