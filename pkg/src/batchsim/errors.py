"""Exception hierarchy shared across the simulator."""


class BatchSimError(Exception):
    """Base class for every error raised by batchsim."""


class EncodingError(BatchSimError):
    pass


class DecodingError(EncodingError):
    pass


class InvalidKeyError(BatchSimError):
    """Invalid key material, e.g. an all-zero seed."""


class SignatureError(BatchSimError):
    pass


class ProtocolError(BatchSimError):
    pass


class Retry(BatchSimError):
    """The request cannot be served now; the caller should try again later."""


class NoBatch(BatchSimError):
    """No batch can be formed from the current selection."""


class DispatchError(BatchSimError):
    """Malformed batch framing; the whole transaction reverts."""


class ModeViolation(BatchSimError):
    pass


class AccessDenied(BatchSimError):
    pass


class Revert(BatchSimError):
    pass


class RewriteError(BatchSimError):
    pass


class Rejected(BatchSimError):
    """A transaction was refused by the chain (bad signature or nonce)."""


class TraceError(BatchSimError):
    pass


class NoInclusion(BatchSimError):
    pass


class DomainError(BatchSimError, ValueError):
    pass


class Unprofitable(BatchSimError):
    pass


class NoViableU(BatchSimError):
    pass


class MeterError(BatchSimError):
    pass


class Oversize(BatchSimError):
    pass


class PricingError(BatchSimError):
    pass


class ParseError(BatchSimError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(BatchSimError):
    pass
