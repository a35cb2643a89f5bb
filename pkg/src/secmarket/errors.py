"""Exception hierarchy shared by every module of the market simulator."""


class MarketError(Exception):
    """Base class for all errors raised by ``secmarket``."""


class RangeError(MarketError, ValueError):
    """A value falls outside the representable fixed-point range."""


class DimensionError(MarketError, ValueError):
    """Vector or array shapes do not agree."""


class ConfigError(MarketError, ValueError):
    """A configuration violates one of its constraints."""


class DataError(MarketError, ValueError):
    """Not enough (or malformed) data for the requested operation."""


class RosterError(MarketError):
    """Invalid roster for key exchange (too small or duplicate addresses)."""


class ProtocolError(MarketError):
    """The masking protocol was driven with missing inputs."""


class StateError(MarketError):
    """Method called in a contract state where it is not allowed."""


class AuthError(MarketError):
    """Caller is not permitted to perform the call."""


class EligibilityError(MarketError):
    """Address already contributed to a successfully aggregated round."""


class FullError(MarketError):
    """Round roster already holds N addresses."""


class DuplicateError(MarketError):
    """Address already submitted for this round."""


class NotReadyError(MarketError):
    """Round cannot be finalized yet: submissions missing and no timeout."""


class NoDataError(MarketError):
    """No successful round or no accepted aggregate to work with."""


class ConstraintError(MarketError):
    """m-Krum admissibility constraint violated."""


class ConsistencyError(MarketError):
    """A mask bundle does not satisfy its consistency relations."""
