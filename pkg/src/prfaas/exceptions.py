"""Exception types raised across the package."""


class PrfaasError(Exception):
    """Base class for all errors raised by this package."""


class ProfileError(PrfaasError, ValueError):
    pass


class EmptyProfileError(ProfileError):
    pass


class OutOfRangeError(ProfileError):
    """Lookup outside the profiled sequence lengths with extrapolation off."""


class MissingProfileDataError(ProfileError):
    """The profile does not carry the table needed for this lookup."""


class DegenerateDistributionError(PrfaasError, ValueError):
    pass


class DegenerateSplitError(PrfaasError, ValueError):
    """The routing split sends every request down one path."""


class InfeasibleConfigError(PrfaasError, ValueError):
    pass


class InfeasibleSpaceError(PrfaasError, ValueError):
    pass


class ConfigError(PrfaasError, ValueError):
    pass


class PoolExhaustedError(PrfaasError, RuntimeError):
    pass


class UnknownRequestError(PrfaasError, KeyError):
    pass
