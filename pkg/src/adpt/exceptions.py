"""Exception hierarchy shared across the package."""


class AdptError(Exception):
    """Base class for every error raised by adpt."""


class ConfigError(AdptError):
    pass


# imaging
class InvalidImage(AdptError):
    pass


class UnsupportedFormat(AdptError):
    pass


# prompting / sqr
class InvalidLabelForSqr(AdptError):
    """SQR only re-evaluates committed category labels."""


# classify
class ZeroVector(AdptError):
    pass


class DimMismatch(AdptError):
    pass


class EmptyText(AdptError):
    pass


# provider
class ProviderError(AdptError):
    """Any failure talking to a vision-language model backend."""


class AuthMissing(ProviderError):
    pass


class RateLimited(ProviderError):
    pass


class ProviderTimeout(ProviderError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class MalformedResponse(ProviderError):
    pass


# evaluation
class MissingCode(AdptError):
    pass


class UnknownCode(AdptError):
    pass


class EmptyEvaluation(AdptError):
    pass


class LengthMismatch(AdptError):
    pass


class UnknownLabel(AdptError):
    pass


class LogParseError(AdptError):
    def __init__(self, line_number, message):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


# router / orchestrator
class RouterIOError(AdptError):
    pass


class PlacementError(RouterIOError):
    """A sample could not be copied into its folder; it stays where it was."""


class EmptyInput(AdptError):
    pass
