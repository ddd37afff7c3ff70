"""Exception hierarchy shared by all modules.

The CLI maps these onto distinct exit codes, so each family of failure
(bad configuration, unparsable input, numerical breakdown) gets its own class.
"""


class SgldPrivacyError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SgldPrivacyError, ValueError):
    pass


class ScheduleError(ConfigError):
    pass


class ShapeError(SgldPrivacyError, ValueError):
    pass


class NumericError(SgldPrivacyError, ArithmeticError):
    pass


class ParseError(SgldPrivacyError, ValueError):
    pass


class EncodingError(ParseError):
    """A categorical value was not seen when the encoder was fitted."""


class InputError(SgldPrivacyError, ValueError):
    pass


class StateError(SgldPrivacyError, RuntimeError):
    pass
