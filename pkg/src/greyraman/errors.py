"""Exception hierarchy shared by every module."""


class RamanError(Exception):
    """Base class for all errors raised by greyraman."""


class DimensionMismatch(RamanError, ValueError):
    pass


class NonConvergence(RamanError):
    """Counter-propagating boundary iteration hit its iteration cap."""


class NumericBlowup(RamanError):
    """A power became non-finite or clearly negative during integration."""


class SchemaError(RamanError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RankDeficient(RamanError):
    """The transfer regression design matrix has rank < 3."""


class UnpairedRecord(RamanError, KeyError):
    pass


class EmptyInput(RamanError, ValueError):
    pass


class ConfigError(RamanError, ValueError):
    pass
