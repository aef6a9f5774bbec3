"""Exception hierarchy shared across rydsim."""


class RydsimError(Exception):
    """Base class for all rydsim errors."""


class DomainError(RydsimError, ValueError):
    """An argument lies outside the domain of the operation."""


class GeometryError(RydsimError, ValueError):
    """Atom positions are singular (coincident atoms)."""


class DimensionError(RydsimError, ValueError):
    """Array shapes do not match the level scheme or atom count."""


class NonHermitianError(RydsimError, ValueError):
    """A Hermitian operator was required but the input carries loss terms."""


class NumericError(RydsimError, ArithmeticError):
    """Non-finite values or a failed numerical procedure."""


class FitError(NumericError):
    """A curve fit failed to converge or is degenerate."""


class ConfigError(RydsimError):
    """Base class for configuration problems."""


class ConfigSyntaxError(ConfigError):
    """The document is not well-formed JSON."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(ConfigError):
    """The document does not match the config schema."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class PhysicsError(ConfigError):
    """The config is well-typed but physically invalid."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
