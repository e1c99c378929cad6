"""Exception hierarchy shared across the package.

The CLI maps each family to its own exit code, so new errors should
subclass one of the three family bases.
"""


class CrtwinError(Exception):
    """Base class for all package errors."""


class ParseError(CrtwinError):
    """Input file could not be read or parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ValidationError(CrtwinError):
    """Input parsed but violates a domain invariant."""


class EmptyArm(ValidationError):
    pass


class UnknownLevel(ValidationError):
    pass


class DuplicateClusterId(ValidationError):
    pass


class InvalidSpec(ValidationError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class InvalidConfig(ValidationError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class InferenceError(CrtwinError):
    """Estimation or inference is undefined for the given data."""


class UndefinedRatio(InferenceError):
    pass


class DegenerateDeletion(InferenceError):
    pass


class InsufficientClusters(InferenceError):
    pass


class UnknownCluster(InferenceError):
    pass
