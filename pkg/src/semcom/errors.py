"""Exception hierarchy shared by every semcom module."""


class SemcomError(Exception):
    pass


class ValidationError(SemcomError, ValueError):
    """Invalid configuration; ``fields`` lists the offending names."""

    def __init__(self, message: str, fields=()):
        self.fields = list(fields)
        if self.fields:
            message = f"{message} (fields: {', '.join(self.fields)})"
        super().__init__(message)


class DimensionError(SemcomError, ValueError):
    pass


class ContractError(SemcomError, ValueError):
    pass


class NumericError(SemcomError, ArithmeticError):
    pass


class ChannelOutageError(SemcomError):
    pass
