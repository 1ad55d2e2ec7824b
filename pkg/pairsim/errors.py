class PairsimError(Exception):
    def __init__(self, message=None, code=None):
        super().__init__(message)
        self.message = message
        self.code = code

    def __str__(self):
        return str(self.message)

    @classmethod
    def from_exception(cls, e):
        message = getattr(e, "message", None) or str(e) or e.__class__.__name__
        return cls(message, getattr(e, "code", None))


class DomainError(PairsimError):
    pass


class ConfigurationError(PairsimError):
    pass


class CoverageError(PairsimError):
    pass


class DegenerateError(PairsimError):
    pass


class CalibrationError(PairsimError):
    pass


class UndefinedVisibilityError(DegenerateError):
    pass


class FormatError(PairsimError):
    def __init__(self, message=None, offset=None):
        super().__init__(message)
        self.offset = offset

    def __str__(self):
        if self.offset is None:
            return str(self.message)
        return "{} (at byte offset {})".format(self.message, self.offset)
