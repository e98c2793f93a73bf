"""Exception hierarchy shared by every module."""


class VLError(ValueError):
    """Base class for all toolkit errors."""


class ConfigError(VLError):
    pass


class RangeError(VLError):
    pass


class TokenClassError(VLError):
    """An id was looked up in a range it does not belong to."""


class ParseError(VLError):
    """Structured-output parse failure.

    ``rule`` names the violated grammar rule and ``offset`` is the token
    position where parsing stopped.
    """

    def __init__(self, rule: str, offset: int, detail: str = ""):
        self.rule = rule
        self.offset = offset
        self.detail = detail
        msg = f"{rule} at token {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ShapeError(VLError):
    pass


class CodecError(VLError):
    def __init__(self, message: str, position: int = -1):
        self.position = position
        if position >= 0:
            message = f"{message} (at char {position})"
        super().__init__(message)


class CategoryError(VLError):
    pass


class NumericError(VLError):
    pass


class CapacityError(VLError):
    pass


class TrainingError(VLError):
    pass


class ContractError(VLError):
    pass


class DomainError(VLError):
    pass


class MatchError(VLError):
    pass
