"""Exception types shared across the toolkit."""


class CoinferError(Exception):
    pass


class DomainError(CoinferError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ShapeError(CoinferError, ValueError):
    pass


class EmptyInputError(CoinferError, ValueError):
    pass


class DegenerateFitError(CoinferError, ValueError):
    pass


class ParseError(CoinferError, ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class SchemaError(CoinferError, ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid document:\n" + "\n".join(f"  - {p}" for p in problems))
        self.problems = problems
