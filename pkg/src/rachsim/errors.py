"""Configuration errors shared across modules."""

from __future__ import annotations


class ValidationError(ValueError):
    """A configuration value violates a constraint. ``key`` is the dotted key path."""

    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")


class ParseError(ValueError):
    """A scenario or sweep file could not be parsed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def check(cond: bool, key: str, constraint: str) -> None:
    if not cond:
        raise ValidationError(key, constraint)
