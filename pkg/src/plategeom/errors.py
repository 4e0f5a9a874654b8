"""Exception types. Every error carries a short machine-readable ``code``."""

from __future__ import annotations


class GeometryError(ValueError):
    """Raised when an input violates a geometric precondition."""

    def __init__(self, code: str, message: str = "") -> None:
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class MeshFormatError(GeometryError):
    """A mesh file could not be parsed; ``line`` or ``offset`` locate the problem."""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None) -> None:
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__("format-error", message)


class CorpusError(ValueError):
    """Raised for invalid corpus metadata or configuration."""

    def __init__(self, code: str, message: str = "") -> None:
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)
