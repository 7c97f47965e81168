"""Exception hierarchy shared by every stage of the pipeline."""
from __future__ import annotations


class IdmcovError(Exception):
    """Base class; the CLI maps any subclass to a pipeline failure."""


class SourceError(IdmcovError):
    """An error tied to a location in a source file."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str | None = None, expected: tuple[str, ...] = ()):
        self.message = message
        self.line = line
        self.column = column
        self.source = source
        self.expected = tuple(expected)
        super().__init__(self._format())

    def _format(self) -> str:
        where = self.source or "<input>"
        if self.line is not None:
            where += f":{self.line}:{self.column}"
        text = f"{where}: {self.message}"
        if self.expected:
            text += " (expected " + ", ".join(sorted(set(self.expected))) + ")"
        return text


class LexError(SourceError):
    pass


class SyntaxError_(SourceError):
    """Parse failure; named with a trailing underscore to avoid shadowing the builtin."""


class SchemaError(SourceError):
    """Structural problem found while building an IDM schema (duplicates, unknown levels)."""


class SchemaValidationError(IdmcovError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class DdlCycleError(IdmcovError):
    def __init__(self, cycle: list[str]):
        self.cycle = cycle
        super().__init__("cyclic foreign-key dependency: " + " -> ".join(cycle + cycle[:1]))


class ResolveError(IdmcovError):
    """An attribute or entity reference could not be resolved on a path."""

    def __init__(self, message: str, candidates: tuple[str, ...] = ()):
        self.candidates = candidates
        super().__init__(message)


class BindError(SourceError):
    pass


class CompileError(IdmcovError):
    pass


class DerivationError(IdmcovError):
    pass


class DatasetError(IdmcovError):
    pass


class MaterializeError(IdmcovError):
    pass


class BudgetError(IdmcovError):
    """The reference interpreter refused an input larger than its size budget."""
