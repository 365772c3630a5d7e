"""Exception types shared across the package."""


class ItnError(Exception):
    """Base class for all errors raised by streamitn."""


class ConfigurationError(ItnError):
    """Incompatible components were combined (symbol tables, inventories, chunk sizes)."""


class RuleSyntaxError(ItnError):
    def __init__(self, message, line=None, column=None, filename=None):
        self.message = message
        self.line = line
        self.column = column
        self.filename = filename
        super().__init__(str(self))

    def __str__(self):
        where = ""
        if self.filename:
            where = f"{self.filename}:"
        if self.line is not None:
            where += f"{self.line}:{self.column}:"
        return f"{where} {self.message}" if where else self.message


class RuleReferenceError(ItnError):
    """A rule references an undefined rule or participates in a cycle."""


class PackError(ItnError):
    """A grammar pack could not be loaded; ``errors`` holds per-file messages."""

    def __init__(self, message, errors=()):
        self.errors = list(errors)
        detail = "\n".join(self.errors)
        super().__init__(f"{message}\n{detail}" if detail else message)


class FormatError(ItnError):
    """A serialized file has a bad magic number, version, or checksum."""
