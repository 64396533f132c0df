"""Exceptions raised by the library. Each maps onto a CLI exit code."""


class TsAucError(Exception):
    """Base class for every error the library raises on purpose."""

    exit_code = 1


class InputError(TsAucError):
    """Missing files, empty directories, nothing to process."""

    exit_code = 1


class ParseError(TsAucError):
    """A CSV row could not be parsed."""

    exit_code = 2

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f" line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class ValidationError(TsAucError):
    """Input parsed but violates an invariant (ordering, finiteness, ranges)."""

    exit_code = 2


class InfeasibleError(TsAucError):
    """The statistics cannot be computed on this data (e.g. a single class)."""

    exit_code = 3
