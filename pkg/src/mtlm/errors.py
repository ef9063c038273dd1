"""Exception hierarchy shared across the package.

Data-shaped problems (bad corpus, unknown tokens, malformed files) derive from
:class:`DataError`; the CLI maps those to exit code 3 and everything else to 4.
"""


class MTLMError(Exception):
    pass


class DataError(MTLMError):
    pass


class InvalidInputError(DataError, ValueError):
    pass


class OOVError(DataError, KeyError):
    def __init__(self, item):
        super().__init__(f"out-of-vocabulary item: {item!r}")
        self.item = item

    def __str__(self):
        return self.args[0]


class SequenceTooShortError(InvalidInputError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigurationError(DataError):
    pass


class ContractViolation(MTLMError, ValueError):
    pass


class GenerationError(MTLMError, RuntimeError):
    def __init__(self, message, best_incomplete=None):
        super().__init__(message)
        self.best_incomplete = best_incomplete


class DecodeError(MTLMError, RuntimeError):
    def __init__(self, message, best_incomplete=None, trace=None):
        super().__init__(message)
        self.best_incomplete = best_incomplete
        self.trace = trace
