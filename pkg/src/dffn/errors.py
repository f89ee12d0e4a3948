"""Exception hierarchy shared by every dffn module."""


class DffnError(Exception):
    """Base class for all package errors."""


class DataError(DffnError):
    """Bad input data (the CLI maps these to exit code 2)."""


class XmlParseError(DataError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LabelError(DataError, ValueError):
    def __init__(self, raw):
        super().__init__(f"unknown label {raw!r}")
        self.raw = raw


class SchemaError(DataError):
    def __init__(self, element, attribute):
        super().__init__(f"element <{element}> is missing required {attribute!r}")
        self.element = element
        self.attribute = attribute


class UnlabeledError(DataError):
    def __init__(self, answer_id):
        super().__init__(f"answer {answer_id!r} has no gold label")
        self.answer_id = answer_id


class FormatError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DffnError):
    pass


class ShapeError(DffnError, ValueError):
    pass


class StateError(DffnError, RuntimeError):
    pass


class NumericError(DffnError, FloatingPointError):
    pass


class DomainError(DffnError, ValueError):
    pass


class ConceptLookupError(DffnError, KeyError):
    def __str__(self):
        return f"unknown concept {self.args[0]!r}"


class CheckpointVersionError(DffnError):
    pass


class IntegrityError(DffnError):
    pass
