"""
Exceptions raised by wavediff.

Everything derives from WavediffError, so the command line layer
can map any library failure to the data/validation exit code.
"""


class WavediffError(Exception):
    "Root of all wavediff errors"

    def __init__(self, message, line=None, name=None):
        super().__init__(message)
        self.line = line
        self.name = name

    def __str__(self):
        message = super().__str__()
        if self.line is not None:
            return "line %s: %s" % (self.line, message)
        return message


class ShapeError(WavediffError):
    "Array shape or length does not satisfy a precondition"


class NonFiniteError(WavediffError):
    "NaN or infinity where finite values are required"


class SpectrumError(WavediffError):
    "Spectrum is undefined or not the spectrum of a real signal"


class ConfigError(WavediffError):
    "Bad configuration key, value or combination"


class DatasetError(WavediffError):
    "Malformed dataset or checkpoint file"


class UntrainedError(WavediffError):
    "Operation needs trained parameters"
