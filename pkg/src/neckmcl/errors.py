"""Exception hierarchy shared by all neckmcl modules.

Each class carries a short ``code`` string; the CLI maps codes to exit
statuses so failures are machine-readable.
"""


class NeckMclError(Exception):
    code = "error"


class InvalidInputError(NeckMclError, ValueError):
    code = "invalid_input"


class ShapeError(InvalidInputError):
    code = "shape"


class DegenerateChannelError(InvalidInputError):
    code = "degenerate_channel"


class DegenerateSessionError(InvalidInputError):
    code = "degenerate_session"


class DegenerateRangeError(InvalidInputError):
    code = "degenerate_range"


class DegenerateVarianceError(InvalidInputError):
    code = "degenerate_variance"


class StateError(NeckMclError, RuntimeError):
    code = "state"


class CalibrationError(NeckMclError):
    code = "calibration"


class ConfigError(NeckMclError):
    code = "config"


class CsvFormatError(NeckMclError):
    code = "csv_format"


class MissingFileError(NeckMclError, FileNotFoundError):
    code = "missing_file"
