# errors.py
# Exception hierarchy shared by every package of the pipeline


class RtgmffError(Exception):
    """Base class for all pipeline errors"""


class ShapeError(RtgmffError, ValueError):
    """Operands of a tensor op do not conform"""


class NonFiniteError(RtgmffError, ArithmeticError):
    """NaN or Inf produced where finite values are required"""


class TapeError(RtgmffError):
    """Misuse of the gradient tape (empty tape, non-scalar loss)"""


class ConfigError(RtgmffError, ValueError):
    """Invalid configuration value or config file"""


class DataError(RtgmffError, ValueError):
    """Invalid cohort, subject or signal data"""


class LayoutError(DataError):
    """Atlas layout does not partition the feature map"""


class TokenError(RtgmffError, ValueError):
    """Malformed or out-of-vocabulary token stream"""


class ReportError(RtgmffError, ValueError):
    """Report rendering or parsing failed"""


class TrainingError(RtgmffError):
    """Training aborted (non-finite loss, empty fold)"""


class CheckpointError(RtgmffError):
    """Checkpoint file is corrupt or does not match the config"""
