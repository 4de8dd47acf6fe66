"""Module of package specific exceptions.

The project design intent is to print error messages to STDERR and return non-zero exit codes when used as a command
line utility (CLI), but raise exceptions when used as a package (API). The only time a stack trace should be printed
when using the CLI is if the exception is unexpected and may represent an internal bug.

:meth:`pvawb.exceptions.PVAWBError` and ``RuntimeError`` exceptions will be caught by the command line utility and
converted to error messages and non-zero return codes. :meth:`pvawb.exceptions.InputFileError` is reported with the
bad input file exit code. Third-party exceptions represent truly unexpected behavior that may be an internal bug and
print a stack trace.

The exception tree mirrors the package modules so that API users can handle graph construction problems, numerical
engine problems, and detection post-processing problems separately.
"""


class PVAWBError(Exception):
    """The base class for PVAWB exceptions. All exceptions that must be caught by the CLI should derive from this
    class.
    """


class APIError(PVAWBError):
    """Raised when an API validation fails, e.g. an argument value is outside the list of acceptable choices. Intended
    to mirror an associated ``argparse`` CLI option validation."""


class ChoicesError(APIError):
    """Raised during API validation that mirrors an ``argparse`` CLI argument with limited choices."""


class InvalidSpecError(APIError):
    """Raised when a block specification fails its channel arithmetic or a parameter is outside its allowed range"""


class InputFileError(PVAWBError):
    """Raised when an input file is missing or does not parse"""


class GraphError(PVAWBError):
    """Base class for layer-graph construction and shape inference errors"""


class ChannelMismatchError(GraphError):
    """Raised when concatenated or added inputs disagree in shape, or a node's channels are inconsistent"""


class GroupMismatchError(ChannelMismatchError):
    """Raised when a convolution group count does not divide its input and output channels"""


class NegativeDimensionError(GraphError):
    """Raised when a kernel is larger than its padded input or any shape dimension drops below one"""


class GraphValidationError(GraphError):
    """Raised when an operation requires a structurally valid graph and validation reports diagnostics"""


class MissingHeadError(GraphError):
    """Raised when a graph rewrite cannot find the classifier layers it targets"""


class UnsupportedKindError(PVAWBError):
    """Raised when an operation does not support a layer kind, e.g. backward through a deconvolution"""


class EngineError(PVAWBError):
    """Base class for tensor engine errors"""


class ShapeMismatchError(EngineError):
    """Raised when a tensor or parameter array does not match the shape expected by its node"""


class NonFiniteValueError(EngineError):
    """Raised when an operation produces or receives NaN or infinite values"""


class NonFiniteLossError(PVAWBError):
    """Raised when the learning rate scheduler receives a NaN or infinite loss"""


class PathExplosionError(PVAWBError):
    """Raised when the number of input-to-node paths exceeds the configured cap"""


class OverflowGuardError(PVAWBError):
    """Raised when a box regression exponent exceeds the overflow guard"""


class InvalidBoxError(APIError):
    """Raised when a box has inverted corners or a detection score is outside [0, 1]"""


class ConvergenceFailureError(PVAWBError):
    """Raised when every singular value decomposition driver fails to converge"""
