class FlowNerfException(Exception):
    """Base exception for the flownerf package"""
    pass

class ContractException(FlowNerfException):
    """Exception for violated call contracts (wrong rank, empty input, ...)"""
    pass

class ShapeException(ContractException):
    """Exception for operands whose shapes do not conform"""
    pass

class NumericException(FlowNerfException):
    """Exception for NaN/Inf produced by an operation"""

    def __init__(self, op, message=None):
        self.op = op
        super().__init__(message or f"Non-finite value produced by op '{op}'")

class ConfigException(FlowNerfException):
    """Exception for invalid configuration (exit code 2)"""
    pass

class ArchitectureException(ConfigException):
    """Exception for layer widths that do not line up at construction time"""
    pass

class SamplingException(FlowNerfException):
    """Exception for pixels requested outside the image"""
    pass

class AlignmentException(FlowNerfException):
    """Exception for degenerate trajectories during similarity alignment"""
    pass

class StorageException(FlowNerfException):
    """Exception for file system errors (exit code 3)"""
    pass

class FormatParseException(StorageException):
    """Exception for malformed binary files"""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {message}")

class MetricException(FlowNerfException):
    """Exception for metrics that have no valid pixels to average"""
    pass
