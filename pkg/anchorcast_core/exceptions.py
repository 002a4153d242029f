# anchorcast/anchorcast_core/exceptions.py


class AnchorcastError(Exception):
    """Base class for every error raised by anchorcast_core."""


class InputValidationError(AnchorcastError):
    """Bad user input: malformed files, invalid datasets or configs. CLI exit code 1."""


class JointMappingError(InputValidationError):
    def __init__(self, message, label=None):
        super().__init__(message)
        self.label = label


class JointFileError(InputValidationError):
    def __init__(self, message, line_number=None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class CameraFileError(InputValidationError):
    def __init__(self, message, path=None):
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class DatasetValidationError(InputValidationError):
    def __init__(self, message, offenders=None):
        self.offenders = list(offenders or [])
        if self.offenders:
            message = f"{message}: {', '.join(str(o) for o in self.offenders)}"
        super().__init__(message)


class ConfigError(InputValidationError):
    def __init__(self, message, key=None):
        if key is not None:
            message = f"'{key}': {message}"
        super().__init__(message)
        self.key = key


class ShapeMismatchError(AnchorcastError, ValueError):
    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"[{layer}] {message}"
        super().__init__(message)
        self.layer = layer


class ScheduleError(AnchorcastError, ValueError):
    pass


class TrainingDivergedError(AnchorcastError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({details})"
        super().__init__(message)


class FreezeViolationError(AnchorcastError):
    def __init__(self, message, parameter_names=None):
        self.parameter_names = list(parameter_names or [])
        if self.parameter_names:
            message = f"{message}: {', '.join(self.parameter_names)}"
        super().__init__(message)


class CheckpointError(AnchorcastError):
    pass


class MetricError(AnchorcastError, ValueError):
    pass
