"""Exception hierarchy shared by every stage of the pipeline."""


class AlpoError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AlpoError, ValueError):
    pass


class SubtitleParseError(AlpoError, ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EmptyTrackError(SubtitleParseError):
    pass


class TemplateError(AlpoError, ValueError):
    pass


class ResponseFormatError(AlpoError, ValueError):
    pass


class LineCountError(ResponseFormatError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"response has {found} numbered lines, expected {expected}")


class ScoreParseError(AlpoError, ValueError):
    pass


class SelectionError(AlpoError, ValueError):
    pass


class SamplingError(AlpoError, RuntimeError):
    pass


class BackendError(AlpoError, RuntimeError):
    """Transport-level failure talking to a generation or evaluation service."""


class PipelineError(SamplingError):
    def __init__(self, message, line_index=None):
        self.line_index = line_index
        if line_index is not None:
            message = f"line {line_index}: {message}"
        super().__init__(message)


class DegenerateInputError(AlpoError, ValueError):
    pass


class DegenerateBatchError(DegenerateInputError):
    """All reward gaps are zero, so dynamic beta is undefined and the batch is skipped."""


class NumericError(AlpoError, FloatingPointError):
    def __init__(self, message, segment=None):
        self.segment = segment
        if segment is not None:
            message = f"segment {segment}: {message}"
        super().__init__(message)


class VocabularyError(AlpoError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown token"


class AlignmentError(AlpoError, ValueError):
    pass


class UndefinedCorrelationError(AlpoError, ValueError):
    pass
