"""Exception hierarchy.

Errors are grouped into three families so the command line can map them to
distinct exit codes: configuration problems, data problems, and runtime
(pipeline) failures.
"""


class TwinguardError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 4


class ConfigError(TwinguardError):
    exit_code = 2


class DataError(TwinguardError):
    exit_code = 3


class PipelineError(TwinguardError):
    exit_code = 4


# twin graph

class DuplicateTwin(DataError):
    pass


class NotFound(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownSensor(DataError):
    pass


class InvalidValue(DataError, ValueError):
    pass


class IncompleteState(DataError):
    def __init__(self, twin_id, missing):
        self.twin_id = twin_id
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:5])
        more = "" if len(self.missing) <= 5 else f" (+{len(self.missing) - 5} more)"
        super().__init__(f"twin {twin_id} never reported: {shown}{more}")


class SelfRelation(DataError, ValueError):
    pass


# yang

class YangSyntaxError(DataError):
    def __init__(self, line, col, expected, found=None):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        msg = f"line {line}, col {col}: expected {expected}"
        if found is not None:
            msg += f", found {found!r}"
        super().__init__(msg)


class UnsupportedKeyword(DataError):
    def __init__(self, keyword, line):
        self.keyword = keyword
        self.line = line
        super().__init__(f"unsupported YANG keyword {keyword!r} at line {line}")


class PathNotFound(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class PathIsContainer(DataError):
    pass


class DuplicatePath(DataError):
    pass


class CountMismatch(DataError):
    pass


class MissingSensor(DataError, KeyError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"frame has no value for {path}")

    def __str__(self):
        return Exception.__str__(self)


# dataprep

class MissingColumn(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyDataset(DataError):
    pass


class UnmappableLabel(DataError):
    pass


class ClassAbsent(DataError):
    pass


class TooFewSamples(DataError):
    pass


class TargetTooLarge(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class MissingSourceColumn(DataError):
    pass


# feature selection / autofs

class SingleClass(DataError, ValueError):
    pass


class DegenerateShape(DataError, ValueError):
    pass


class EmptyCandidates(PipelineError):
    pass


class AutoFsFailed(PipelineError):
    def __init__(self, message, failures=None):
        self.failures = dict(failures or {})
        super().__init__(message)


# labeling

class DegenerateData(DataError):
    pass


class EmptyCluster(DataError):
    pass


class NumericalCollapse(PipelineError):
    pass


class InsufficientPool(DataError):
    pass


# mlp

class NonFiniteInput(DataError, ValueError):
    pass


class DivergenceDetected(PipelineError):
    pass


class CorruptFile(DataError):
    pass


class SchemaMismatch(DataError):
    pass


# brain

class NoActiveModel(PipelineError):
    pass


class InsufficientWindow(PipelineError):
    pass


# cli / reports

class MissingLogs(DataError):
    pass


class LogFormatError(DataError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")
