"""Error hierarchy shared by every spanrel module.

Each error renders as '<ClassName> <details>' so the CLI can print it verbatim.
"""


class SpanRelError(Exception):
    """Base class for every error raised by spanrel."""

    def __init__(self, message=''):
        self.message = message
        super().__init__(f"{type(self).__name__} {message}".strip())


class ConfigError(SpanRelError):
    pass


# --- brat_io ---------------------------------------------------------------

class BratError(SpanRelError):
    pass


class MalformedLine(BratError):
    def __init__(self, line_no, line=''):
        self.line_no = line_no
        self.line = line
        super().__init__(f"line {line_no}: {line!r}")


class DanglingReference(BratError):
    def __init__(self, rel_id, span_id=''):
        self.rel_id = rel_id
        self.span_id = span_id
        super().__init__(f"{rel_id} references missing span {span_id}")


class OffsetOutOfBounds(BratError):
    def __init__(self, span_id, begin, end, length):
        self.span_id = span_id
        super().__init__(f"{span_id} [{begin}, {end}) outside text of length {length}")


class SurfaceMismatch(BratError):
    def __init__(self, span_id, expected, found):
        self.span_id = span_id
        super().__init__(f"{span_id}: annotated {found!r} but text has {expected!r}")


class TokenMisalignment(BratError):
    def __init__(self, span_id, begin, end):
        self.span_id = span_id
        super().__init__(f"{span_id} [{begin}, {end}) does not align with token boundaries")


class EncodingError(BratError):
    pass


class IoError(BratError):
    pass


# --- schema / import -------------------------------------------------------

class SchemaError(SpanRelError):
    pass


class UnknownTask(SchemaError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"{name!r}")


class UnknownLabel(SchemaError):
    def __init__(self, label, task, where=''):
        self.label = label
        self.task = task
        super().__init__(f"{label!r} is not a {task} label{where}")


class FormatError(SchemaError):
    def __init__(self, file, line, reason=''):
        self.file = str(file)
        self.line = line
        super().__init__(f"line {line}: {reason} ({self.file})")


class InconsistentTree(SchemaError):
    def __init__(self, file, line, reason=''):
        self.file = str(file)
        self.line = line
        super().__init__(f"line {line}: {reason} ({self.file})")


class SpanCrossesSentence(SchemaError):
    def __init__(self, doc_id, ann_id):
        self.doc_id = doc_id
        self.ann_id = ann_id
        super().__init__(f"{ann_id} in {doc_id} crosses a sentence boundary")


# --- numerics --------------------------------------------------------------

class NumericsError(SpanRelError):
    pass


class ShapeMismatch(NumericsError):
    pass


class NonScalarLoss(NumericsError):
    pass


class NonFiniteValue(NumericsError):
    pass


class KeyMismatch(NumericsError):
    pass


class CheckpointError(NumericsError):
    pass


# --- encoder ---------------------------------------------------------------

class EncoderError(SpanRelError):
    pass


class EmptySentence(EncoderError):
    pass


class IndexOutOfRange(EncoderError):
    pass


# --- metrics / training / analysis ----------------------------------------

class MetricError(SpanRelError):
    pass


class DocumentMismatch(MetricError):
    pass


class TrainingError(SpanRelError):
    pass


class EmptyDataset(TrainingError):
    pass


class DivergedLoss(TrainingError):
    pass


class AnalysisError(SpanRelError):
    pass


class NoAttentionLayers(AnalysisError):
    pass


class SentenceSetMismatch(AnalysisError):
    pass


class DegenerateVariance(AnalysisError):
    pass
