"""Exception hierarchy shared across vsalab modules."""


class VsaError(ValueError):
    """Base class for every error raised by vsalab."""


class InvalidDimensionError(VsaError):
    pass


class IncompatibleOperandsError(VsaError):
    pass


class UndefinedSimilarityError(VsaError):
    pass


class UndefinedNormalizationError(VsaError):
    pass


class EmptySuperpositionError(VsaError):
    pass


class UnknownSymbolError(VsaError, KeyError):
    pass


class DuplicateKeyError(VsaError):
    pass


class UnknownVariableError(VsaError):
    pass


class ShapeError(VsaError):
    pass


class VocabularyError(VsaError):
    pass


class TapeMismatchError(VsaError):
    pass


class ConfigError(VsaError):
    pass


class EvaluatorError(VsaError):
    pass


class ParameterError(VsaError):
    pass


class IllPosedFitError(VsaError):
    pass


class SplitError(VsaError):
    pass


class MappingError(VsaError):
    pass


class DegenerateColumnError(VsaError):
    pass


class GradientCheckError(VsaError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class TrainingDivergedError(VsaError):
    def __init__(self, message, step, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good


class SerializationError(VsaError):
    pass
