"""Exception hierarchy shared by every clc module."""


class ClcError(ValueError):
    """Base class. ``exit_code`` is what the CLI returns when this escapes."""

    exit_code = 1


class ParseError(ClcError):
    exit_code = 3


class ShapeMismatch(ClcError):
    exit_code = 4


class MissingEmbedding(ClcError):
    exit_code = 5


class EmptyCorpus(ClcError):
    exit_code = 6


class EmptyInput(ClcError):
    pass


class ZeroNorm(ClcError):
    pass


class NonFinite(ClcError):
    pass


class TraceMismatch(ShapeMismatch):
    pass


class NotNormalized(ClcError):
    pass


class BatchTooSmall(ClcError):
    pass


class NoAlternativeHypothesis(ClcError):
    pass


class BadChunkSize(ClcError):
    pass


class EmptyErrorPool(ClcError):
    pass


class NoTemplateApplies(ClcError):
    pass


class EmptyText(ClcError):
    pass


class ZeroBaseline(ClcError):
    pass


class EmptyNBest(ClcError):
    pass
