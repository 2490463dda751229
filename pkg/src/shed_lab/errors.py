"""Exception hierarchy for shed-lab.

Two marker bases split the tree by CLI exit code: ``ValidationError``
(bad inputs, exit 2) and ``ComputeError`` (failure mid-computation,
exit 3).
"""


class ShedLabError(Exception):
    """Base class for every shed-lab error."""


class ValidationError(ShedLabError):
    """Inputs rejected before computation starts."""


class ComputeError(ShedLabError):
    """Computation started and could not finish."""


class DegenerateEmbedding(ComputeError):
    """A vector with (near-)zero norm where a direction is required."""


class EmptyInput(ValidationError):
    """An operation received an empty sequence."""


class DimMismatch(ValidationError):
    """Vectors of different dimension were combined."""


class InvalidTemperature(ValidationError):
    """Softmax temperature must be strictly positive."""


class UnknownDomain(ValidationError):
    """Domain id outside the dataset's declared domains."""


class EmptyDomain(ValidationError):
    """Domain has fewer than two samples; its centroid would be trivial."""


class MissingTemplateClassPair(ValidationError):
    """A (template, class) text vector required by the bank is absent."""


class EmptyPool(ValidationError):
    """Sample pool for similarity-weighted projection is empty."""


class LengthMismatch(ValidationError):
    """Parallel sequences have different lengths."""


class InvalidDistribution(ValidationError):
    """Probability vector has negative entries or does not sum to one."""


class NonFiniteLoss(ComputeError):
    """Training produced a NaN or infinite loss."""


class InvalidConfig(ValidationError):
    """Configuration value out of range or inconsistent."""


class ParseError(ValidationError):
    """A data file is malformed; message names the offending line."""


class SchemaVersionMismatch(ValidationError):
    """File declares a schema version this build does not read."""


class EmptyDataset(ValidationError):
    """Evaluation requires at least one sample."""


class EmptyClass(ValidationError):
    """A class has no samples where a class centroid is required."""
