"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: input problems (files, CSV
content) exit 2, configuration/shape problems exit 3, anything else 1.
"""


class FraudGraphError(Exception):
    """Base class for all package errors."""


# -- input / data errors (CLI exit code 2) ----------------------------------

class ParseError(FraudGraphError):
    """Malformed input file (wrong cell count, unreadable value)."""


class DataError(FraudGraphError):
    """Well-formed input with illegal content (negative timestamp, ...)."""


# -- configuration / shape errors (CLI exit code 3) --------------------------

class ConfigError(FraudGraphError):
    """Invalid or inconsistent configuration value."""


class SchemaError(FraudGraphError):
    """Column missing from a table or not covered by the schema roles."""


class ShapeError(FraudGraphError):
    """Operand dimensions incompatible with the requested operation."""


# -- internal errors (CLI exit code 1) ---------------------------------------

class NumericError(FraudGraphError):
    """A numeric operation produced NaN or Inf."""


class TapeUsageError(FraudGraphError):
    """Gradient tape misuse, e.g. a second backward pass."""


class GradCheckError(FraudGraphError):
    """Gradient verification could not run (non-deterministic forward)."""


class GraphBuildError(FraudGraphError):
    """Graph construction failed (empty input, infeasible config)."""


class QueryError(FraudGraphError):
    """Invalid graph query (unknown relation, node index out of range)."""


class IntegrityError(FraudGraphError):
    """A graph invariant does not hold."""


class ResampleError(FraudGraphError):
    """Resampling impossible (too few minority samples)."""


class WeightError(FraudGraphError):
    """Class weights undefined (single-class labels)."""


class SplitError(FraudGraphError):
    """Stratified split infeasible for the requested fractions."""


class TrainingError(FraudGraphError):
    """Training aborted (non-finite loss, degenerate training split)."""


class MetricError(FraudGraphError):
    """Metric undefined for the given inputs (single-class AUC)."""
