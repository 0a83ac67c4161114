"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line interface:
2 for configuration problems, 3 for data problems, 4 for numeric or
convergence failures.
"""

from __future__ import annotations


class DecisionEvalError(Exception):
    exit_code = 1
    module = "decisioneval"


class ConfigError(DecisionEvalError):
    exit_code = 2
    module = "cli_io"


class IoError(DecisionEvalError):
    exit_code = 3
    module = "cli_io"


class DataError(DecisionEvalError):
    exit_code = 3
    module = "core_model"


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"required column {column!r} is missing")
        self.column = column


class NonBinaryValue(DataError):
    def __init__(self, row: int, column: str, value: object):
        super().__init__(f"row {row}: column {column!r} must be 0 or 1, got {value!r}")
        self.row = row
        self.column = column


class ScoreOutOfRange(DataError):
    def __init__(self, row: int, column: str, value: object):
        super().__init__(f"row {row}: score {column!r} out of range: {value!r}")
        self.row = row
        self.column = column


class MissingValue(DataError):
    def __init__(self, row: int, column: str):
        super().__init__(f"row {row}: missing value in column {column!r}")
        self.row = row
        self.column = column


class UnknownLevel(DataError):
    def __init__(self, row: int, column: str, value: object):
        super().__init__(f"row {row}: undeclared level {value!r} for covariate {column!r}")
        self.row = row
        self.column = column


class EmptyArm(DataError):
    def __init__(self, arm: int, context: str = ""):
        msg = f"treatment arm z={arm} has no records"
        super().__init__(msg + (f" ({context})" if context else ""))
        self.arm = arm


class EmptySubgroup(DataError):
    module = "point_estimator"


class EmptyCell(DataError):
    module = "nuisance"


class MissingScoreContext(DataError):
    module = "nuisance"


class MissingAConditionalFit(DataError):
    module = "bounds"


class IncoherentInput(DataError):
    module = "bounds"


class RuleRangeError(DataError):
    module = "bounds"


class MissingScores(DataError):
    module = "policy_learning"


class UnknownCell(DataError):
    module = "policy_learning"


class InfeasibleObservables(DataError):
    module = "sim_oracle"


class NumericError(DecisionEvalError):
    exit_code = 4


class NonConvergence(NumericError):
    module = "nuisance"


class ContradictoryRejection(NumericError):
    module = "preference_analysis"
