"""Error types shared across the workbench.

Every failure a caller may want to branch on is a ``TactError`` subclass with a
stable ``code`` that the CLI prints in its machine-readable error line.
"""


class TactError(Exception):
    """Base class for all workbench errors."""

    code = "TactError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


# Configuration and files
class InvalidConfig(TactError):
    code = "InvalidConfig"


class ConfigMismatch(TactError):
    code = "ConfigMismatch"


class EpisodeFormatError(TactError):
    code = "EpisodeFormatError"


# Biped control
class PlanEmpty(TactError):
    code = "PlanEmpty"


class HorizonExceedsPlan(TactError):
    code = "HorizonExceedsPlan"


class InvalidHorizon(TactError):
    code = "InvalidHorizon"


class NumericalFailure(TactError):
    code = "NumericalFailure"


class WindowTooShort(TactError):
    code = "WindowTooShort"


# Retargeting
class DegenerateCalibration(TactError):
    code = "DegenerateCalibration"


class CalibrationResidualTooLarge(TactError):
    code = "CalibrationResidualTooLarge"


# QP / IK
class NotPositiveDefinite(TactError):
    code = "NotPositiveDefinite"


class Infeasible(TactError):
    code = "Infeasible"


class MaxIterations(TactError):
    code = "MaxIterations"


# Simulation
class UnreachableSpawn(TactError):
    code = "UnreachableSpawn"


class SimulationDiverged(TactError):
    code = "SimulationDiverged"


# Tensors and policy
class NotScalar(TactError):
    code = "NotScalar"


class ShapeError(TactError):
    code = "ShapeError"


class MissingModality(TactError):
    code = "MissingModality"


class EmptyBatch(TactError):
    code = "EmptyBatch"


class NoPrediction(TactError):
    code = "NoPrediction"


class ProbeUnavailable(TactError):
    code = "ProbeUnavailable"


# Data collection
class CollectionFailed(TactError):
    code = "CollectionFailed"
