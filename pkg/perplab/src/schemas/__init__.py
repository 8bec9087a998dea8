from src.schemas.law import LawAtom, Garch12Config, LawConfig, MatrixQLaw
from src.schemas.results import (
    ConditionReport,
    KappaEstimate,
    PassageSample,
    RatePoint,
    LDPrediction,
    PrefactorEstimate,
    VerificationReport,
    ExperimentManifest,
)

__all__ = [
    "LawAtom",
    "Garch12Config",
    "LawConfig",
    "MatrixQLaw",
    "ConditionReport",
    "KappaEstimate",
    "PassageSample",
    "RatePoint",
    "LDPrediction",
    "PrefactorEstimate",
    "VerificationReport",
    "ExperimentManifest",
]
