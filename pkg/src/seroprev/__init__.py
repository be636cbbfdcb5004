"""Prevalence estimation corrected for assay misclassification and selection bias."""

from seroprev.analysis import analyze, analyze_rg, analyze_srg, analyze_srgm
from seroprev.estimators import (
    estimate_assay,
    naive_prevalence,
    restrict,
    rogan_gladen,
    srg,
    srgm,
)
from seroprev.model import (
    MainStudy,
    Method,
    PrevalenceEstimate,
    RegressionSpec,
    SampleFractions,
    StratumTable,
    ValidationStudy,
    from_counts,
)

__version__ = "0.1.0"

__all__ = [
    "analyze", "analyze_rg", "analyze_srg", "analyze_srgm",
    "estimate_assay", "naive_prevalence", "restrict", "rogan_gladen", "srg", "srgm",
    "MainStudy", "Method", "PrevalenceEstimate", "RegressionSpec", "SampleFractions",
    "StratumTable", "ValidationStudy", "from_counts",
]
