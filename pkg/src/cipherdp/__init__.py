"""Differentially private synthetic microdata from sanitized low-dimensional tables."""
from .baselines import DomainTooLarge, full_table_sanitize, mwem
from .core import (DEFAULT_LAMBDA, BlockLinearSystem, JointDistribution, ReconstructionError,
                   build_system, reconstruct_full, tikhonov_solve)
from .metrics import SSSOutcome, avg_kway_tvd, classify_sss, linf_error, tvd
from .privacy import BudgetLedger, PrivacySpec, laplace_sanitize, sanitize_queries
from .synth import SynthesisParams, generate_replicates, sample_dataset
from .tables import (AttributeSchema, ContingencyTable, Dataset, QuerySet, SchemaError,
                     cell_count, marginalize, tabulate)

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema", "BlockLinearSystem", "BudgetLedger", "ContingencyTable", "DEFAULT_LAMBDA",
    "Dataset", "DomainTooLarge", "JointDistribution", "PrivacySpec", "QuerySet",
    "ReconstructionError", "SSSOutcome", "SchemaError", "SynthesisParams", "avg_kway_tvd",
    "build_system", "cell_count", "classify_sss", "full_table_sanitize", "generate_replicates",
    "laplace_sanitize", "linf_error", "marginalize", "mwem", "reconstruct_full", "sample_dataset",
    "sanitize_queries", "tabulate", "tikhonov_solve", "tvd",
]
