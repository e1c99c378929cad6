"""Win ratio, win odds and win difference for cluster randomized trials."""

__version__ = "0.1.0"

from .data import (
    ClusterPair,
    ClusterRecord,
    Custom,
    IndividualPair,
    OrdinalScale,
    TrialDataset,
    WinSummary,
    WinTriple,
    read_dataset,
    summarize,
    validate_dataset,
)
from .estimators import PairTable, estimate_summary, estimate_triple
from .jackknife import JackknifeResult, jackknife
from .oracle import collapse_check, estimands, load_spec, marginals, win_triple_from_marginals
from .pairs import PairCounts, brute_force_counts, fast_counts, pair_fractions

__all__ = [
    "ClusterPair",
    "ClusterRecord",
    "Custom",
    "IndividualPair",
    "JackknifeResult",
    "OrdinalScale",
    "PairCounts",
    "PairTable",
    "TrialDataset",
    "WinSummary",
    "WinTriple",
    "brute_force_counts",
    "collapse_check",
    "estimands",
    "estimate_summary",
    "estimate_triple",
    "fast_counts",
    "jackknife",
    "load_spec",
    "marginals",
    "pair_fractions",
    "read_dataset",
    "summarize",
    "validate_dataset",
    "win_triple_from_marginals",
]
