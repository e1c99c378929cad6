"""Leave-one-cluster-out jackknife inference for win statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .data import (
    ESTIMANDS,
    TrialDataset,
    WeightScheme,
    WinTriple,
    summarize,
    summarize_arrays,
    validate_dataset,
)
from .errors import InsufficientClusters, UndefinedRatio, ValidationError
from .estimators import PairTable

DF_RULES = ("m-2", "m-1")
SCALES = ("natural", "log")


@dataclass
class JackknifeResult:
    estimand: str
    point_estimate: float
    leave_one_out_estimates: np.ndarray
    variance: float
    standard_error: float
    df: int
    df_rule: str
    level: float
    confidence_interval: tuple[float, float]
    scale: str = "natural"
    flags: list[str] = field(default_factory=list)
    cluster_ids: tuple[str, ...] = ()

    @property
    def M(self) -> int:
        return len(self.leave_one_out_estimates)

    def covers(self, value: float) -> bool:
        lo, hi = self.confidence_interval
        return bool(lo <= value <= hi)


def jackknife_variance(loo, full):
    """``(M-1)/M * sum((loo_i - full)^2)``; exact for Fraction inputs."""
    loo = list(loo)
    M = len(loo)
    if all(isinstance(x, (int, Fraction)) for x in loo) and isinstance(full, (int, Fraction)):
        return Fraction(M - 1, M) * sum((x - full) ** 2 for x in loo)
    return (M - 1) / M * math.fsum((float(x) - float(full)) ** 2 for x in loo)


def critical_value(level: float, df: int) -> float:
    return float(stats.t.ppf(0.5 + level / 2, df))


def degrees_of_freedom(M: int, df_rule: str) -> int:
    if df_rule not in DF_RULES:
        raise ValidationError(f"df_rule must be one of {DF_RULES}, got {df_rule!r}")
    return M - 2 if df_rule == "m-2" else M - 1


def _loo_summaries(table: PairTable):
    win, loss, tie = table.leave_one_out()
    if table.exact:
        out = {k: [] for k in ESTIMANDS}
        for w, l, t in zip(win, loss, tie):
            try:
                vals = summarize(WinTriple(w, l, t)).as_dict()
            except UndefinedRatio:
                vals = {"WR": math.nan, "WO": Fraction(1), "WD": Fraction(0)}
            for k in ESTIMANDS:
                out[k].append(vals[k])
        return {k: np.array(v, dtype=object) for k, v in out.items()}
    return summarize_arrays(win, loss, tie)


def jackknife_table(table: PairTable, estimands=ESTIMANDS, level: float = 0.95, df_rule: str = "m-2",
                    scale: str = "natural") -> dict[str, JackknifeResult]:
    """Jackknife every requested estimand from one prebuilt :class:`PairTable`."""
    if scale not in SCALES:
        raise ValidationError(f"scale must be one of {SCALES}, got {scale!r}")
    if not 0 < level < 1:
        raise ValidationError(f"level must be in (0, 1), got {level}")
    M = len(table.cluster_order)
    df = degrees_of_freedom(M, df_rule)
    if df < 1:
        raise InsufficientClusters(f"M = {M} clusters leaves {df} degrees of freedom under rule {df_rule}")
    full = summarize(table.triple()).as_dict()
    loo = _loo_summaries(table)
    tcrit = critical_value(level, df)
    out = {}
    for name in estimands:
        est = full[name]
        reps = loo[name]
        use_log = scale == "log" and name in ("WR", "WO")
        flags = []
        reps_f = np.array([float(x) for x in reps])
        if not np.all(np.isfinite(reps_f)) or not math.isfinite(float(est)):
            flags.append("NonFiniteReplicate")
            if name == "WR":
                flags.append("suggest-log-WO")
            var = se = math.nan
            ci = (math.nan, math.nan)
        elif use_log:
            if np.any(reps_f <= 0) or float(est) <= 0:
                flags.append("NonPositiveReplicate")
                var = se = math.nan
                ci = (math.nan, math.nan)
            else:
                var = jackknife_variance(np.log(reps_f), math.log(float(est)))
                se = math.sqrt(var)
                centre = math.log(float(est))
                ci = (math.exp(centre - tcrit * se), math.exp(centre + tcrit * se))
        else:
            var = jackknife_variance(reps, est)
            se = math.sqrt(float(var))
            ci = (float(est) - tcrit * se, float(est) + tcrit * se)
        out[name] = JackknifeResult(
            estimand=name,
            point_estimate=est,
            leave_one_out_estimates=reps,
            variance=var,
            standard_error=se,
            df=df,
            df_rule=df_rule,
            level=level,
            confidence_interval=ci,
            scale="log" if use_log else "natural",
            flags=flags,
            cluster_ids=table.cluster_order,
        )
    return out


def jackknife(dataset: TrialDataset, scheme: WeightScheme, estimand: str = "WD", level: float = 0.95,
              df_rule: str = "m-2", scale: str = "natural", exact: bool = False) -> JackknifeResult:
    """Leave-one-cluster-out jackknife for a single win estimand.

    Each replicate drops every comparison involving one cluster (either arm),
    and the variance is ``(M-1)/M * sum((WE_(-i) - WE)^2)`` over all ``M``
    clusters. The interval is ``WE +/- t_{df} * SE``, built on the log scale
    and exponentiated when ``scale="log"`` (WR and WO only).

    Raises:
        DegenerateDeletion: an arm has a single cluster.
        InsufficientClusters: fewer than ``df_rule`` allows.
    """
    if estimand not in ESTIMANDS:
        raise ValidationError(f"estimand must be one of {ESTIMANDS}, got {estimand!r}")
    validate_dataset(dataset)
    table = PairTable.from_dataset(dataset, scheme, exact=exact)
    return jackknife_table(table, (estimand,), level, df_rule, scale)[estimand]
