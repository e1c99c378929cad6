"""Monte Carlo study: relative bias and jackknife CI coverage."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .data import ESTIMANDS, ClusterPair, IndividualPair, WinSummary, summarize
from .dgp import DgpConfig, draw_clusters, replicate_rng
from .errors import CrtwinError, InferenceError
from .estimators import table_from_histograms
from .jackknife import jackknife_table

LEVELS = {"individual": IndividualPair(), "cluster": ClusterPair()}


@dataclass
class SimRow:
    scenario: str
    estimand: str
    level: str
    truth: float
    mean_estimate: float
    relative_bias_pct: float
    bias: float
    bias_mcse: float
    empirical_se: float
    mean_jackknife_se: float
    coverage: float
    coverage_mcse: float
    replicates: int
    used: int
    excluded: int


@dataclass
class SimReport:
    rows: list[SimRow]
    metadata: dict = field(default_factory=dict)

    def row(self, estimand: str, level: str) -> SimRow:
        for r in self.rows:
            if r.estimand == estimand and r.level == level:
                return r
        raise KeyError((estimand, level))

    def to_records(self) -> str:
        """One JSON object per line; the first line is the metadata record."""
        lines = [json.dumps({"record": "metadata", **self.metadata}, sort_keys=True)]
        for r in self.rows:
            lines.append(json.dumps({"record": "result", **_finite(asdict(r))}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        m = self.metadata
        head = (f"scenario={m.get('scenario')} M={m.get('clusters')} replicates={m.get('replicates')} "
                f"seed={m.get('seed')} gamma={m.get('gamma')} link={m.get('gamma_link')} "
                f"config={m.get('config_digest')} version={m.get('version')}")
        cols = f"{'estimand':<8} {'level':<10} {'truth':>8} {'mean':>8} {'relbias%':>9} {'emp.SE':>8} {'jk.SE':>8} {'cover':>6} {'used':>5}"
        out = [head, cols]
        for r in self.rows:
            out.append(f"{r.estimand:<8} {r.level:<10} {r.truth:8.4f} {r.mean_estimate:8.4f} {r.relative_bias_pct:9.2f} "
                       f"{r.empirical_se:8.4f} {r.mean_jackknife_se:8.4f} {r.coverage:6.3f} {r.used:5d}")
        if any(r.excluded for r in self.rows):
            out.append(f"excluded replicates: {max(r.excluded for r in self.rows)}")
        return "\n".join(out) + "\n"


def _finite(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _metadata(config: DgpConfig, **extra) -> dict:
    return {
        "scenario": config.name,
        "clusters": config.clusters,
        "replicates": config.replicates,
        "seed": config.seed,
        "gamma": config.gamma,
        "gamma_link": config.gamma_link,
        "config_digest": config.digest(),
        "config": config.to_dict(),
        "version": __version__,
        **extra,
    }


def simulate_replicate(config: DgpConfig, replicate: int, level: float = 0.95, df_rule: str = "m-2",
                       scale: str = "natural"):
    """Estimates, jackknife SEs and coverage indicators for one replicate.

    Returns ``{(level_name, estimand): (estimate, se, lower, upper)}``, or a
    string naming the reason the replicate had to be excluded.
    """
    sim = draw_clusters(config, replicate_rng(config.seed, replicate))
    hists = sim.histograms()
    out = {}
    for lvl, scheme in LEVELS.items():
        try:
            table = table_from_histograms(sim.arms, hists, scheme)
            res = jackknife_table(table, ESTIMANDS, level, df_rule, scale)
        except (InferenceError, CrtwinError) as exc:
            return type(exc).__name__
        for name, r in res.items():
            if r.flags:
                return r.flags[0]
            out[lvl, name] = (float(r.point_estimate), r.standard_error, *r.confidence_interval)
    return out


def _run_chunk(args):
    config, reps, level, df_rule, scale = args
    return [simulate_replicate(config, r, level, df_rule, scale) for r in reps]


def run_replicates(config: DgpConfig, level: float = 0.95, df_rule: str = "m-2", scale: str = "natural",
                   workers: int = 1) -> list:
    reps = list(range(config.replicates))
    if workers <= 1:
        return _run_chunk((config, reps, level, df_rule, scale))
    chunks = [reps[k::workers * 4] for k in range(workers * 4)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(config, ch, level, df_rule, scale) for ch in chunks]))
    # reassemble in replicate order so aggregation does not depend on scheduling
    results = [None] * len(reps)
    for ch, part in zip(chunks, parts):
        for r, res in zip(ch, part):
            results[r] = res
    return results


def run_study(config: DgpConfig, truth: dict[str, WinSummary], level: float = 0.95, df_rule: str = "m-2",
              scale: str = "natural", workers: int = 1) -> SimReport:
    """Run ``config.replicates`` trials and summarize bias and coverage.

    ``truth`` maps ``"individual"``/``"cluster"`` to the target summaries.
    Replicates where an estimate or a jackknife replicate is undefined are
    excluded and counted.
    """
    results = run_replicates(config, level, df_rule, scale, workers)
    return aggregate_study(config, truth, results, level, df_rule, scale)


def aggregate_study(config: DgpConfig, truth: dict[str, WinSummary], results: list, level: float = 0.95,
                    df_rule: str = "m-2", scale: str = "natural") -> SimReport:
    """Build the report from :func:`run_replicates` output."""
    kept = [r for r in results if isinstance(r, dict)]
    reasons: dict[str, int] = {}
    for r in results:
        if not isinstance(r, dict):
            reasons[r] = reasons.get(r, 0) + 1
    rows = []
    for lvl in LEVELS:
        for name in ESTIMANDS:
            true = float(truth[lvl].get(name))
            vals = np.array([r[lvl, name] for r in kept], dtype=float).reshape(-1, 4)
            rows.append(_aggregate(config, name, lvl, true, vals, len(results)))
    meta = _metadata(config, level=level, df_rule=df_rule, ci_scale=scale, excluded_reasons=reasons,
                     mode="study", truth={k: v.as_float().as_dict() for k, v in truth.items()})
    return SimReport(rows, meta)


def _aggregate(config, name, lvl, true, vals, n_total) -> SimRow:
    n = vals.shape[0]
    est, se, lo, hi = vals.T if n else (np.empty(0),) * 4
    mean = math.fsum(est) / n if n else math.nan
    emp = float(np.std(est, ddof=1)) if n > 1 else math.nan
    cover = float(np.mean((lo <= true) & (true <= hi))) if n and not np.all(np.isnan(lo)) else math.nan
    return SimRow(
        scenario=config.name,
        estimand=name,
        level=lvl,
        truth=true,
        mean_estimate=mean,
        relative_bias_pct=100 * (mean - true) / true if true != 0 else math.nan,
        bias=mean - true,
        bias_mcse=emp / math.sqrt(n) if n > 1 else math.nan,
        empirical_se=emp,
        mean_jackknife_se=math.fsum(se) / n if n else math.nan,
        coverage=cover,
        coverage_mcse=math.sqrt(cover * (1 - cover) / n) if n and math.isfinite(cover) else math.nan,
        replicates=n_total,
        used=n,
        excluded=n_total - n,
    )


def run_consistency(config: DgpConfig, truth: dict[str, WinSummary], clusters: int | None = None,
                    replicate: int = 0) -> SimReport:
    """One large trial; relative bias of each point estimate against the truth."""
    if clusters is not None:
        config = config.with_(clusters=clusters)
    config = config.with_(replicates=1)
    sim = draw_clusters(config, replicate_rng(config.seed, replicate))
    hists = sim.histograms()
    rows = []
    for lvl, scheme in LEVELS.items():
        est = table_from_histograms(sim.arms, hists, scheme).triple()
        summary = summarize(est)
        for name in ESTIMANDS:
            true = float(truth[lvl].get(name))
            rows.append(_aggregate(config, name, lvl, true,
                                   np.array([[float(summary.get(name)), math.nan, math.nan, math.nan]]), 1))
    meta = _metadata(config, mode="consistency", replicate=replicate,
                     truth={k: v.as_float().as_dict() for k, v in truth.items()})
    return SimReport(rows, meta)
