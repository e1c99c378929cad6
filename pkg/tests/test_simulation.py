import json
import math
from dataclasses import replace

import numpy as np
import pytest

from crtwin.data import ESTIMANDS
from crtwin.dgp import preset
from crtwin.quadrature import true_estimands
from crtwin.simulation import run_consistency, run_replicates, run_study, simulate_replicate


@pytest.fixture(scope="module")
def small():
    return preset("ics").with_(clusters=30, replicates=40)


@pytest.fixture(scope="module")
def small_truth(small):
    return true_estimands(small)


class TestStudy:
    def test_rows_and_metadata(self, small, small_truth):
        rep = run_study(small, small_truth)
        assert len(rep.rows) == 6
        assert {(r.level, r.estimand) for r in rep.rows} == {(l, e) for l in ("individual", "cluster") for e in ESTIMANDS}
        m = rep.metadata
        assert m["seed"] == small.seed and m["gamma_link"] == "mean-scaled"
        assert m["config_digest"] == small.digest()
        for r in rep.rows:
            assert r.used + r.excluded == r.replicates == 40
            assert 0 <= r.coverage <= 1
            assert r.relative_bias_pct == pytest.approx(100 * (r.mean_estimate - r.truth) / r.truth)

    def test_deterministic_across_workers(self, small, small_truth):
        a = run_study(small, small_truth).to_records()
        b = run_study(small, small_truth, workers=3).to_records()
        assert a == b

    def test_replicate_order(self, small):
        res = run_replicates(small.with_(replicates=6), workers=2)
        assert res[4] == simulate_replicate(small, 4)

    def test_records_are_json_lines(self, small, small_truth):
        lines = run_study(small.with_(replicates=5), small_truth).to_records().splitlines()
        recs = [json.loads(x) for x in lines]
        assert recs[0]["record"] == "metadata"
        assert all(r["record"] == "result" for r in recs[1:])
        assert {"estimand", "level", "truth", "coverage", "relative_bias_pct"} <= set(recs[1])

    def test_exclusions_are_counted(self):
        # four single-person clusters: empty arms and zero-loss replicates are common
        base = preset("no_ics")
        cfg = base.with_(clusters=4, replicates=60, types=tuple(replace(t, size_range=(1, 1)) for t in base.types))
        rep = run_study(cfg, true_estimands(cfg))
        r = rep.row("WR", "cluster")
        assert r.excluded > 0 and r.used + r.excluded == 60
        assert sum(rep.metadata["excluded_reasons"].values()) == r.excluded
        assert "excluded" in rep.to_table()


class TestConsistency:
    def test_single_replicate(self, small, small_truth):
        rep = run_consistency(small, small_truth, clusters=2000)
        assert rep.metadata["clusters"] == 2000 and rep.metadata["mode"] == "consistency"
        for r in rep.rows:
            assert r.used == 1 and math.isnan(r.coverage)
        assert "NaN" not in rep.to_records()

    def test_cluster_bias_shrinks_with_M(self):
        # averaged over replicates to make the monotone trend visible
        cfg = preset("ics")
        truth = true_estimands(cfg)
        bias = []
        for M in (100, 1000, 5000):
            est = [run_consistency(cfg, truth, clusters=M, replicate=r).row("WR", "cluster").mean_estimate
                   for r in range(20)]
            bias.append(abs(np.mean(est) - truth["cluster"].win_ratio))
        assert bias[0] > bias[1] > bias[2]
