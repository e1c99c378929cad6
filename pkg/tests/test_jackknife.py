import math
from fractions import Fraction

import numpy as np
import pytest

from crtwin.data import ClusterPair, Custom, IndividualPair, TrialDataset, summarize
from crtwin.errors import DegenerateDeletion, InsufficientClusters, ValidationError
from crtwin.estimators import PairTable, estimate_triple
from crtwin.jackknife import (
    critical_value,
    degrees_of_freedom,
    jackknife,
    jackknife_table,
    jackknife_variance,
)

# a=(1,[2,0]) b=(1,[1]) c=(0,[1,1,0]) d=(0,[2]); values from a standalone Fraction script
HAND = TrialDataset.from_ranks([1, 1, 0, 0], [[2, 0], [1], [1, 1, 0], [2]], D=3, ids="abcd")
HAND_ORACLE = {
    "individual": {"WD": (Fraction(0), Fraction(10, 27)), "WR": (Fraction(1), Fraction(3, 2))},
    "cluster": {"WD": (Fraction(-1, 4), Fraction(37, 96)), "WR": (Fraction(5, 11), Fraction(482029, 145200))},
}
SCHEMES = {"individual": IndividualPair(), "cluster": ClusterPair()}


def random_dataset(rng, D=4):
    M = int(rng.integers(4, 8))
    arms = np.zeros(M, dtype=int)
    arms[: int(rng.integers(2, M - 1))] = 1
    rng.shuffle(arms)
    return TrialDataset.from_ranks(arms, [rng.integers(0, D, int(rng.integers(1, 7))) for _ in range(M)], D=D)


def recompute_loo(ds, scheme):
    return [estimate_triple(ds.without(c.cluster_id), scheme, exact=True)[0] for c in ds.clusters]


class TestHandCase:
    @pytest.mark.parametrize("level", ["individual", "cluster"])
    @pytest.mark.parametrize("estimand", ["WD", "WR"])
    def test_exact_variance(self, level, estimand):
        res = jackknife(HAND, SCHEMES[level], estimand, exact=True)
        est, var = HAND_ORACLE[level][estimand]
        assert res.point_estimate == est
        assert res.variance == var
        assert res.df == 2

    @pytest.mark.parametrize("level", ["individual", "cluster"])
    def test_float_variance(self, level):
        res = jackknife(HAND, SCHEMES[level], "WR")
        assert abs(res.variance - float(HAND_ORACLE[level]["WR"][1])) < 1e-12

    def test_interval(self):
        res = jackknife(HAND, ClusterPair(), "WD", df_rule="m-1")
        half = critical_value(0.95, 3) * math.sqrt(37 / 96)
        assert res.confidence_interval == pytest.approx((-0.25 - half, -0.25 + half), abs=1e-12)
        assert res.covers(0.0)


class TestIncrementalDeletion:
    def test_matches_full_recompute(self):
        rng = np.random.default_rng(2024)
        schemes = (IndividualPair(), ClusterPair(), Custom(lambda a, b: a + b))
        for k in range(1000):
            ds = random_dataset(rng)
            scheme = schemes[k % 3]
            table = PairTable.from_dataset(ds, scheme, exact=True)
            win, loss, tie = table.leave_one_out()
            for w, l, t, ref in zip(win, loss, tie, recompute_loo(ds, scheme)):
                assert (w, l, t) == (ref.win, ref.loss, ref.tie)

    def test_float_mode_close(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            ds = random_dataset(rng)
            table = PairTable.from_dataset(ds, ClusterPair())
            for w, ref in zip(table.leave_one_out()[0], recompute_loo(ds, ClusterPair())):
                assert w == pytest.approx(float(ref.win), rel=1e-12, abs=1e-15)


class TestDegreesOfFreedom:
    def test_t_quantile(self):
        assert critical_value(0.95, 98) == pytest.approx(1.984467454426692, abs=1e-12)

    def test_rules(self):
        assert degrees_of_freedom(100, "m-2") == 98
        assert degrees_of_freedom(100, "m-1") == 99
        with pytest.raises(ValidationError):
            degrees_of_freedom(100, "satterthwaite")

    def test_m2_interval_is_wider(self):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng)
        a = jackknife(ds, ClusterPair(), "WD", df_rule="m-2")
        b = jackknife(ds, ClusterPair(), "WD", df_rule="m-1")
        assert a.standard_error == b.standard_error
        assert a.confidence_interval[0] <= b.confidence_interval[0]
        assert a.confidence_interval[1] >= b.confidence_interval[1]

    def test_critical_value_decreases_with_df(self):
        vals = [critical_value(0.95, d) for d in range(1, 200)]
        assert all(x > y for x, y in zip(vals, vals[1:]))


class TestDegenerate:
    def test_single_cluster_arm(self):
        ds = TrialDataset.from_ranks([1, 0, 0], [[1], [0], [1]], D=2)
        with pytest.raises(DegenerateDeletion):
            jackknife(ds, ClusterPair())

    def test_too_few_clusters(self):
        ds = TrialDataset.from_ranks([1, 0, 1, 0], [[1], [0], [1], [0]], D=2)
        jackknife(ds, ClusterPair(), df_rule="m-1")
        ds3 = TrialDataset.from_ranks([1, 0], [[1], [0]], D=2)
        with pytest.raises((InsufficientClusters, DegenerateDeletion)):
            jackknife(ds3, ClusterPair())

    def test_zero_loss_replicate_flagged(self):
        # dropping cluster "d" removes every loss
        ds = TrialDataset.from_ranks([1, 1, 0, 0], [[1], [2], [0], [2]], D=3, ids="abcd")
        res = jackknife(ds, ClusterPair(), "WR")
        assert "NonFiniteReplicate" in res.flags
        assert math.isnan(res.standard_error)
        wd = jackknife(ds, ClusterPair(), "WD")
        assert not wd.flags and math.isfinite(wd.standard_error)

    def test_log_scale(self):
        rng = np.random.default_rng(4)
        while True:
            ds = random_dataset(rng)
            tab = PairTable.from_dataset(ds, ClusterPair())
            res = jackknife_table(tab, ("WO",), scale="log")["WO"]
            if not res.flags:
                break
        lo, hi = res.confidence_interval
        est = float(res.point_estimate)
        assert lo < est < hi
        assert math.log(est) - math.log(lo) == pytest.approx(math.log(hi) - math.log(est), rel=1e-9)
        assert res.scale == "log"
        assert jackknife_table(tab, ("WD",), scale="log")["WD"].scale == "natural"

    def test_bad_options(self):
        tab = PairTable.from_dataset(HAND, ClusterPair())
        with pytest.raises(ValidationError):
            jackknife_table(tab, scale="logit")
        with pytest.raises(ValidationError):
            jackknife_table(tab, level=1.5)
        with pytest.raises(ValidationError):
            jackknife(HAND, ClusterPair(), "NB")


def test_variance_helper_exact():
    assert jackknife_variance([Fraction(1), Fraction(3)], Fraction(2)) == Fraction(1)
    assert jackknife_variance([1.0, 3.0], 2.0) == 1.0


def test_point_estimate_is_full_data_summary():
    res = jackknife(HAND, ClusterPair(), "WO", exact=True)
    assert res.point_estimate == summarize(estimate_triple(HAND, ClusterPair(), exact=True)[0]).win_odds
    assert res.cluster_ids == tuple("abcd")
