import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import expit

from crtwin.data import ESTIMANDS
from crtwin.dgp import draw_clusters, preset, replicate_rng
from crtwin.errors import InvalidConfig
from crtwin.estimators import table_from_histograms
from crtwin.jackknife import jackknife_table
from crtwin.quadrature import category_probs, conditional_probs, true_estimands, true_marginals
from crtwin.simulation import LEVELS


@pytest.fixture(scope="module")
def no_ics():
    return preset("no_ics")


@pytest.fixture(scope="module")
def ics():
    return preset("ics")


class TestCategoryProbs:
    def test_sums_to_one(self, no_ics, ics):
        for cfg in (no_ics, ics):
            for t in range(len(cfg.types)):
                for z in (0, 1):
                    assert abs(category_probs(cfg, t, z).sum() - 1) < 1e-10

    def test_zero_variance_closed_form(self, no_ics):
        cfg = no_ics.with_(intercept_sd=0.0)
        eta = cfg.types[1].latent_baseline + cfg.types[1].latent_effect
        cum = np.concatenate([expit(np.array(cfg.cut_points) - eta), [1.0]])
        expected = np.diff(np.concatenate([[0.0], cum]))
        np.testing.assert_allclose(category_probs(cfg, 1, 1), expected, atol=1e-12)

    def test_tiny_variance_approaches_closed_form(self, no_ics):
        a = category_probs(no_ics.with_(intercept_sd=1e-7), 1, 0)
        b = category_probs(no_ics.with_(intercept_sd=0.0), 1, 0)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_node_convergence(self, no_ics, ics):
        for cfg in (no_ics, ics):
            for t in range(len(cfg.types)):
                for z in (0, 1):
                    a = category_probs(cfg, t, z, nodes=32)
                    b = category_probs(cfg, t, z, nodes=128)
                    np.testing.assert_allclose(a, b, atol=1e-8)
                    np.testing.assert_allclose(category_probs(cfg, t, z, 64), b, atol=1e-8)

    def test_too_few_nodes(self, no_ics):
        with pytest.raises(InvalidConfig):
            category_probs(no_ics, 1, 0, nodes=8)

    def test_monte_carlo_frequencies(self, no_ics):
        rng = np.random.default_rng(12345)
        n = 10_000_000
        typ = no_ics.types[1]
        for z in (0, 1):
            eta = typ.latent_baseline + z * typ.latent_effect
            latent = eta + rng.normal(0, no_ics.intercept_sd, n) + rng.logistic(size=n)
            freq = np.bincount(np.searchsorted(no_ics.cut_points, latent), minlength=no_ics.D) / n
            p = category_probs(no_ics, 1, z)
            se = np.sqrt(p * (1 - p) / n)
            assert np.all(np.abs(freq - p) < 3 * se), (z, (freq - p) / se)

    def test_conditional_probs_shape(self):
        out = conditional_probs([0.0, 1.0, -1.0], [-1.0, 0.0, 1.0])
        assert out.shape == (3, 4)
        np.testing.assert_allclose(out.sum(axis=1), 1.0)


class TestTrueEstimands:
    def test_no_ics_row(self, no_ics):
        start = time.perf_counter()
        truth = true_estimands(no_ics)
        assert time.perf_counter() - start < 1.0
        for lvl in ("individual", "cluster"):
            s = truth[lvl]
            assert (s.win_ratio, s.win_odds, s.win_difference) == pytest.approx((3.86, 2.54, 0.44), abs=0.02)
        for k in ESTIMANDS:
            assert abs(truth["individual"].get(k) - truth["cluster"].get(k)) < 1e-10

    def test_ics_ordering(self, ics):
        truth = true_estimands(ics)
        for k in ESTIMANDS:
            assert truth["individual"].get(k) > truth["cluster"].get(k)
        assert truth["individual"].win_ratio > truth["cluster"].win_ratio > 1

    def test_ics_gamma_zero_values(self, ics):
        truth = true_estimands(ics.with_(gamma=0.0))
        ind, clus = truth["individual"], truth["cluster"]
        assert (ind.win_ratio, ind.win_odds, ind.win_difference) == pytest.approx((1.8972, 1.4862, 0.1956), abs=1e-4)
        assert (clus.win_ratio, clus.win_odds, clus.win_difference) == pytest.approx((1.1328, 1.0728, 0.0351),
                                                                                     abs=1e-4)

    def test_cluster_truth_ignores_size_link(self, ics):
        a = true_estimands(ics)["cluster"]
        b = true_estimands(ics.with_(gamma=0.0))["cluster"]
        assert a == b

    def test_none_link_matches_gamma_zero(self, ics):
        a = true_estimands(ics.with_(gamma_link="none"))
        b = true_estimands(ics.with_(gamma=0.0))
        for lvl in a:
            for k in ESTIMANDS:
                assert a[lvl].get(k) == pytest.approx(b[lvl].get(k), abs=1e-12)

    def test_gamma_path_node_convergence(self, ics):
        # the gamma != 0 individual path does not use Gauss-Hermite nodes
        a = true_estimands(ics, nodes=32)["individual"]
        b = true_estimands(ics, nodes=128)["individual"]
        for k in ESTIMANDS:
            assert a.get(k) == pytest.approx(b.get(k), abs=1e-8)

    def test_gamma_path_continuity(self, ics):
        # the joint-integration path tends to the factorized path as gamma -> 0
        a = true_estimands(ics.with_(gamma=1e-9))["individual"]
        b = true_estimands(ics.with_(gamma=0.0))["individual"]
        for k in ESTIMANDS:
            assert a.get(k) == pytest.approx(b.get(k), abs=1e-7)

    def test_null_effect(self, ics):
        cfg = ics.with_(types=tuple(replace(t, latent_effect=0.0) for t in ics.types))
        for s in true_estimands(cfg).values():
            assert s.win_difference == pytest.approx(0, abs=1e-15)
            assert s.win_ratio == pytest.approx(1, abs=1e-12)
            assert s.win_odds == pytest.approx(1, abs=1e-12)

    def test_single_type_levels_coincide(self, no_ics):
        m = true_marginals(no_ics)
        np.testing.assert_allclose(m["individual"].treated, m["cluster"].treated, atol=1e-15)

    def test_wo_identity(self, no_ics, ics):
        for cfg in (no_ics, ics, ics.with_(gamma=0.0)):
            for s in true_estimands(cfg).values():
                d = s.win_difference
                assert s.win_odds == pytest.approx((1 + d) / (1 - d), abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("name,gamma", [("no_ics", None), ("ics", None), ("ics", 0.0)])
def test_large_trial_within_three_standard_errors(name, gamma):
    cfg = preset(name)
    if gamma is not None:
        cfg = cfg.with_(gamma=gamma)
    truth = true_estimands(cfg)
    sim = draw_clusters(cfg, replicate_rng(cfg.seed, 0), M=100_000)
    hists = sim.histograms()
    for lvl, scheme in LEVELS.items():
        res = jackknife_table(table_from_histograms(sim.arms, hists, scheme))
        for k in ESTIMANDS:
            z = (float(res[k].point_estimate) - truth[lvl].get(k)) / res[k].standard_error
            assert abs(z) < 3, (lvl, k, z)
