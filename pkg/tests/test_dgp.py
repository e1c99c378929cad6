from dataclasses import replace

import numpy as np
import pytest

from crtwin.dgp import (
    MeanScaledLink,
    NoLink,
    draw_clusters,
    generate_cluster,
    generate_trial,
    get_link,
    load_config,
    parse_config,
    preset,
    replicate_rng,
)
from crtwin.errors import InvalidConfig, ParseError
from crtwin.quadrature import category_probs


@pytest.fixture(scope="module")
def no_ics():
    return preset("no_ics")


@pytest.fixture(scope="module")
def ics():
    return preset("ics")


class TestConfig:
    def test_presets(self, no_ics, ics):
        assert no_ics.D == ics.D == 5
        assert ics.gamma == -0.6 and ics.gamma_link == "mean-scaled"
        assert no_ics.intercept_sd == 1.34
        assert len(no_ics.digest()) == 16

    def test_digest_tracks_content(self, no_ics):
        assert preset("no_ics").digest() == no_ics.digest()
        assert no_ics.with_(seed=1).digest() != no_ics.digest()

    @pytest.mark.parametrize("change,field", [
        (dict(cut_points=(0.0, -1.0)), "cut_points"),
        (dict(intercept_sd=-1.0), "intercept_sd"),
        (dict(clusters=1), "clusters"),
        (dict(gamma_link="cubic"), "gamma_link"),
        (dict(treatment_probability=1.0), "treatment_probability"),
    ])
    def test_invalid(self, no_ics, change, field):
        with pytest.raises(InvalidConfig) as e:
            no_ics.with_(**change)
        assert e.value.field == field

    def test_parse_missing_field(self):
        with pytest.raises(InvalidConfig) as e:
            parse_config({"clusters": 10, "cut_points": [0.0], "type": []})
        assert e.value.field == "intercept_sd"

    def test_categories_must_match_cut_points(self, no_ics):
        doc = no_ics.to_dict()
        doc["type"] = doc.pop("types")
        doc["categories"] = 4
        with pytest.raises(InvalidConfig):
            parse_config(doc)
        doc["categories"] = 5
        assert parse_config(doc).digest() == no_ics.digest()

    def test_bad_file(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("clusters = ")
        with pytest.raises(ParseError):
            load_config(p)

    def test_unknown_link(self):
        with pytest.raises(InvalidConfig):
            get_link("exponential")


class TestDraws:
    def test_deterministic(self, ics):
        a = draw_clusters(ics, replicate_rng(7, 3))
        b = draw_clusters(ics, replicate_rng(7, 3))
        for f in ("types", "alpha", "sizes", "arms", "y1", "y0"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
        c = draw_clusters(ics, replicate_rng(7, 4))
        assert not np.array_equal(a.alpha, c.alpha)

    def test_replicate_streams_independent_of_order(self, no_ics):
        first = [generate_trial(no_ics, 1, r) for r in range(3)]
        again = [generate_trial(no_ics, 1, r) for r in (2, 0, 1)]
        assert [c.size for c in first[2].clusters] == [c.size for c in again[0].clusters]

    def test_no_ics_sizes(self, no_ics):
        sim = draw_clusters(no_ics, replicate_rng(1, 0), M=20_000)
        assert sim.sizes.min() == 80 and sim.sizes.max() == 180
        assert abs(sim.sizes.mean() - 130) < 4 * np.sqrt((101**2 - 1) / 12 / 20_000)
        assert np.all(sim.types == 1)

    def test_type_counts(self, ics):
        M = 50_000
        sim = draw_clusters(ics.with_(gamma=0.0), replicate_rng(2, 0), M=M)
        n2 = int((sim.types == 1).sum())
        assert abs(n2 - 0.08 * M) < 4 * np.sqrt(M * 0.08 * 0.92)
        small = sim.sizes[sim.types == 0]
        assert small.min() >= 8 and small.max() <= 20

    def test_arm_assignment(self, no_ics):
        sim = draw_clusters(no_ics, replicate_rng(3, 0), M=40_000)
        assert abs(sim.arms.mean() - 0.5) < 4 * np.sqrt(0.25 / 40_000)

    def test_shared_noise_makes_outcomes_monotone(self, no_ics):
        sim = draw_clusters(no_ics, replicate_rng(4, 0), M=50)
        assert np.all(sim.y1 >= sim.y0)

    def test_observed_follows_arm(self, no_ics):
        sim = draw_clusters(no_ics, replicate_rng(5, 0), M=30)
        ds = sim.dataset()
        for i, c in enumerate(ds.clusters):
            src = sim.y1 if sim.arms[i] else sim.y0
            np.testing.assert_array_equal(c.outcomes, src[sim.offsets[i]:sim.offsets[i + 1]])
        np.testing.assert_array_equal(sim.histograms().sum(axis=1), sim.sizes)

    def test_single_cluster(self, no_ics):
        sim = generate_cluster(no_ics, replicate_rng(0, 0))
        assert len(sim.sizes) == 1 and len(sim.y1) == sim.sizes[0]

    @pytest.mark.parametrize("t,z", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_frequencies_match_quadrature(self, ics, t, z):
        cfg = ics.with_(gamma=0.0)
        rng = replicate_rng(99, 10 * t + z)
        typ = cfg.types[t]
        mean_n = typ.mean_size
        sim = draw_clusters(cfg.with_(types=(replace(typ, probability=1.0),)), rng, M=int(1_000_000 / mean_n))
        y = sim.y1 if z else sim.y0
        M = len(sim.sizes)
        counts = np.zeros((M, cfg.D))
        np.add.at(counts, (np.repeat(np.arange(M), sim.sizes), y), 1)
        p_hat = counts.sum(axis=0) / sim.sizes.sum()
        # ratio-estimator SE over clusters, since individuals share alpha
        resid = counts - sim.sizes[:, None] * p_hat[None, :]
        se = np.sqrt((resid**2).sum(axis=0)) / sim.sizes.sum()
        p = category_probs(cfg, t, z)
        assert np.all(np.abs(p_hat - p) < 4 * se), (p_hat - p) / se


class TestSizeLinks:
    def test_none_link_ignores_alpha(self):
        rng = np.random.default_rng(0)
        base = np.array([5, 10, 20])
        np.testing.assert_array_equal(NoLink().sample(base, np.array([3.0, -3.0, 0.0]), -0.6, rng), base)

    def test_mean_scaled_is_unbiased(self):
        link = MeanScaledLink()
        rng = np.random.default_rng(1)
        alpha = np.full(400_000, 0.7)
        base = rng.integers(8, 21, alpha.size)
        n = link.sample(base, alpha, -0.6, rng)
        expected = link.expected_size(8, 20, np.array([0.7]), -0.6)[0]
        assert abs(n.mean() - expected) < 4 * n.std() / np.sqrt(n.size)
        assert n.min() >= 1

    def test_floor_of_one(self):
        link = MeanScaledLink()
        n = link.sample(np.array([8] * 100), np.full(100, 10.0), -0.6, np.random.default_rng(2))
        assert np.all(n == 1)
        assert link.expected_size(8, 8, np.array([10.0]), -0.6)[0] == 1.0

    def test_gamma_zero_is_identity(self):
        base = np.arange(8, 21)
        out = MeanScaledLink().sample(base, np.ones(base.size), 0.0, np.random.default_rng(3))
        np.testing.assert_array_equal(out, base)

    def test_breakpoints(self):
        b = MeanScaledLink().breakpoints(1, 4, -0.6)
        np.testing.assert_allclose(np.sort(b), np.sort(np.log([2, 3, 4]) / 0.6))
        assert MeanScaledLink().breakpoints(1, 4, 0.0).size == 0
