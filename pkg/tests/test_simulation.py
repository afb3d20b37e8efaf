import math

import numpy as np
import pytest
from scipy.special import expit

from causalkmeans.errors import ConfigError
from causalkmeans.kmeans import Codebook, voronoi_labels
from causalkmeans.simulation import (
    JITTER_RADIUS,
    SimConfig,
    evaluate_population_risk,
    generate_sample,
    hexagon_centers,
    loglog_slope,
    oracle_population_risk,
    run_replication,
    run_study,
    sector_of,
)


class TestHexagon:
    def test_minimum_pairwise_separation(self):
        c = hexagon_centers().centers
        d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() == pytest.approx(6.0, abs=1e-12)

    def test_within_box(self):
        c = hexagon_centers().centers
        assert np.abs(c).max() <= 6.0 + 1e-12

    def test_exact_vertices(self):
        r3 = 3.0 * math.sqrt(3.0)
        want = np.array([[6, 0], [3, r3], [-3, r3], [-6, 0], [-3, -r3], [3, -r3]], dtype=float)
        assert np.allclose(hexagon_centers().centers, want, atol=1e-12)


class TestGenerateSample:
    def test_sector_from_angle(self):
        assert sector_of(np.array([1.0]), np.array([-0.5]))[0] == 3
        assert sector_of(np.array([-1.0]), np.array([0.0]))[0] == 6  # theta = pi
        assert sector_of(np.array([1.0]), np.array([0.0]))[0] == 3  # theta = 0 closes sector 3

    def test_treatment_probability_at_origin(self):
        from causalkmeans.simulation import treatment_probability

        assert treatment_probability(np.zeros((1, 6)))[0] == pytest.approx(expit(-0.2), abs=1e-12)

    def test_margin_certificate(self):
        cfg = SimConfig()
        for seed in range(5):
            s = generate_sample(2000, np.random.default_rng(seed), cfg)
            anchors = hexagon_centers().centers[s.sectors - 1]
            radii = np.linalg.norm(s.mu - anchors, axis=1)
            assert radii.max() <= JITTER_RADIUS * cfg.delta + 1e-12
            from causalkmeans.diagnostics import boundary_distances

            bis, _ = boundary_distances(s.mu, hexagon_centers())
            assert bis.min() > 3.0 - JITTER_RADIUS * cfg.delta - 1e-12

    def test_sector_label_consistency(self):
        cfg = SimConfig()
        s = generate_sample(5000, np.random.default_rng(3), cfg)
        assert np.array_equal(voronoi_labels(s.mu, hexagon_centers()) + 1, s.sectors)

    def test_outcome_composition(self):
        cfg = SimConfig(sigma=0.0)
        s = generate_sample(300, np.random.default_rng(4), cfg)
        picked = s.mu[np.arange(300), s.dataset.a - 1]
        assert np.array_equal(s.dataset.y, picked)

    def test_deterministic_given_rng(self):
        cfg = SimConfig()
        a = generate_sample(100, np.random.default_rng(11), cfg)
        b = generate_sample(100, np.random.default_rng(11), cfg)
        assert np.array_equal(a.dataset.y, b.dataset.y)
        assert np.array_equal(a.dataset.a, b.dataset.a)

    def test_treated_fraction_plausible(self):
        cfg = SimConfig()
        s = generate_sample(20000, np.random.default_rng(5), cfg)
        frac = (s.dataset.a == 2).mean()
        assert abs(frac - s.treat_prob.mean()) < 0.01


class TestOracleRisk:
    def test_closed_form(self):
        assert oracle_population_risk(0.01) == 1.25e-4
        assert oracle_population_risk(0.0) == 0.0

    def test_monte_carlo_cross_check(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(1_000_000, 4))
        j0 = np.sin(np.pi * x[:, 0]) + 0.5 * np.cos(np.pi * x[:, 1])
        j1 = np.cos(np.pi * x[:, 2]) + 0.5 * np.sin(np.pi * x[:, 3])
        mc = 0.01**2 * (j0**2 + j1**2).mean()
        assert abs(mc - oracle_population_risk(0.01)) / oracle_population_risk(0.01) < 0.01


class TestEvaluatePopulationRisk:
    def test_optimal_codebook_matches_oracle(self):
        cfg = SimConfig()
        value, se = evaluate_population_risk(hexagon_centers(), cfg, m=50_000, rng=np.random.default_rng(1))
        assert abs(value - oracle_population_risk(cfg.delta)) < 3 * se

    def test_suboptimal_codebook_strictly_worse(self):
        cfg = SimConfig()
        centers = hexagon_centers().centers.copy()
        centers[0] = centers[1]  # drop one vertex, duplicate another
        value, _ = evaluate_population_risk(Codebook(centers), cfg, m=20_000, rng=np.random.default_rng(2))
        assert value > 10 * oracle_population_risk(cfg.delta)

    def test_standard_error_scaling(self):
        cfg = SimConfig()
        _, se1 = evaluate_population_risk(hexagon_centers(), cfg, m=20_000, rng=np.random.default_rng(3))
        _, se2 = evaluate_population_risk(hexagon_centers(), cfg, m=80_000, rng=np.random.default_rng(3))
        assert se2 == pytest.approx(se1 / 2, rel=0.25)

    def test_draw_floor(self):
        with pytest.raises(ConfigError):
            evaluate_population_risk(hexagon_centers(), SimConfig(), m=100)


class TestRunReplication:
    def test_degenerate_design_is_exact(self):
        cfg = SimConfig(delta=0.0, sigma=0.0, oracle_nuisances=True, eval_draws=10_000)
        res = run_replication(400, 7, "plug_in", cfg)
        assert res.excess_risk == pytest.approx(0.0, abs=1e-24)
        assert res.per_center_l1 == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self):
        cfg = SimConfig(eval_draws=10_000)
        a = run_replication(500, 3, "semiparametric", cfg)
        b = run_replication(500, 3, "semiparametric", cfg)
        assert a == b

    def test_estimators_differ(self):
        cfg = SimConfig(eval_draws=10_000)
        a = run_replication(500, 3, "plug_in", cfg)
        b = run_replication(500, 3, "semiparametric", cfg)
        assert a.excess_risk != b.excess_risk
        assert math.isnan(a.moment_residual)
        assert math.isfinite(b.moment_residual)

    def test_unknown_estimator(self):
        with pytest.raises(ConfigError):
            run_replication(100, 0, "oracle", SimConfig())


class TestRunStudy:
    def test_row_count(self):
        cfg = SimConfig(ns=(300,), reps=1, eval_draws=10_000)
        study = run_study(cfg)
        assert len(study.rows) == 2
        assert len(study.summary) == 2
        assert {r.estimator for r in study.rows} == {"plug_in", "semiparametric"}

    def test_slope_closed_form(self):
        ns = (500, 1000, 2000, 4000)
        values = [3.0 * n**-0.5 for n in ns]
        assert loglog_slope(ns, values) == pytest.approx(-0.5, abs=1e-10)

    def test_slope_ignores_failures(self):
        assert math.isnan(loglog_slope((1, 2), (math.nan, 1.0)))
        assert loglog_slope((1, 2, 4), (2.0, math.nan, 0.5)) == pytest.approx(-1.0, rel=1e-9)

    def test_worker_invariance(self):
        cfg = SimConfig(ns=(300,), reps=2, eval_draws=10_000)
        serial = run_study(cfg, workers=1)
        parallel = run_study(cfg, workers=2)
        for ra, rb in zip(serial.rows, parallel.rows):
            assert (ra.n, ra.estimator, ra.rep, ra.failed) == (rb.n, rb.estimator, rb.rep, rb.failed)
            for name in ("excess_risk", "per_center_l1", "moment_residual"):
                va, vb = getattr(ra, name), getattr(rb, name)
                assert va == vb or (math.isnan(va) and math.isnan(vb))
        assert serial.summary == parallel.summary

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(reps=0)
        with pytest.raises(ConfigError):
            SimConfig(ns=())
        with pytest.raises(ConfigError):
            SimConfig(delta=-0.1)
        with pytest.raises(ConfigError):
            SimConfig(estimators=("plug_in", "magic"))
