import numpy as np
import pytest

from causalkmeans.diagnostics import (
    boundary_distances,
    boundary_mass,
    cluster_profiles,
    codebook_error,
    elbow_scan,
    pairwise_cates,
)
from causalkmeans.errors import InitError
from causalkmeans.kmeans import Codebook
from causalkmeans.simulation import SimConfig, generate_sample, hexagon_centers


class TestElbow:
    def test_noiseless_six_cluster_structure(self):
        cfg = SimConfig(delta=0.0, sigma=0.0)
        sample = generate_sample(500, np.random.default_rng(0), cfg)
        table = elbow_scan(sample.mu, 1, 6, restarts=5, rng=np.random.default_rng(1))
        assert table.wcss(6) == pytest.approx(0.0, abs=1e-20)
        assert table.wcss(5) > 1.0

    def test_gain_undefined_at_k1(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(50, 2))
        table = elbow_scan(pts, 1, 4, restarts=3, rng=rng)
        assert table.rows[0].k == 1
        assert table.rows[0].relative_gain is None
        assert all(r.relative_gain is not None for r in table.rows[1:])

    def test_wcss_nonincreasing(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(size=(120, 2))
        table = elbow_scan(pts, 1, 8, restarts=2, rng=rng)
        w = [r.wcss for r in table.rows]
        assert all(a >= b - 1e-9 for a, b in zip(w, w[1:]))
        assert all(r.relative_gain >= 0 for r in table.rows[1:])

    def test_k_range_subset(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(60, 2))
        table = elbow_scan(pts, 3, 5, restarts=2, rng=rng)
        assert [r.k for r in table.rows] == [3, 4, 5]
        assert table.rows[0].relative_gain is not None

    def test_too_many_clusters(self):
        pts = np.array([[0.0], [1.0], [1.0]])
        with pytest.raises(InitError):
            elbow_scan(pts, 1, 3, restarts=2, rng=np.random.default_rng(0))


class TestCodebookError:
    def test_identical(self):
        c = hexagon_centers()
        assert codebook_error(c, c) == (0.0, 0.0)

    def test_permutation_alignment(self):
        c = hexagon_centers()
        perm = Codebook(c.centers[[3, 1, 5, 0, 2, 4]])
        raw, per = codebook_error(perm, c)
        assert raw == pytest.approx(0.0, abs=1e-12)
        assert per == pytest.approx(0.0, abs=1e-12)

    def test_uniform_shift(self):
        # every coordinate of every center moved by +0.1
        c_star = Codebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
        c_hat = Codebook(c_star.centers + 0.1)
        raw, per = codebook_error(c_hat, c_star)
        assert raw == pytest.approx(0.4, abs=1e-12)
        assert per == pytest.approx(0.2, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(5)
        a = Codebook(rng.normal(size=(4, 3)))
        b = Codebook(rng.normal(size=(4, 3)))
        assert codebook_error(a, b)[0] == pytest.approx(codebook_error(b, a)[0], abs=1e-12)

    def test_assignment_solver_matches_enumeration(self):
        # the assignment-solver route (k > 8) must agree with enumeration
        from itertools import permutations

        rng = np.random.default_rng(6)
        a = rng.normal(size=(9, 2))
        b = rng.normal(size=(9, 2))
        raw, _ = codebook_error(Codebook(a), Codebook(b))
        cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
        brute = min(cost[np.arange(9), list(p)].sum() for p in permutations(range(9)))
        assert raw == pytest.approx(brute, abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shapes"):
            codebook_error(Codebook(np.zeros((2, 2))), Codebook(np.zeros((3, 2))))


class TestBoundaryMass:
    def test_points_on_centers_hard_margin(self):
        c = Codebook(np.array([[0.0, 0.0], [10.0, 0.0]]))
        pts = np.repeat(c.centers, 5, axis=0)
        assert boundary_mass(pts, c, 4.9) == 0.0

    def test_equidistant_point_always_counted(self):
        c = Codebook(np.array([[0.0], [2.0]]))
        pts = np.array([[1.0]])
        assert boundary_mass(pts, c, 0.0) == 1.0

    def test_monotone_in_t_and_saturates(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(100, 2))
        c = Codebook(rng.normal(size=(3, 2)))
        grid = [0.0, 0.1, 0.5, 1.0, 5.0, 1e6]
        masses = [boundary_mass(pts, c, t) for t in grid]
        assert all(a <= b for a, b in zip(masses, masses[1:]))
        assert masses[-1] == 1.0

    def test_single_center_no_boundary(self):
        assert boundary_mass(np.zeros((4, 2)), Codebook(np.zeros((1, 2))), 10.0) == 0.0

    def test_hexagon_oracle_margin(self):
        cfg = SimConfig()
        sample = generate_sample(2000, np.random.default_rng(8), cfg)
        assert boundary_mass(sample.mu, hexagon_centers(), 1.0) == 0.0

    def test_bisector_distances(self):
        c = Codebook(np.array([[0.0, 0.0], [4.0, 0.0]]))
        pts = np.array([[1.0, 0.0], [1.0, 3.0]])
        bis, gap = boundary_distances(pts, c)
        assert bis[0] == pytest.approx(1.0)  # bisector plane at x=2
        assert bis[1] == pytest.approx(1.0)
        assert gap[0] == pytest.approx(2.0)


class TestClusterProfiles:
    def test_single_cluster_zero_z(self, hexagon_sample):
        ds = hexagon_sample.dataset
        labels = np.ones(ds.n, dtype=int)
        prof = cluster_profiles(ds, hexagon_sample.mu, labels, k=1)
        assert prof.sizes[0] == ds.n
        assert np.abs(prof.cov_z).max() < 1e-12

    def test_two_cluster_effect_means(self):
        from causalkmeans.data import Dataset

        n = 40
        x = np.zeros((n, 1))
        mu = np.zeros((n, 2))
        mu[: n // 2, 1] = 3.0
        mu[n // 2 :, 1] = -3.0
        ds = Dataset(y=np.zeros(n), a=np.tile([1, 2], n // 2), x=x, p=2)
        labels = np.repeat([1, 2], n // 2)
        prof = cluster_profiles(ds, mu, labels, k=2)
        assert prof.pairs == ((2, 1),)
        assert prof.cate_mean[0, 0] == pytest.approx(3.0)
        assert prof.cate_mean[0, 1] == pytest.approx(-3.0)

    def test_weighted_z_mean_vanishes(self, hexagon_sample):
        ds = hexagon_sample.dataset
        labels = hexagon_sample.sectors
        prof = cluster_profiles(ds, hexagon_sample.mu, labels, k=6)
        weighted = (prof.sizes[:, None] * prof.cov_z).sum(axis=0) / ds.n
        assert np.abs(weighted).max() < 1e-10

    def test_vertex_effect_recovery(self):
        # each sector's effect mean sits at the vertex coordinate difference
        cfg = SimConfig()
        sample = generate_sample(2000, np.random.default_rng(10), cfg)
        prof = cluster_profiles(sample.dataset, sample.mu, sample.sectors, k=6)
        hexc = hexagon_centers().centers
        for j in range(6):
            want = hexc[j, 1] - hexc[j, 0]
            assert abs(prof.cate_mean[0, j] - want) < 0.05

    def test_empty_cluster_row(self, hexagon_sample):
        ds = hexagon_sample.dataset
        labels = hexagon_sample.sectors
        prof = cluster_profiles(ds, hexagon_sample.mu, labels, k=7)
        assert prof.sizes[6] == 0
        assert np.isnan(prof.cate_mean[0, 6])
        assert np.isnan(prof.cov_z[6]).all()

    def test_zero_variance_covariate_flagged(self):
        from causalkmeans.data import Dataset

        x = np.column_stack([np.ones(20), np.arange(20.0)])
        ds = Dataset(y=np.zeros(20), a=np.tile([1, 2], 10), x=x, p=2)
        prof = cluster_profiles(ds, np.zeros((20, 2)), np.tile([1, 2], 10), k=2)
        assert prof.zero_variance[0]
        assert not prof.zero_variance[1]
        assert np.all(prof.cov_z[:, 0] == 0.0)

    def test_pairwise_cates_p3(self):
        mu = np.array([[1.0, 4.0, 9.0]])
        pairs, vals = pairwise_cates(mu)
        assert pairs == [(2, 1), (3, 1), (3, 2)]
        assert np.allclose(vals.ravel(), [3.0, 8.0, 5.0])
