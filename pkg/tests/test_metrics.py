import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import chamfer_brute, emd_brute
from shapetok.metrics import (
    FeatureMap,
    chamfer,
    cross_view_consistency,
    cross_view_report,
    default_f_tau,
    emd,
    evaluate_pairs,
    f_score,
    frechet_from_features,
    frechet_gaussian,
    sinkhorn_emd,
    toy_fid,
)


def cloud(seed, n=64, offset=0.0):
    return np.random.default_rng(seed).uniform(-0.9, 0.9, size=(n, 3)) + offset


class TestChamfer:
    def test_identity_zero(self):
        a = cloud(0)
        assert chamfer(a, a) == 0.0

    def test_unit_offset_pair(self):
        assert chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == pytest.approx(2.0)

    def test_matches_brute_force(self):
        a, b = cloud(1), cloud(2)
        assert chamfer(a, b) == pytest.approx(chamfer_brute(a, b), abs=1e-12)

    def test_symmetry_and_order_invariance(self):
        a, b = cloud(3), cloud(4)
        assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-15)
        perm = np.random.default_rng(5).permutation(len(a))
        assert chamfer(a[perm], b) == pytest.approx(chamfer(a, b), abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), cloud(0))


class TestEmd:
    def test_permutation_zero(self):
        a = cloud(6, 32)
        perm = np.random.default_rng(7).permutation(32)
        assert emd(a, a[perm]) == pytest.approx(0.0, abs=1e-12)

    def test_singletons(self):
        a = np.array([[0.1, 0.2, 0.3]])
        b = np.array([[0.4, -0.1, 0.0]])
        assert emd(a, b) == pytest.approx(np.linalg.norm(a[0] - b[0]))

    def test_exact_matches_factorial_enumeration(self):
        for seed in range(5):
            a, b = cloud(seed, 6), cloud(seed + 100, 6)
            assert emd(a, b) == pytest.approx(emd_brute(a, b), abs=1e-9)

    def test_sinkhorn_within_two_percent_of_exact(self):
        for seed in range(3):
            a, b = cloud(seed + 10, 64), cloud(seed + 200, 64)
            exact = emd(a, b, method="exact")
            approx = sinkhorn_emd(a, b, eps=0.01, iters=500)
            assert abs(approx - exact) <= 0.02 * exact

    def test_unequal_sizes_rejected(self):
        with pytest.raises(ValueError):
            emd(cloud(0, 8), cloud(1, 9))

    def test_symmetry(self):
        a, b = cloud(11, 16), cloud(12, 16)
        assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-12)


class TestFScore:
    def test_identity_one(self):
        a = cloud(13)
        assert f_score(a, a, 0.05) == 1.0

    def test_separated_zero(self):
        assert f_score(cloud(14), cloud(15, offset=50.0), 0.05) == 0.0

    def test_four_point_hand_construction(self):
        # A has 4 points, two of which coincide with B's 2 points:
        # precision 1/2, recall 1 -> F = 2/3.
        shared = np.array([[0.0, 0, 0], [0.1, 0, 0]])
        a = np.vstack([shared, [[5.0, 0, 0], [6.0, 0, 0]]])
        b = shared
        expected = 2 * 0.5 * 1.0 / 1.5
        assert f_score(a, b, 0.01) == pytest.approx(expected)

    def test_default_tau_from_cube_diagonal(self):
        assert default_f_tau() == pytest.approx(0.02 * 2 * np.sqrt(3))

    def test_order_invariance(self):
        a, b = cloud(16), cloud(17)
        perm = np.random.default_rng(18).permutation(len(a))
        assert f_score(a[perm], b) == f_score(a, b)

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            f_score(cloud(0), cloud(1), 0.0)


class TestCrossView:
    def test_identical_views_zero(self):
        a = cloud(19)
        assert cross_view_consistency([a, a.copy(), a.copy()]) == 0.0

    def test_two_views_single_pair(self):
        a, b = cloud(20), cloud(21)
        assert cross_view_consistency([a, b]) == pytest.approx(chamfer(a, b))

    def test_four_views_mean_over_six_pairs(self):
        views = [cloud(s, 24) for s in range(4)]
        pairs = [
            chamfer(views[i], views[j]) for i in range(4) for j in range(i + 1, 4)
        ]
        assert len(pairs) == 6
        assert cross_view_consistency(views) == pytest.approx(np.mean(pairs), abs=1e-12)

    def test_fewer_than_two_rejected(self):
        with pytest.raises(ValueError):
            cross_view_consistency([cloud(0)])

    def test_report_has_all_metrics(self):
        rep = cross_view_report([cloud(1, 16), cloud(2, 16)])
        assert set(rep) == {"cd", "emd", "f_score", "n_pairs"}


class TestToyFid:
    def test_identical_sets_near_zero(self):
        clouds = [cloud(s, 48) for s in range(6)]
        assert toy_fid(clouds, [c.copy() for c in clouds]) < 1e-4

    def test_translated_sets_positive(self):
        gen = [cloud(s, 48) for s in range(6)]
        ref = [c * 0.3 + 0.5 for c in gen]
        assert toy_fid(gen, ref) > 1e-3

    def test_matches_closed_form_on_known_gaussians(self):
        rng = np.random.default_rng(42)
        dim = 4
        mu1, mu2 = np.zeros(dim), np.full(dim, 0.5)
        cov1 = np.eye(dim) * 0.5
        cov2 = np.eye(dim) * 0.8
        f1 = rng.multivariate_normal(mu1, cov1, size=6000)
        f2 = rng.multivariate_normal(mu2, cov2, size=6000)
        expected = frechet_gaussian(mu1, cov1, mu2, cov2)
        got = frechet_from_features(f1, f2)
        assert got == pytest.approx(expected, rel=0.05)

    def test_feature_map_frozen_and_checksummed(self):
        a, b = FeatureMap(32, 7), FeatureMap(32, 7)
        assert a.checksum() == b.checksum()
        assert FeatureMap(32, 8).checksum() != a.checksum()
        pts = cloud(0)
        assert np.array_equal(a.features(pts), b.features(pts))


class TestReport:
    def test_evaluate_pairs_structure(self):
        a, b = cloud(30, 32), cloud(31, 32)
        rep = evaluate_pairs(
            [("s0", a, b), ("s1", b, a)],
            cross_view_groups={"s0": [a, b]},
            fid_pair=([a, b], [b, a]),
        )
        d = rep.to_dict()
        assert {"header", "per_sample", "aggregates", "cross_view", "fid"} <= set(d)
        assert d["cross_view"]["aggregates"]["cd"] == pytest.approx(chamfer(a, b))
        text = rep.to_text_table()
        assert "CD" in text and "EMD" in text and "F-score" in text
        assert "cross-view" in text

    def test_no_cross_view_block_for_single_views(self):
        a, b = cloud(32, 16), cloud(33, 16)
        rep = evaluate_pairs([("s0", a, b)], cross_view_groups={"s0": [a]})
        assert rep.cross_view is None


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_nonnegativity_property(seed):
    a, b = cloud(seed, 12), cloud(seed + 1, 12)
    assert chamfer(a, b) >= 0.0
    assert emd(a, b) >= 0.0
    assert 0.0 <= f_score(a, b) <= 1.0
