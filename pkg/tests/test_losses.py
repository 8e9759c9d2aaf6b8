import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsalign import losses as L
from vsalign.gradcheck import check_gradients
from vsalign.losses import DegenerateMapError
from vsalign.tensor import Tensor


def sim_oracle(p, g):
    p = p / p.sum()
    g = g / g.sum()
    total = 0.0
    for a, b in zip(p.ravel(), g.ravel()):
        total += min(a, b)
    return -total


def pairwise_auc(pos, neg):
    """Probability a positive outscores a negative, ties counted half."""
    pos, neg = np.asarray(pos)[:, None], np.asarray(neg)[None, :]
    return float(np.mean((pos > neg) + 0.5 * (pos == neg)))


def rand_maps(seed, shape=(3, 6, 7)):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.01, 1, shape), rng.uniform(0.01, 1, shape)


class TestNss:
    def test_hand_value_fixated_peak(self):
        p = np.array([[0.0, 0.0, 0.0, 2.0]])
        q = np.array([[0.0, 0.0, 0.0, 1.0]])
        assert abs(L.loss_nss(p, q).item() + math.sqrt(3)) < 1e-10

    def test_hand_value_fixated_background(self):
        p = np.array([[0.0, 0.0, 0.0, 2.0]])
        q = np.array([[1.0, 0.0, 0.0, 0.0]])
        assert abs(L.loss_nss(p, q).item() - 0.5 / math.sqrt(0.75)) < 1e-10

    def test_all_pixels_fixated_is_zero(self):
        p, _ = rand_maps(0)
        assert abs(L.loss_nss(p, np.ones_like(p)).item()) < 1e-10

    def test_constant_prediction_rejected(self):
        with pytest.raises(DegenerateMapError):
            L.loss_nss(np.ones((4, 4)), np.eye(4))

    def test_empty_fixations_rejected(self):
        with pytest.raises(DegenerateMapError):
            L.loss_nss(np.arange(16.0).reshape(4, 4), np.zeros((4, 4)))

    def test_per_map_average(self):
        p, _ = rand_maps(1)
        q = np.zeros_like(p)
        q[:, 2, 3] = 1
        q[1, 0, 0] = 1
        per = [L.loss_nss(p[i], q[i]).item() for i in range(3)]
        assert abs(L.loss_nss(p, q).item() - np.mean(per)) < 1e-12


class TestSim:
    def test_identical_is_minus_one(self):
        p, _ = rand_maps(2)
        assert abs(L.loss_sim(p, p * 3.7).item() + 1) < 1e-10

    def test_disjoint_support_is_zero(self):
        p = np.zeros((4, 4))
        g = np.zeros((4, 4))
        p[:2] = 1
        g[2:] = 1
        assert L.loss_sim(p, g).item() == 0

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_scalar_loop(self, seed):
        p, g = rand_maps(seed, (5, 6))
        assert abs(L.loss_sim(p, g).item() - sim_oracle(p, g)) < 1e-12

    def test_range(self):
        p, g = rand_maps(3)
        assert -1 <= L.loss_sim(p, g).item() <= 0

    def test_zero_map_rejected(self):
        with pytest.raises(DegenerateMapError):
            L.loss_sim(np.zeros((3, 3)), np.ones((3, 3)))


class TestCc:
    def test_self_correlation(self):
        _, g = rand_maps(4)
        assert abs(L.loss_cc(g, g).item() + 1) < 1e-10

    @pytest.mark.parametrize("a,b", [(2.5, -1.0), (0.01, 3.0), (100.0, 0.0)])
    def test_positive_affine(self, a, b):
        _, g = rand_maps(5)
        assert abs(L.loss_cc(a * g + b, g).item() + 1) < 1e-10

    def test_anti_correlation(self):
        _, g = rand_maps(6)
        assert abs(L.loss_cc(-g, g).item() - 1) < 1e-10

    def test_affine_invariance_in_prediction(self):
        p, g = rand_maps(7)
        assert abs(L.loss_cc(3 * p + 2, g).item() - L.loss_cc(p, g).item()) < 1e-12

    def test_matches_numpy_corrcoef(self):
        p, g = rand_maps(8, (6, 5))
        assert abs(L.loss_cc(p, g).item() + np.corrcoef(p.ravel(), g.ravel())[0, 1]) < 1e-12

    def test_constant_rejected(self):
        with pytest.raises(DegenerateMapError):
            L.loss_cc(np.ones((3, 3)), np.eye(3))


class TestKl:
    def test_identical_is_zero(self):
        _, g = rand_maps(9)
        assert abs(L.loss_kl(g, g).item()) <= 1e-8

    def test_hand_value_log2(self):
        g = np.array([[1.0, 0.0]])
        p = np.array([[0.5, 0.5]])
        assert abs(L.loss_kl(p, g).item() - math.log(2)) < 1e-7

    def test_asymmetric(self):
        p, g = rand_maps(10)
        assert abs(L.loss_kl(p, g).item() - L.loss_kl(g, p).item()) > 1e-6

    def test_lower_bound(self):
        for seed in range(5):
            p, g = rand_maps(20 + seed)
            assert L.loss_kl(p, g).item() >= -L.EPS * p[0].size

    def test_zero_map_rejected(self):
        with pytest.raises(DegenerateMapError):
            L.loss_kl(np.ones((3, 3)), np.zeros((3, 3)))


class TestTotal:
    def test_composition_at_ground_truth(self):
        _, g = rand_maps(11, (4, 5))
        q = (g == g.max()).astype(float)
        total = L.loss_total(g, q, g).item()
        assert abs(total - (-2 + L.loss_nss(g, q).item())) < 1e-7

    def test_permutation_invariance(self):
        p, g = rand_maps(12, (5, 6))
        q = np.zeros_like(p)
        q[1, 2] = q[3, 4] = 1
        perm = np.random.default_rng(13).permutation(p.size)
        shuffle = lambda m: m.ravel()[perm].reshape(m.shape)
        a = L.loss_total(p, q, g).item()
        b = L.loss_total(shuffle(p), shuffle(q), shuffle(g)).item()
        assert abs(a - b) < 1e-12

    def test_gradient(self):
        rng = np.random.default_rng(14)
        p = Tensor(rng.uniform(0.05, 1, (2, 4, 5)))
        g = rng.uniform(0.05, 1, (2, 4, 5))
        q = np.zeros((2, 4, 5))
        q[0, 1, 1] = q[1, 3, 2] = 1
        errs = check_gradients(lambda: L.loss_total(p, q, g), [p])
        assert max(errs.values()) < 1e-4

    def test_nss_frames_subset(self):
        p, g = rand_maps(15)
        q = np.zeros_like(p)
        q[0, 1, 1] = q[2, 4, 4] = 1
        terms = L.loss_terms(p, q, g, nss_frames=[0, 2])
        assert abs(terms["nss"].item() - L.loss_nss(p[[0, 2]], q[[0, 2]]).item()) < 1e-12

    def test_single_channel_4d_accepted(self):
        p, g = rand_maps(16)
        assert abs(L.loss_cc(p[:, None], g[:, None]).item() - L.loss_cc(p, g).item()) < 1e-15


class TestAuc:
    def test_perfect_separation(self):
        p = np.zeros((5, 5))
        q = np.zeros((5, 5))
        p[1, 1] = p[3, 2] = 1.0
        q[1, 1] = q[3, 2] = 1
        assert abs(L.metric_auc_j(p, q) - 1.0) < 1e-9

    def test_inverted(self):
        q = np.zeros((4, 4))
        q[0, :2] = 1
        assert L.metric_auc_j(1 - q, q) == 0.0

    def test_uniform_random_near_half(self):
        rng = np.random.default_rng(17)
        scores = []
        for _ in range(100):
            q = np.zeros((16, 16))
            q.ravel()[rng.choice(256, 8, replace=False)] = 1
            scores.append(L.metric_auc_j(rng.uniform(size=(16, 16)), q))
        assert 0.45 <= np.mean(scores) <= 0.55

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_pairwise_oracle(self, seed):
        rng = np.random.default_rng(seed)
        # coarse values force ties
        p = rng.integers(0, 5, size=(6, 6)).astype(float)
        q = np.zeros((6, 6))
        q.ravel()[rng.choice(36, rng.integers(1, 6), replace=False)] = 1
        m = q > 0
        assert abs(L.metric_auc_j(p, q) - pairwise_auc(p[m], p[~m])) < 1e-12

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(18)
        p = rng.uniform(size=(8, 8))
        q = np.zeros((8, 8))
        q.ravel()[[3, 17, 40]] = 1
        assert L.metric_auc_j(p, q) == L.metric_auc_j(np.exp(5 * p) - 3, q)

    def test_degenerate_fixations(self):
        with pytest.raises(DegenerateMapError):
            L.metric_auc_j(np.eye(3), np.zeros((3, 3)))
        with pytest.raises(DegenerateMapError):
            L.metric_auc_j(np.eye(3), np.ones((3, 3)))


class TestShuffledAuc:
    def test_perfect_separation(self):
        q = np.zeros((5, 5))
        s = np.zeros((5, 5))
        q[0, 0] = q[4, 4] = 1
        s[2, 2] = s[1, 3] = s[0, 0] = 1
        assert L.metric_sauc(q * 2.0 + 0.1, q, s) == 1.0

    def test_negatives_exclude_own_fixations(self):
        q = np.zeros((3, 3))
        q[0, 0] = 1
        with pytest.raises(DegenerateMapError):
            L.metric_sauc(np.eye(3), q, q)

    def test_uniform_random_near_half(self):
        rng = np.random.default_rng(19)
        scores = []
        for _ in range(100):
            q = np.zeros((16, 16))
            s = np.zeros((16, 16))
            q.ravel()[rng.choice(256, 6, replace=False)] = 1
            s.ravel()[rng.choice(256, 40, replace=False)] = 1
            scores.append(L.metric_sauc(rng.uniform(size=(16, 16)), q, s))
        assert 0.45 <= np.mean(scores) <= 0.55

    def test_center_prior_is_discounted(self):
        rng = np.random.default_rng(20)
        h, w = 24, 32
        yy, xx = np.mgrid[0:h, 0:w]
        prior = np.exp(-((yy - h / 2) ** 2 + (xx - w / 2) ** 2) / (2 * 4.0 ** 2))

        def draw(n):
            m = np.zeros((h, w))
            ys = np.clip(np.round(rng.normal(h / 2, 4.0, n)), 0, h - 1).astype(int)
            xs = np.clip(np.round(rng.normal(w / 2, 4.0, n)), 0, w - 1).astype(int)
            m[ys, xs] = 1
            return m

        scores = []
        for _ in range(200):
            q, s = draw(8), draw(60)
            if not (s > q).any():
                continue
            scores.append(L.metric_sauc(prior, q, s))
        assert 0.45 <= np.mean(scores) <= 0.55
        # the same prior looks strong under Judd AUC
        assert L.metric_auc_j(prior, draw(8)) > 0.8


class TestMetrics:
    def test_sign_convention_on_ground_truth(self):
        _, g = rand_maps(21, (6, 6))
        assert abs(L.metric_sim(g, g) - 1) < 1e-10
        assert abs(L.metric_cc(g, g) - 1) < 1e-10
        assert abs(L.metric_kl(g, g)) < 1e-8

    def test_metrics_accept_float32(self):
        p, g = rand_maps(22, (5, 5))
        assert abs(L.metric_cc(p.astype(np.float32), g) - L.metric_cc(p.astype(np.float32).astype(float), g)) == 0
