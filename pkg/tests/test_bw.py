import numpy as np
import pytest

from wfm import linalg
from wfm.bw import (
    BwPath,
    DimensionMismatchError,
    Gaussian,
    TangentBW,
    TangentBoundaryError,
    bw_distance_sq,
    bw_exp,
    bw_log,
    bw_mccann,
    bw_ot_matrix,
    bw_tangent_norm_sq,
    bw_velocity,
    frechet_cost_matrix,
)


def random_gaussian(rng, d, mean_scale=1.0):
    m = rng.standard_normal((d, d))
    return Gaussian(mean_scale * rng.standard_normal(d), m @ m.T + 0.1 * np.eye(d))


class TestTypes:
    def test_gaussian_validates_psd(self):
        with pytest.raises(linalg.PsdViolationError):
            Gaussian(np.zeros(2), np.diag([1.0, -1.0]))

    def test_gaussian_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            Gaussian(np.zeros(3), np.eye(2))

    def test_tangent_symmetrized(self):
        v = TangentBW(np.zeros(2), np.array([[0.0, 1.0], [0.0, 0.0]]))
        assert np.allclose(v.S, [[0.0, 0.5], [0.5, 0.0]])

    def test_path_caches_ot_matrix(self):
        src = Gaussian(np.zeros(2), np.eye(2))
        dst = Gaussian(np.ones(2), 4.0 * np.eye(2))
        path = BwPath(src, dst)
        assert np.allclose(path.ot_matrix, 2.0 * np.eye(2))


class TestOtMatrix:
    def test_commuting_diagonal(self):
        src = Gaussian(np.zeros(2), np.eye(2))
        dst = Gaussian(np.zeros(2), 4.0 * np.eye(2))
        assert np.allclose(bw_ot_matrix(src, dst), 2.0 * np.eye(2))

    def test_identity_transport(self):
        rng = np.random.default_rng(0)
        g = random_gaussian(rng, 3)
        same = Gaussian(rng.standard_normal(3), g.cov)
        assert np.allclose(bw_ot_matrix(g, same), np.eye(3), atol=1e-8)

    def test_pushforward_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            src = random_gaussian(rng, 3)
            dst = random_gaussian(rng, 3)
            C = bw_ot_matrix(src, dst)
            assert np.allclose(C, C.T)
            err = np.linalg.norm(C @ src.cov @ C - dst.cov)
            assert err <= 1e-6 * np.linalg.norm(dst.cov)

    def test_rank_deficient_source_warns(self):
        src = Gaussian(np.zeros(2), np.diag([1.0, 0.0]))
        dst = Gaussian(np.zeros(2), np.eye(2))
        with pytest.warns(RuntimeWarning):
            bw_ot_matrix(src, dst)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            bw_ot_matrix(Gaussian(np.zeros(2), np.eye(2)),
                         Gaussian(np.zeros(3), np.eye(3)))


class TestDistance:
    def test_equal_covariances(self):
        m = np.array([1.0, 2.0])
        a = Gaussian(np.zeros(2), np.eye(2))
        b = Gaussian(m, np.eye(2))
        assert bw_distance_sq(a, b) == pytest.approx(float(m @ m))

    def test_commuting_covariances(self):
        a = Gaussian(np.zeros(2), np.eye(2))
        b = Gaussian(np.zeros(2), 4.0 * np.eye(2))
        # Tr(I + 4I - 2*2I) = 2
        assert bw_distance_sq(a, b) == pytest.approx(2.0)

    def test_matches_eig_oracle(self):
        rng = np.random.default_rng(2)
        a = random_gaussian(rng, 3)
        b = random_gaussian(rng, 3)
        # independent evaluation of the trace term through raw eigh calls
        wa, va = np.linalg.eigh(a.cov)
        half = (va * np.sqrt(np.clip(wa, 0, None))) @ va.T
        cross = half @ b.cov @ half
        wc = np.linalg.eigvalsh(cross)
        trace = np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.sqrt(np.clip(wc, 0, None)).sum()
        gap = a.mean - b.mean
        assert bw_distance_sq(a, b) == pytest.approx(float(gap @ gap) + trace, rel=1e-10)

    def test_symmetric_and_zero_on_self(self):
        rng = np.random.default_rng(3)
        a = random_gaussian(rng, 2)
        b = random_gaussian(rng, 2)
        assert bw_distance_sq(a, b) == pytest.approx(bw_distance_sq(b, a), abs=1e-8)
        assert bw_distance_sq(a, a) == pytest.approx(0.0, abs=1e-10)


class TestExpLog:
    def test_log_of_self_is_zero(self):
        rng = np.random.default_rng(4)
        g = random_gaussian(rng, 3)
        v = bw_log(g, g)
        assert np.allclose(v.a, 0.0, atol=1e-9)
        assert np.allclose(v.S, 0.0, atol=1e-7)

    def test_log_scalar_case(self):
        base = Gaussian(np.zeros(2), np.eye(2))
        other = Gaussian(np.array([1.0, -1.0]), 4.0 * np.eye(2))
        v = bw_log(base, other)
        assert np.allclose(v.a, [1.0, -1.0])
        assert np.allclose(v.S, np.eye(2))

    def test_exp_pure_translation(self):
        rng = np.random.default_rng(5)
        g = random_gaussian(rng, 3)
        a = rng.standard_normal(3)
        out = bw_exp(g, TangentBW(a, np.zeros((3, 3))))
        assert np.allclose(out.mean, g.mean + a)
        assert np.allclose(out.cov, g.cov)

    def test_exp_scalar_case(self):
        out = bw_exp(Gaussian(np.zeros(2), np.eye(2)),
                     TangentBW(np.zeros(2), np.eye(2)))
        assert np.allclose(out.cov, 4.0 * np.eye(2))

    def test_exp_boundary_violation(self):
        with pytest.raises(TangentBoundaryError):
            bw_exp(Gaussian(np.zeros(2), np.eye(2)),
                   TangentBW(np.zeros(2), -1.5 * np.eye(2)))

    @pytest.mark.parametrize("d", [1, 2, 3, 16])
    def test_round_trip(self, d):
        rng = np.random.default_rng(60 + d)
        for _ in range(5):
            base = random_gaussian(rng, d)
            target = random_gaussian(rng, d)
            out = bw_exp(base, bw_log(base, target))
            assert np.allclose(out.mean, target.mean, atol=1e-6)
            assert np.linalg.norm(out.cov - target.cov) <= 1e-6 * max(
                np.linalg.norm(target.cov), 1.0)


class TestMccann:
    def test_endpoints(self):
        rng = np.random.default_rng(7)
        src = random_gaussian(rng, 3)
        dst = random_gaussian(rng, 3)
        at0 = bw_mccann(src, dst, 0.0)
        at1 = bw_mccann(src, dst, 1.0)
        assert np.allclose(at0.mean, src.mean, atol=1e-8)
        assert np.allclose(at0.cov, src.cov, atol=1e-8)
        assert np.allclose(at1.mean, dst.mean, atol=1e-6)
        assert np.linalg.norm(at1.cov - dst.cov) <= 1e-6 * np.linalg.norm(dst.cov)

    def test_scalar_midpoint(self):
        src = Gaussian(np.zeros(2), np.eye(2))
        dst = Gaussian(np.zeros(2), 4.0 * np.eye(2))
        mid = bw_mccann(src, dst, 0.5)
        assert np.allclose(mid.cov, 2.25 * np.eye(2))

    def test_constant_speed(self):
        rng = np.random.default_rng(8)
        for _ in range(5):
            src = random_gaussian(rng, 2)
            dst = random_gaussian(rng, 2)
            total = bw_distance_sq(src, dst)
            s, t = 0.2, 0.7
            seg = bw_distance_sq(bw_mccann(src, dst, s), bw_mccann(src, dst, t))
            assert seg == pytest.approx((t - s) ** 2 * total, rel=1e-5, abs=1e-9)

    def test_rejects_t_outside_unit_interval(self):
        src = Gaussian(np.zeros(1), np.eye(1))
        with pytest.raises(ValueError):
            bw_mccann(src, src, 1.5)


class TestVelocity:
    def test_zero_on_self(self):
        rng = np.random.default_rng(9)
        g = random_gaussian(rng, 3)
        v = bw_velocity(g, g, 0.3)
        assert np.allclose(v.a, 0.0, atol=1e-9)
        assert np.allclose(v.S, 0.0, atol=1e-7)

    def test_scalar_at_zero(self):
        src = Gaussian(np.zeros(2), np.eye(2))
        dst = Gaussian(np.array([1.0, 2.0]), 4.0 * np.eye(2))
        v = bw_velocity(src, dst, 0.0)
        assert np.allclose(v.a, [1.0, 2.0])
        assert np.allclose(v.S, np.eye(2))

    def test_scalar_at_half(self):
        src = Gaussian(np.zeros(2), np.eye(2))
        dst = Gaussian(np.array([1.0, 2.0]), 4.0 * np.eye(2))
        v = bw_velocity(src, dst, 0.5)
        assert np.allclose(v.S, (2.0 / 3.0) * np.eye(2))

    def test_matches_finite_difference_of_mccann(self):
        rng = np.random.default_rng(10)
        src = random_gaussian(rng, 2)
        dst = random_gaussian(rng, 2)
        t, h = 0.4, 1e-6
        v = bw_velocity(src, dst, t)
        lo = bw_mccann(src, dst, t - h)
        hi = bw_mccann(src, dst, t + h)
        dm = (hi.mean - lo.mean) / (2 * h)
        dS = (hi.cov - lo.cov) / (2 * h)
        mid = bw_mccann(src, dst, t)
        # Riemannian S relates to the Euclidean derivative via
        # dSigma/dt = S Sigma_t + Sigma_t S
        assert np.allclose(v.a, dm, atol=1e-4)
        assert np.allclose(v.S @ mid.cov + mid.cov @ v.S, dS, atol=1e-4)


class TestTangentNorm:
    def test_zero_tangent(self):
        g = Gaussian(np.zeros(2), np.eye(2))
        assert bw_tangent_norm_sq(g, TangentBW(np.zeros(2), np.zeros((2, 2)))) == 0.0

    def test_identity_base(self):
        g = Gaussian(np.zeros(2), np.eye(2))
        a = np.array([1.0, 2.0])
        S = np.array([[1.0, 0.5], [0.5, 2.0]])
        expected = float(a @ a) + float(np.trace(S @ S))
        assert bw_tangent_norm_sq(g, TangentBW(a, S)) == pytest.approx(expected)

    @pytest.mark.parametrize("d", [1, 2, 3, 16])
    def test_metric_compatibility(self, d):
        rng = np.random.default_rng(80 + d)
        for _ in range(5):
            src = random_gaussian(rng, d)
            dst = random_gaussian(rng, d)
            norm = bw_tangent_norm_sq(src, bw_log(src, dst))
            dist = bw_distance_sq(src, dst)
            assert norm == pytest.approx(dist, rel=1e-6)


class TestFrechetCostMatrix:
    def test_zero_diagonal_on_self(self):
        rng = np.random.default_rng(12)
        batch = [random_gaussian(rng, 2) for _ in range(4)]
        C = frechet_cost_matrix(batch, batch)
        assert np.allclose(np.diag(C), 0.0, atol=1e-8)

    def test_singletons(self):
        rng = np.random.default_rng(13)
        a, b = random_gaussian(rng, 3), random_gaussian(rng, 3)
        C = frechet_cost_matrix([a], [b])
        assert C.shape == (1, 1)
        assert C[0, 0] == pytest.approx(bw_distance_sq(a, b), rel=1e-8)

    def test_matches_scalar_op(self):
        rng = np.random.default_rng(14)
        batch_a = [random_gaussian(rng, 2) for _ in range(4)]
        batch_b = [random_gaussian(rng, 2) for _ in range(4)]
        C = frechet_cost_matrix(batch_a, batch_b)
        for i, a in enumerate(batch_a):
            for j, b in enumerate(batch_b):
                assert C[i, j] == pytest.approx(bw_distance_sq(a, b),
                                                rel=1e-8, abs=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            frechet_cost_matrix([Gaussian(np.zeros(2), np.eye(2))],
                                [Gaussian(np.zeros(3), np.eye(3))])
