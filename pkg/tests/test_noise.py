import numpy as np
import pytest
from hypothesis import given, strategies as st

from anisons.noise import NoiseMode, NoiseOperator, decay_modes, rng_stream, sample_increment, sample_increments
from anisons.spectral import Grid, h1_norm_sq, l2_inner, l2_norm_sq


@pytest.fixture(scope="module")
def g():
    return Grid(16, 16)


@pytest.fixture(scope="module")
def sigma(g):
    return NoiseOperator(decay_modes(12, 1.0, target_K=0.5), g)


class TestDecayModes:
    def test_target_K(self):
        modes = decay_modes(12, 1.0, target_K=0.04)
        assert sum(m.q**2 for m in modes) == pytest.approx(0.04)

    def test_amplitudes_decay(self):
        q = [m.q for m in decay_modes(6, 2.0, amplitude=1.0)]
        assert q == pytest.approx([j**-2.0 for j in range(1, 7)])

    def test_order_is_by_shell(self):
        m = [(x.m1, x.m2) for x in decay_modes(8, 1.0, amplitude=1.0)]
        assert set(m[:4]) == {(-1, 0), (0, -1), (0, 1), (1, 0)}
        assert all(abs(a) == 1 and abs(b) == 1 for a, b in m[4:8])

    def test_needs_exactly_one_scale(self):
        with pytest.raises(ValueError):
            decay_modes(3, 1.0)
        with pytest.raises(ValueError):
            decay_modes(3, 1.0, amplitude=1.0, target_K=1.0)

    def test_empty(self):
        assert decay_modes(0, 1.0, target_K=1.0) == []


class TestBasis:
    def test_unit_h1_and_orthogonal(self, g, sigma):
        b = sigma.basis_fields()
        J = len(sigma)
        gram = np.array([[l2_inner(b[i], b[j]) for j in range(J)] for i in range(J)])
        assert np.allclose(gram - np.diag(np.diag(gram)), 0, atol=1e-15)
        for j in range(J):
            assert h1_norm_sq(b[j]) == pytest.approx(1.0)

    def test_conforming(self, sigma):
        sigma.basis_fields().check()

    def test_physical_profile(self, g):
        # mode (1, 0): phi = c cos(x1) (0, 1) with c^2 = 2 / (area * 2)
        op = NoiseOperator([(1, 0, 1.0), (-1, 0, 1.0)], g)
        phys = op.basis_fields().to_physical()
        c = np.sqrt(1.0 / g.area)
        X1, _ = np.meshgrid(g.x1, g.x2, indexing="ij")
        assert np.allclose(phys[0, 0], 0, atol=1e-15)
        assert np.allclose(phys[0, 1], c * np.cos(X1), atol=1e-14)
        assert np.allclose(phys[1, 1], c * np.sin(X1), atol=1e-14)

    def test_hs_norms(self, sigma):
        assert sigma.K == pytest.approx(float(np.sum(sigma.q**2)))
        assert sigma.hs_norm_sq("L2") + sigma.hs_norm_sq("H1dot") == pytest.approx(sigma.K)
        with pytest.raises(ValueError):
            sigma.hs_norm_sq("H2")

    def test_l2_share_matches_basis(self, g, sigma):
        b = sigma.basis_fields()
        direct = sum(q * q * l2_norm_sq(b[j]) for j, q in enumerate(sigma.q))
        assert sigma.hs_norm_sq("L2") == pytest.approx(direct)

    def test_sparse_rebuilds_dense(self, g, sigma):
        pos_i, pos_j, npos, coef = sigma.sparse()
        dense = np.zeros_like(sigma.basis)
        for j in range(len(sigma)):
            for p in range(npos[j]):
                dense[j, :, pos_i[j, p], pos_j[j, p]] = coef[j, p]
        assert np.array_equal(dense, sigma.basis)
        assert npos.max() <= 2

    @pytest.mark.parametrize(
        "modes",
        [[(0, 0, 1.0)], [(1, 0, 1.0), (1, 0, 0.5)], [(1, 0, -1.0)], [(9, 0, 1.0)], [(1, 0, float("nan"))]],
    )
    def test_rejects(self, g, modes):
        with pytest.raises(ValueError):
            NoiseOperator(modes, g)


class TestApply:
    @given(st.lists(st.floats(-3, 3), min_size=12, max_size=12))
    def test_projection_recovers_coefficients(self, xs):
        g = Grid(16, 16)
        op = NoiseOperator(decay_modes(12, 1.0, target_K=0.5), g)
        xi = np.array(xs)
        proj = op.projections(op.apply(xi))
        l2 = np.array([l2_norm_sq(op.basis_fields()[j]) for j in range(12)])
        assert np.allclose(proj, op.q * xi * l2, atol=1e-14)

    def test_linear(self, sigma):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, len(sigma)))
        lhs = sigma.apply(2 * a + b).coeffs
        rhs = 2 * sigma.apply(a).coeffs + sigma.apply(b).coeffs
        assert np.allclose(lhs, rhs, atol=1e-15)

    def test_batched(self, sigma):
        xi = np.random.default_rng(1).standard_normal((3, len(sigma)))
        out = sigma.apply(xi)
        assert out.coeffs.shape[0] == 3
        assert np.allclose(sigma.projections(out)[1], sigma.projections(sigma.apply(xi[1])))

    def test_length_mismatch(self, sigma):
        with pytest.raises(ValueError):
            sigma.apply(np.zeros(3))

    def test_mode_dataclass_accepted(self, g):
        op = NoiseOperator([NoiseMode(0, 1, 0.2)], g)
        assert op.K == pytest.approx(0.04)


class TestStreams:
    def test_reproducible(self):
        a = rng_stream(5, "noise", 3).standard_normal(4)
        b = rng_stream(5, "noise", 3).standard_normal(4)
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("other", [(6, "noise", 3), (5, "tails", 3), (5, "noise", 4)])
    def test_distinct(self, other):
        a = rng_stream(5, "noise", 3).standard_normal(4)
        assert not np.array_equal(a, rng_stream(*other).standard_normal(4))

    def test_large_seed(self):
        rng_stream(2**64 - 1, "noise").standard_normal()

    def test_block_equals_single_draws(self, sigma):
        r1, r2 = rng_stream(1, "x"), rng_stream(1, "x")
        block = sample_increments(sigma, r1, 0.01, 5)
        single = np.stack([sample_increment(sigma, r2, 0.01) for _ in range(5)])
        assert np.array_equal(block, single)

    def test_variance(self, sigma):
        x = sample_increments(sigma, rng_stream(0, "v"), 0.01, 20000)
        assert np.var(x) == pytest.approx(0.01, rel=0.03)
        assert abs(np.mean(x)) < 5 * 0.1 / np.sqrt(x.size)

    def test_rejects_bad_dt(self, sigma):
        with pytest.raises(ValueError):
            sample_increment(sigma, rng_stream(0, "x"), 0.0)
