import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gpbounds import kernels
from gpbounds.kernels import Grid, KernelSpec
from gpbounds.rkhs_sampler import (Onb, PreRkhs, RkhsFunction, evaluate, onb_basis,
                                   sample_onb, sample_pre_rkhs)

GRID = Grid.uniform(-1, 1, 1000)
SUB = np.linspace(-1, 1, 100)

# max |sum_{n<50} e_n(x) e_n(x') - k(x, x')| on the 100-point subgrid,
# from tests/oracles/derive.py (exact-rational weights): 6.95e-6 and 4.4e-16
ONB_TOL = {0.2: 1e-5, 0.5: 1e-12}


def basis_direct(n, x, ell):
    s = 1 / (2 * ell ** 2)
    return math.sqrt((2 * s) ** n / math.factorial(n)) * x ** n * math.exp(-s * x * x)


class TestOnbBasis:
    @pytest.mark.parametrize("ell", [0.2, 0.5])
    def test_reproducing_expansion(self, ell):
        E = onb_basis(range(50), SUB, ell)
        err = np.abs(E.T @ E - KernelSpec.se(ell)(SUB[:, None], SUB[None, :])).max()
        assert err < ONB_TOL[ell]

    def test_truncation_improves(self):
        K = KernelSpec.se(0.2)(SUB[:, None], SUB[None, :])
        errs = [np.abs(onb_basis(range(n), SUB, 0.2).T @ onb_basis(range(n), SUB, 0.2) - K).max()
                for n in (10, 20, 35, 50)]
        assert all(a > b for a, b in zip(errs, errs[1:]))

    def test_matches_direct_formula(self):
        for n in (0, 1, 7, 30, 49):
            for x in (-0.9, -0.2, 0.0, 0.35, 1.0):
                assert onb_basis([n], [x], 0.2)[0, 0] == pytest.approx(basis_direct(n, x, 0.2),
                                                                       rel=1e-11, abs=1e-300)

    def test_zeroth(self):
        x = np.linspace(-1, 1, 11)
        np.testing.assert_allclose(onb_basis([0], x, 0.5)[0], np.exp(-2 * x ** 2))

    def test_no_warnings_at_zero(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            E = onb_basis(range(50), [0.0, -1e-300], 0.2)
        np.testing.assert_array_equal(E[:, 0], np.eye(50)[0])
        assert np.all(np.isfinite(E))


class TestPreRkhs:
    def test_single_center(self):
        k = KernelSpec.se(0.3)
        f = sample_pre_rkhs(k, GRID, 2.0, n_min=1, n_max=1, rng=0)
        c, a = f.representation.centers, f.representation.coefficients
        assert abs(a[0]) == pytest.approx(2.0)
        assert f(c[0]) == pytest.approx(a[0] * k(c[0], c[0]))
        assert f.norm() == pytest.approx(2.0, rel=1e-12)

    @pytest.mark.parametrize("kernel", [KernelSpec.se(0.2), KernelSpec.matern32(0.2),
                                        KernelSpec.se(0.8, 4.0)])
    def test_defaults_norm_and_bound(self, kernel):
        for seed in range(5):
            f = sample_pre_rkhs(kernel, GRID, 2.0, rng=seed)
            rep = f.representation
            assert 5 <= rep.centers.size <= 200
            assert np.unique(rep.centers).size == rep.centers.size
            assert np.isin(rep.centers, GRID.points).all()
            # recompute the norm from scratch
            K = kernel(rep.centers[:, None], rep.centers[None, :])
            assert math.sqrt(rep.coefficients @ K @ rep.coefficients) == pytest.approx(2.0, rel=1e-8)
            assert np.all(np.abs(f(GRID.points)) <= 2.0 * math.sqrt(kernel.variance) + 1e-12)

    def test_zero_norm(self):
        f = sample_pre_rkhs(KernelSpec.se(0.2), GRID, 0.0, rng=1)
        np.testing.assert_array_equal(f(GRID.points), 0.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sample_pre_rkhs(KernelSpec.se(0.2), GRID, 2.0, n_min=10, n_max=5)
        with pytest.raises(ValueError):
            sample_pre_rkhs(KernelSpec.se(0.2), Grid.uniform(0, 1, 3), 2.0, n_min=1, n_max=5)
        with pytest.raises(ValueError):
            sample_pre_rkhs(KernelSpec.se(0.2), GRID, -1.0)

    def test_deterministic(self):
        a = sample_pre_rkhs(KernelSpec.se(0.2), GRID, 2.0, rng=42)
        b = sample_pre_rkhs(KernelSpec.se(0.2), GRID, 2.0, rng=42)
        np.testing.assert_array_equal(a(GRID.points), b(GRID.points))

    def test_dual_transcription(self):
        f = sample_pre_rkhs(KernelSpec.matern32(0.2), GRID, 2.0, rng=3)
        rep = f.representation
        x = GRID.points[::37]
        ref = [sum(a * (1 + math.sqrt(3) * abs(c - xi) / 0.2) * math.exp(-math.sqrt(3) * abs(c - xi) / 0.2)
                   for a, c in zip(rep.coefficients, rep.centers)) for xi in x]
        np.testing.assert_allclose(evaluate(f, x), ref, rtol=1e-10, atol=1e-12)


class TestOnb:
    def test_single_basis(self):
        f = RkhsFunction(Onb(np.array([3]), np.array([2.0]), KernelSpec.se(0.2)), 2.0)
        x = np.linspace(-1, 1, 7)
        np.testing.assert_allclose(f(x), [2 * basis_direct(3, xi, 0.2) for xi in x], rtol=1e-12)

    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([0.2, 0.5]), st.floats(0.1, 10))
    @settings(max_examples=40, deadline=None)
    def test_norm_and_indices(self, seed, ell, B):
        f = sample_onb(ell, GRID, B, rng=seed)
        rep = f.representation
        assert np.linalg.norm(rep.coefficients) == pytest.approx(B, rel=1e-12)
        assert 5 <= rep.basis_indices.size <= 50
        assert np.unique(rep.basis_indices).size == rep.basis_indices.size
        assert rep.basis_indices.min() >= 0 and rep.basis_indices.max() < 50
        # |f(x)| <= ||f|| sqrt(k(x, x)) = B
        assert np.all(np.abs(f(GRID.points)) <= B * (1 + 1e-9))

    def test_invalid(self):
        with pytest.raises(ValueError):
            sample_onb(0.2, GRID, 1.0, n_min=5, n_max=60)


class TestSerialization:
    @pytest.mark.parametrize("kind", ["pre_rkhs", "onb"])
    def test_roundtrip(self, tmp_path, kind):
        if kind == "onb":
            f = sample_onb(0.2, GRID, 2.0, rng=5)
        else:
            f = sample_pre_rkhs(KernelSpec.matern32(0.2), GRID, 2.0, rng=5)
        f.save(tmp_path / "f.json")
        g = RkhsFunction.load(tmp_path / "f.json")
        assert type(g.representation) is type(f.representation)
        assert g.declared_norm == 2.0
        np.testing.assert_array_equal(g(GRID.points), f(GRID.points))

    def test_unknown_tag(self):
        d = sample_onb(0.2, GRID, 2.0, rng=5).to_dict()
        d["representation"] = "fourier"
        with pytest.raises(ValueError):
            RkhsFunction.from_dict(d)

    def test_pre_rkhs_direct(self):
        k = KernelSpec.se(0.4)
        f = RkhsFunction(PreRkhs(np.array([0.0, 0.5]), np.array([1.0, -1.0]), k), 1.0)
        assert f(0.25) == pytest.approx(0.0, abs=1e-15)
        K = kernels.gram(k, [0.0, 0.5])
        assert f.norm() == pytest.approx(math.sqrt(2 - 2 * K[0, 1]))
