import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bernet import bounds as B
from bernet.bernstein import BernsteinPoly


def corners_image(weight, bias, box):
    """Brute-force affine image over all box corners (exact for affine maps)."""
    pts = np.array(list(itertools.product(*zip(box.lo, box.hi))))
    out = pts @ weight.T + bias
    return out.min(axis=0), out.max(axis=0)


class TestBoxBounds:
    def test_validation(self):
        with pytest.raises(ValueError):
            B.BoxBounds([0.0, 1.0], [1.0, 0.5])
        with pytest.raises(ValueError):
            B.BoxBounds([0.0, float("nan")], [1.0, 1.0])
        with pytest.raises(ValueError):
            B.BoxBounds([0.0], [1.0, 2.0])

    def test_inf_allowed(self):
        box = B.BoxBounds([-np.inf, 0.0], [1.0, np.inf])
        assert not box.is_finite()

    def test_geometry_helpers(self):
        box = B.BoxBounds([0.0, -1.0], [2.0, 1.0])
        assert np.allclose(box.center, [1.0, 0.0])
        assert np.allclose(box.radius, [1.0, 1.0])
        assert box.contains([0.5, 0.0])
        assert not box.contains([2.5, 0.0])
        assert box.contains_box(B.BoxBounds([0.5, 0.0], [1.0, 0.5]))


class TestAffineIBP:
    def test_identity(self):
        box = B.BoxBounds([0.0, -1.0], [1.0, 2.0])
        out = B.affine_ibp(np.eye(2), np.zeros(2), box)
        assert np.allclose(out.lo, box.lo) and np.allclose(out.hi, box.hi)

    def test_difference_row(self):
        # oracle: corner enumeration of [x1 - x2] over the unit square
        box = B.BoxBounds([0.0, 0.0], [1.0, 1.0])
        w = np.array([[1.0, -1.0]])
        lo, hi = corners_image(w, np.zeros(1), box)
        out = B.affine_ibp(w, np.zeros(1), box)
        assert np.allclose(out.lo, lo) and np.allclose(out.hi, hi)
        assert out.lo[0] == pytest.approx(-1.0) and out.hi[0] == pytest.approx(1.0)

    def test_monotone_scalar(self):
        out = B.affine_ibp(np.array([[2.0]]), np.array([3.0]),
                           B.BoxBounds([-1.0], [1.0]))
        assert out.lo[0] == pytest.approx(1.0) and out.hi[0] == pytest.approx(5.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.integers(1, 10), st.integers(1, 6))
    def test_exactness_vs_corner_enumeration(self, seed, d_in, d_out):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(d_out, d_in))
        b = rng.normal(size=d_out)
        lo = rng.normal(size=d_in)
        box = B.BoxBounds(lo, lo + rng.uniform(0, 2, d_in))
        out = B.affine_ibp(w, b, box)
        clo, chi = corners_image(w, b, box)
        assert np.allclose(out.lo, clo, atol=1e-10)
        assert np.allclose(out.hi, chi, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            B.affine_ibp(np.ones((2, 3)), np.zeros(2), B.BoxBounds([0.0], [1.0]))

    def test_infinite_entries_propagate_soundly(self):
        box = B.BoxBounds([-np.inf, 0.0], [np.inf, 1.0])
        w = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
        out = B.affine_ibp(w, np.zeros(3), box)
        assert out.lo[0] == -np.inf and out.hi[0] == np.inf
        assert out.lo[1] == 0.0 and out.hi[1] == 2.0  # zero weight kills the inf
        assert out.lo[2] == -np.inf and out.hi[2] == np.inf


class TestConvIBP:
    def test_zero_kernel_gives_bias(self, rng):
        kernel = np.zeros((2, 1, 3, 3))
        bias = np.array([0.7, -0.2])
        box = B.BoxBounds(np.zeros(25), np.ones(25))
        out = B.conv_ibp(kernel, bias, 1, 0, (1, 5, 5), box)
        lo = out.lo.reshape(2, 3, 3)
        hi = out.hi.reshape(2, 3, 3)
        for c in range(2):
            assert np.allclose(lo[c], bias[c]) and np.allclose(hi[c], bias[c])

    def test_one_by_one_identity(self):
        kernel = np.ones((1, 1, 1, 1))
        box = B.BoxBounds(np.arange(9.0) / 10, np.arange(9.0) / 10 + 0.5)
        out = B.conv_ibp(kernel, np.zeros(1), 1, 0, (1, 3, 3), box)
        assert np.allclose(out.lo, box.lo) and np.allclose(out.hi, box.hi)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_matches_unrolled_matrix(self, rng, stride, padding):
        # oracle: explicit unrolling of the convolution into a dense matrix
        kernel = rng.normal(size=(2, 1, 3, 3))
        bias = rng.normal(size=2)
        lo = rng.uniform(-1, 0, 25)
        box = B.BoxBounds(lo, lo + rng.uniform(0, 1, 25))
        w_rows = []
        for j in range(25):
            e = np.zeros((1, 25))
            e[0, j] = 1.0
            w_rows.append(B.conv_forward(e, kernel, np.zeros(2), stride, padding, (1, 5, 5))[0])
        w = np.array(w_rows).T
        full_bias = B.conv_forward(np.zeros((1, 25)), kernel, bias, stride, padding, (1, 5, 5))[0]
        out = B.conv_ibp(kernel, bias, stride, padding, (1, 5, 5), box)
        ref = B.affine_ibp(w, full_bias, box)
        assert np.allclose(out.lo, ref.lo, atol=1e-12)
        assert np.allclose(out.hi, ref.hi, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            B.conv_ibp(np.zeros((1, 1, 3, 3)), np.zeros(1), 1, 0, (1, 5, 5),
                       B.BoxBounds(np.zeros(16), np.ones(16)))


class TestGlobalEnclosure:
    def test_worked_example(self):
        out = B.bern_global_enclosure(np.array([[1.0, 2 / 3, 2 / 3, 2.0]]))
        assert out.lo[0] == pytest.approx(2 / 3) and out.hi[0] == pytest.approx(2.0)

    def test_constant_rows_zero_width(self):
        coeffs = np.full((3, 5), 1.25)
        out = B.bern_global_enclosure(coeffs)
        assert np.all(out.width == 0.0)

    def test_random_rows_min_max(self, rng):
        coeffs = rng.normal(size=(3, 6))
        out = B.bern_global_enclosure(coeffs)
        assert np.allclose(out.lo, coeffs.min(axis=1))
        assert np.allclose(out.hi, coeffs.max(axis=1))


class TestRefinedEnclosure:
    def _layer(self, rng, m=4, n=4, lo=-1.0, hi=2.0):
        coeffs = rng.normal(size=(m, n + 1))
        return coeffs, np.full(m, lo), np.full(m, hi)

    def test_full_domain_equals_global(self, rng):
        coeffs, slo, shi = self._layer(rng)
        box = B.BoxBounds(slo, shi)
        ref = B.bern_refined_enclosure(coeffs, slo, shi, box)
        glob = B.bern_global_enclosure(coeffs)
        assert np.array_equal(ref.lo, glob.lo)
        assert np.array_equal(ref.hi, glob.hi)

    def test_worked_subinterval(self):
        coeffs = np.array([[1.0, 2 / 3, 2 / 3, 2.0]])
        ref = B.bern_refined_enclosure(coeffs, np.zeros(1), np.ones(1),
                                       B.BoxBounds([0.6], [0.8]))
        assert ref.lo[0] == pytest.approx(0.976, abs=1e-3)
        assert ref.hi[0] == pytest.approx(1.352, abs=1e-3)

    def test_contains_samples_and_inside_global(self, rng):
        # oracle: dense sampling of each neuron's polynomial on the sub-box
        coeffs, slo, shi = self._layer(rng, m=6, n=5)
        a = rng.uniform(-1, 0.5, 6)
        b = a + rng.uniform(0, 1.0, 6)
        ref = B.bern_refined_enclosure(coeffs, slo, shi, B.BoxBounds(a, b))
        glob = B.bern_global_enclosure(coeffs)
        for i in range(6):
            p = BernsteinPoly(coeffs[i], slo[i], shi[i])
            xs = np.linspace(a[i], b[i], 2000)
            vals = p.eval(xs)
            assert vals.min() >= ref.lo[i] - 1e-9
            assert vals.max() <= ref.hi[i] + 1e-9
        assert np.all(ref.lo >= glob.lo - 1e-12)
        assert np.all(ref.hi <= glob.hi + 1e-12)

    def test_out_of_domain_box_clipped_with_warning(self, rng):
        coeffs, slo, shi = self._layer(rng)
        wide = B.BoxBounds(slo - 1.0, shi + 1.0)
        with pytest.warns(B.DomainClipWarning):
            ref = B.bern_refined_enclosure(coeffs, slo, shi, wide)
        glob = B.bern_global_enclosure(coeffs)
        assert np.array_equal(ref.lo, glob.lo)
        assert np.array_equal(ref.hi, glob.hi)


class TestNaiveEnclosure:
    def test_contains_refined(self, rng):
        for _ in range(50):
            m, n = 5, int(rng.integers(1, 7))
            coeffs = rng.normal(size=(m, n + 1))
            slo = rng.uniform(-2, 0, m)
            shi = slo + rng.uniform(0.5, 3, m)
            a = rng.uniform(slo, shi)
            b = rng.uniform(a, shi)
            box = B.BoxBounds(a, b)
            naive = B.bern_naive_enclosure(coeffs, slo, shi, box)
            ref = B.bern_refined_enclosure(coeffs, slo, shi, box)
            assert np.all(naive.lo <= ref.lo + 1e-12)
            assert np.all(naive.hi >= ref.hi - 1e-12)

    def test_sound_for_samples(self, rng):
        coeffs = rng.normal(size=(4, 6))
        slo, shi = np.full(4, -1.0), np.full(4, 1.5)
        a, b = np.full(4, -0.5), np.full(4, 1.0)
        naive = B.bern_naive_enclosure(coeffs, slo, shi, B.BoxBounds(a, b))
        xs = rng.uniform(-0.5, 1.0, (5000, 4))
        vals = B.bern_point_eval(coeffs, slo, shi, xs)
        assert np.all(vals >= naive.lo - 1e-9)
        assert np.all(vals <= naive.hi + 1e-9)

    def test_degenerate_box_is_exact(self, rng):
        coeffs = rng.normal(size=(4, 5))
        slo, shi = np.full(4, 0.0), np.full(4, 1.0)
        x = rng.uniform(0, 1, 4)
        naive = B.bern_naive_enclosure(coeffs, slo, shi, B.BoxBounds(x, x))
        vals = B.bern_point_eval(coeffs, slo, shi, x)
        assert np.array_equal(naive.lo, vals)
        assert np.array_equal(naive.hi, vals)


def test_propagation_counter_increments(rng):
    before = B.propagation_ops()
    B.affine_ibp(np.eye(2), np.zeros(2), B.BoxBounds([0.0, 0.0], [1.0, 1.0]))
    B.bern_global_enclosure(np.ones((2, 3)))
    assert B.propagation_ops() >= before + 2
