import math

import numpy as np
import pytest

from qbba_lab.numerics import (bilinear_resize, clamp_unit, dct2, idct2,
                               perturbation_norm, project_to_ball, softmax)
from qbba_lab.rng import RngStream


def brute_force_dct2(m):
    """Direct double-sum evaluation of the orthonormal DCT-II definition."""
    n = m.shape[0]
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += (m[i, j]
                            * math.cos(math.pi * (2 * i + 1) * u / (2 * n))
                            * math.cos(math.pi * (2 * j + 1) * v / (2 * n)))
            cu = math.sqrt(1.0 / n) if u == 0 else math.sqrt(2.0 / n)
            cv = math.sqrt(1.0 / n) if v == 0 else math.sqrt(2.0 / n)
            out[u, v] = cu * cv * acc
    return out


class TestSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3],
                                   rtol=1e-14)

    def test_large_logits_no_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] == pytest.approx(0.0, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite logits"):
            softmax([np.nan, 0.0])
        with pytest.raises(ValueError, match="non-finite logits"):
            softmax([np.inf, 0.0])

    def test_sums_to_one_property(self):
        rng = RngStream(11)
        for _ in range(200):
            v = 100.0 * rng.gaussian(int(rng.integers(1, 40)))
            out = softmax(v)
            assert abs(out.sum() - 1.0) <= 1e-12
            assert np.all(out >= 0)


class TestDct:
    def test_constant_matrix_dc_only(self):
        for s in range(2, 33):
            c = 0.7
            coeffs = dct2(np.full((s, s), c))
            assert coeffs[0, 0] == pytest.approx(c * s, rel=1e-12)
            rest = coeffs.copy()
            rest[0, 0] = 0.0
            assert np.max(np.abs(rest)) < 1e-9

    def test_round_trip_all_sizes(self):
        rng = RngStream(5)
        for s in range(2, 33):
            m = rng.gaussian((s, s))
            assert np.max(np.abs(idct2(dct2(m)) - m)) <= 1e-9

    def test_2x2_against_brute_force(self):
        m = np.array([[1.0, 0.0], [0.0, 0.0]])
        expected = brute_force_dct2(m)
        np.testing.assert_allclose(expected, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
        np.testing.assert_allclose(dct2(m), expected, atol=1e-12)

    def test_random_8x8_against_brute_force(self):
        m = RngStream(9).gaussian((8, 8))
        np.testing.assert_allclose(dct2(m), brute_force_dct2(m), atol=1e-10)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            dct2(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            idct2(np.zeros((4, 2)))


class TestProjectToBall:
    def test_inside_unchanged(self):
        x = np.array([0.1, -0.1])
        out = project_to_ball(x, np.zeros(2), 0.5, "l2")
        assert out is x

    def test_linf_clamp_to_paper_budget(self):
        x = np.full((3,), 0.1)
        out = project_to_ball(x, np.zeros(3), 0.03, "linf")
        np.testing.assert_array_equal(out, np.full((3,), 0.03))

    def test_l2_radial_rescale(self):
        x = np.array([0.4, 0.0])
        out = project_to_ball(x, np.zeros(2), 0.2, "l2")
        np.testing.assert_allclose(out, x * 0.5, rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            project_to_ball(np.zeros(3), np.zeros(4), 1.0, "linf")

    def test_constraint_always_satisfied(self):
        rng = RngStream(3)
        for _ in range(100):
            x = 3.0 * rng.gaussian((4, 4, 1))
            x0 = rng.uniform((4, 4, 1))
            eps = float(rng.uniform()) + 0.01
            linf = project_to_ball(x, x0, eps, "linf")
            assert np.max(np.abs(linf - x0)) <= eps  # exact
            l2 = project_to_ball(x, x0, eps, "l2")
            assert perturbation_norm(l2, x0, "l2") <= eps * (1 + 1e-12)


class TestClampUnit:
    def test_examples(self):
        np.testing.assert_array_equal(clamp_unit(np.array([-0.1, 0.5, 1.2])),
                                      np.array([0.0, 0.5, 1.0]))

    def test_identity_on_valid(self):
        x = np.array([0.0, 0.25, 1.0])
        np.testing.assert_array_equal(clamp_unit(x), x)

    def test_idempotent(self):
        x = RngStream(1).gaussian((5, 5, 1)) * 2
        once = clamp_unit(x)
        np.testing.assert_array_equal(clamp_unit(once), once)


class TestBilinearResize:
    def test_same_size_is_identity(self):
        img = RngStream(2).uniform((16, 16, 1))
        np.testing.assert_array_equal(bilinear_resize(img, 16), img)

    def test_constant_preserved(self):
        img = np.full((16, 16, 3), 0.37)
        out = bilinear_resize(img, 11)
        np.testing.assert_allclose(out, 0.37, rtol=1e-12)

    def test_corners_aligned(self):
        img = np.zeros((8, 8, 1))
        img[0, 0, 0] = 1.0
        img[7, 7, 0] = 0.5
        out = bilinear_resize(img, 5)
        assert out[0, 0, 0] == pytest.approx(1.0)
        assert out[4, 4, 0] == pytest.approx(0.5)
