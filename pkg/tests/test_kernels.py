import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sirstlab import _pykernels as py
from sirstlab import kernels

cy = pytest.importorskip("sirstlab._ckernels", reason="compiled kernels not built")


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def test_backend_selected():
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("shape, k, stride, pad", [
    ((1, 1, 5, 5), 3, 1, 1), ((2, 3, 8, 6), 3, 1, 1), ((1, 2, 7, 7), 7, 1, 3),
    ((2, 2, 6, 6), 1, 1, 0), ((1, 3, 9, 8), 3, 2, 1), ((1, 1, 4, 4), 3, 1, 0),
])
class TestConvKernels:
    def test_im2col(self, shape, k, stride, pad):
        x = rand(shape, 1)
        assert np.array_equal(cy.im2col(x, k, stride, pad), py.im2col(x, k, stride, pad))

    def test_col2im(self, shape, k, stride, pad):
        n, c, h, w = shape
        ho = (h + 2 * pad - k) // stride + 1
        wo = (w + 2 * pad - k) // stride + 1
        cols = rand((c * k * k, n * ho * wo), 2)
        np.testing.assert_allclose(cy.col2im(cols, shape, k, stride, pad),
                                   py.col2im(cols, shape, k, stride, pad), rtol=0, atol=1e-12)

    def test_adjoint(self, shape, k, stride, pad):
        # <im2col(x), y> == <x, col2im(y)>
        x = rand(shape, 3)
        cols = cy.im2col(x, k, stride, pad)
        y = rand(cols.shape, 4)
        assert np.vdot(cols, y) == pytest.approx(np.vdot(x, cy.col2im(y, shape, k, stride, pad)), rel=1e-12)


class TestPool:
    @pytest.mark.parametrize("shape", [(1, 1, 2, 2), (2, 3, 6, 8), (1, 4, 16, 16)])
    def test_forward_backward(self, shape):
        x = rand(shape, 5)
        oc, ic = cy.maxpool2_forward(x)
        op, ip = py.maxpool2_forward(x)
        assert np.array_equal(oc, op) and np.array_equal(ic, ip)
        g = rand(oc.shape, 6)
        assert np.array_equal(cy.maxpool2_backward(g, ic), py.maxpool2_backward(g, ip))

    def test_ties_first_argmax(self):
        x = np.zeros((1, 1, 2, 4))
        x[0, 0, :, 2:] = 1.0
        for mod in (cy, py):
            _, idx = mod.maxpool2_forward(x)
            assert idx.tolist() == [[[[0, 0]]]]


class TestLabel:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 20), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
    def test_parity(self, h, w, p, seed):
        m = np.random.default_rng(seed).random((h, w)) < p
        lc, nc = cy.label8(m)
        lp, npy = py.label8(m)
        assert nc == npy and np.array_equal(lc, lp)


class TestFilters:
    @pytest.mark.parametrize("shape", [(1, 1), (2, 3), (5, 4), (12, 17)])
    @pytest.mark.parametrize("size", [3, 5, 7])
    def test_min_max(self, shape, size):
        img = rand(shape, 7)
        assert np.array_equal(cy.min_filter(img, size), py.min_filter(img, size))
        assert np.array_equal(cy.max_filter(img, size), py.max_filter(img, size))

    @pytest.mark.parametrize("shape", [(1, 1), (3, 2), (9, 11), (16, 16)])
    @pytest.mark.parametrize("window", [3, 5, 7])
    def test_directional_median(self, shape, window):
        img = rand(shape, 8)
        assert np.array_equal(cy.directional_median_max(img, window), py.directional_median_max(img, window))
