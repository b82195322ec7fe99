import numpy as np
import pytest

from pupilnet import kernels


@pytest.fixture
def stack(rng):
    return rng.random((3, 13, 17)), rng.standard_normal((4, 5, 5)), rng.standard_normal(4)


def _direct(X, K, b):
    N, H, W = X.shape
    F, k, _ = K.shape
    out = np.empty((N, F, H - k + 1, W - k + 1))
    for n in range(N):
        for f in range(F):
            for y in range(H - k + 1):
                for x in range(W - k + 1):
                    out[n, f, y, x] = np.sum(X[n, y:y + k, x:x + k] * K[f]) + b[f]
    return out


def test_conv_variants_agree_with_direct_sum(stack):
    X, K, b = stack
    ref = _direct(X, K, b)
    assert np.allclose(kernels.conv_forward_nb(X, K, b), ref, rtol=0, atol=1e-12)
    assert np.allclose(kernels.conv_forward_np(X, K, b), ref, rtol=0, atol=1e-12)


def test_weight_grad_variants_agree(stack, rng):
    X, K, _ = stack
    dZ = rng.standard_normal((3, 4, 9, 13))
    a = kernels.conv_weight_grad_nb(X, dZ, 5)
    b = kernels.conv_weight_grad_np(X, dZ, 5)
    assert np.allclose(a, b, rtol=0, atol=1e-11)


@pytest.mark.parametrize("n,k,window,stride", [(24, 5, 4, 4), (25, 20, 2, 1), (30, 7, 3, 2)])
def test_fused_layer_variants_agree(rng, n, k, window, stride):
    X = rng.random((2, n, n))
    K = rng.standard_normal((3, k, k)) * 0.2
    b = rng.standard_normal(3)
    A1, P1 = kernels.conv_layer_forward_nb(X, K, b, window, stride)
    A2, P2 = kernels.conv_layer_forward_np(X, K, b, window, stride)
    assert np.allclose(A1, A2, rtol=0, atol=1e-12)
    assert np.allclose(P1, P2, rtol=0, atol=1e-12)
    dP = rng.standard_normal(P1.shape)
    g1 = kernels.conv_layer_backward_nb(X, A1, dP, window, stride, k)
    g2 = kernels.conv_layer_backward_np(X, A2, dP, window, stride, k)
    for a, c in zip(g1, g2):
        assert np.allclose(a, c, rtol=0, atol=1e-10)


def test_pool_backward_is_adjoint_of_forward(rng):
    # <pool(A), G> == <A, pool_backward(G)> for any A, G
    for window, stride in [(4, 4), (2, 1), (3, 2)]:
        A = rng.random((2, 11, 11))
        P = kernels.pool_forward(A, window, stride)
        G = rng.random(P.shape)
        lhs = np.sum(P * G)
        rhs = np.sum(A * kernels.pool_backward(G, window, stride, A.shape))
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_box_mean():
    A = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(kernels.box_mean(A, 2), [[2.5, 3.5, 4.5], [6.5, 7.5, 8.5],
                                                  [10.5, 11.5, 12.5]])
