import numpy as np
import pytest

from flowforge import nets
from flowforge.rng import SplitMix64


def conv_naive(x, weight, bias, stride):
    k = weight.shape[0]
    pad = k // 2
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    H, W = x.shape[:2]
    out = np.zeros(((H + stride - 1) // stride, (W + stride - 1) // stride, weight.shape[3]))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            patch = xp[i * stride : i * stride + k, j * stride : j * stride + k]
            out[i, j] = np.einsum("abc,abcd->d", patch, weight) + bias
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_naive(rng, stride):
    x = rng.normal(size=(6, 8, 3))
    w = rng.normal(size=(3, 3, 3, 5))
    b = rng.normal(size=5)
    np.testing.assert_allclose(nets.conv2d(x, w, b, stride), conv_naive(x, w, b, stride), atol=1e-12)


def test_seeded_conv_reproducible():
    a = nets.Conv(SplitMix64(3), 4, 6)
    b = nets.Conv(SplitMix64(3), 4, 6)
    assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)
    bound = np.sqrt(6.0 / (9 * 4))
    assert np.abs(a.weight).max() <= bound


def test_sigmoid_stable():
    out = nets.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert out.tolist() == [0.0, 0.5, 1.0]


def test_pool_and_upsample(rng):
    x = rng.normal(size=(4, 6, 2))
    np.testing.assert_allclose(nets.avg_pool2(nets.upsample_nearest(x, (8, 12))), x, atol=1e-15)
