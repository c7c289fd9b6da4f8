import math

import numpy as np
import pytest

from flowforge.correlation import (
    CorrelationVolume,
    SeededStructureEncoder,
    build_volume,
    check_structure_pair,
    encode_structures,
    lookup,
    non_prior_init,
    non_prior_init_jvp,
)
from flowforge.errors import InvalidArgument, InvalidConfiguration
from flowforge.grid import identity_grid, lattice
from flowforge.prior import KeypointSet
from oracles import lookup_naive, pool_naive, softmax_readout_naive


def test_volume_hand_example():
    drv = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    src = np.array([[[1.0, 1.0]], [[2.0, 0.0]]])
    base = build_volume(drv, src, 0).base
    assert base.shape == (2, 1, 2, 1)
    assert base[:, 0, :, 0].tolist() == [[1.0, 2.0], [1.0, 0.0]]


def test_volume_pooling_matches_oracle(rng):
    f = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
    vol = build_volume(*f, pyramid_levels=2)
    assert [lvl.shape for lvl in vol.levels] == [(4, 4, 4, 4), (4, 4, 2, 2), (4, 4, 1, 1)]
    for a in range(4):
        for b in range(4):
            np.testing.assert_allclose(vol.levels[1][a, b], pool_naive(vol.base[a, b]), atol=1e-13)
            np.testing.assert_allclose(vol.levels[2][a, b], pool_naive(pool_naive(vol.base[a, b])), atol=1e-13)


def test_volume_symmetry(rng):
    f = rng.normal(size=(4, 6, 5))
    g = rng.normal(size=(4, 6, 5))
    ab = build_volume(f, g, 0).base
    ba = build_volume(g, f, 0).base
    np.testing.assert_allclose(ab, ba.transpose(2, 3, 0, 1), atol=1e-12)


def test_volume_rejects_bad_levels(rng):
    f = rng.normal(size=(6, 6, 2))
    with pytest.raises(InvalidArgument):
        build_volume(f, f, 2)
    with pytest.raises(InvalidArgument):
        build_volume(f, f[:4], 0)


@pytest.mark.parametrize("r", [0, 1, 2])
@pytest.mark.parametrize("levels", [0, 1])
def test_lookup_matches_oracle(rng, r, levels):
    for _ in range(5):
        h, w = 2 * rng.integers(1, 4, size=2)
        base = rng.normal(size=(h, w, h, w))
        vol = build_volume(rng.normal(size=(h, w, 3)), rng.normal(size=(h, w, 3)), levels)
        base = vol.base
        hi, wi = rng.integers(2, 6, size=2)
        flow = rng.uniform(-1.3, 1.3, size=(hi, wi, 2))
        got = lookup(vol, flow, r)
        assert got.shape == (hi, wi, (levels + 1) * (2 * r + 1) ** 2)
        np.testing.assert_allclose(got, lookup_naive(base, flow, r, levels), atol=1e-9)


def test_lookup_identity_center_is_diagonal(rng):
    f = rng.normal(size=(4, 4, 3))
    vol = build_volume(f, f, 0)
    out = lookup(vol, identity_grid(4, 4), 1)
    diag = np.einsum("ijij->ij", vol.base)
    assert np.array_equal(out[..., 4], diag)


def test_lookup_chunking_invariant(rng):
    f = rng.normal(size=(4, 4, 3)), rng.normal(size=(4, 4, 3))
    vol = build_volume(*f, 1)
    flow = rng.uniform(-1, 1, size=(8, 8, 2))
    np.testing.assert_array_equal(lookup(vol, flow, 2), lookup(vol, flow, 2, chunk=7))


def test_lookup_rejects_negative_radius(rng):
    vol = build_volume(np.ones((2, 2, 1)), np.ones((2, 2, 1)), 0)
    with pytest.raises(InvalidArgument):
        lookup(vol, identity_grid(2, 2), -1)


def test_non_prior_two_entry_softmax():
    base = np.zeros((2, 1, 2, 1))
    base[:, 0, :, 0] = [math.log(1.0), math.log(3.0)]
    out = non_prior_init(CorrelationVolume((base,)))
    np.testing.assert_allclose(out[..., 1], 0.5, atol=1e-12)
    np.testing.assert_allclose(out[..., 0], 0.0, atol=1e-12)


def test_non_prior_constant_volume():
    out = non_prior_init(CorrelationVolume((np.full((4, 6, 4, 6), 3.7),)))
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_non_prior_spike(rng):
    base = rng.uniform(-1, 1, size=(3, 4, 3, 4))
    base[1, 2, 2, 0] += 1000.0
    out = non_prior_init(CorrelationVolume((base,)))
    np.testing.assert_allclose(out[1, 2], lattice(3, 4)[2, 0], atol=1e-6)


def test_non_prior_matches_oracle(rng):
    base = rng.normal(size=(3, 3, 3, 3)) * 2
    np.testing.assert_allclose(non_prior_init(CorrelationVolume((base,))), softmax_readout_naive(base), atol=1e-13)


def test_non_prior_jvp(rng):
    base = rng.normal(size=(3, 4, 3, 4))
    t = rng.normal(size=base.shape)
    eps = 1e-6
    plus = non_prior_init(CorrelationVolume((base + eps * t,)))
    minus = non_prior_init(CorrelationVolume((base - eps * t,)))
    np.testing.assert_allclose(non_prior_init_jvp(CorrelationVolume((base,)), t), (plus - minus) / (2 * eps), atol=1e-8)


def test_structure_encoder_shapes(rng):
    enc = SeededStructureEncoder(num_keypoints=3, channels=8, seed=2)
    kp = KeypointSet.identity(rng.uniform(-0.5, 0.5, size=(3, 2)))
    src, drv = encode_structures(enc, rng.uniform(size=(32, 32, 3)), kp, kp, 0.1)
    assert src.shape == drv.shape == (8, 8, 8)


def test_structure_pair_mismatch():
    with pytest.raises(InvalidConfiguration):
        check_structure_pair(np.zeros((4, 4, 3)), np.zeros((4, 4, 2)))
