import numpy as np
import pytest

from bmfa.autograd import Node
from bmfa.backbone import (BLOCKS, CHANNELS, STAGE_STRIDES, Backbone,
                           ResidualBlock, stage_shape)
from bmfa.errors import ShapeError
from bmfa.init import ParamFactory


def make_backbone(seed=0, dtype=np.float32):
    f = ParamFactory(seed, dtype)
    return Backbone(f), f


def test_parameter_count_golden():
    _, f = make_backbone()
    total = sum(p.value.size for p in f.params.values())

    def block(cin, cout, proj):
        n = cout * cin * 9 + 2 * cout + cout * cout * 9 + 2 * cout
        return n + (cout * cin + 2 * cout if proj else 0)

    oracle = 32 * 1 * 7 * 7 + 2 * 32  # stem
    cin = 32
    for n_blocks, cout, stride in zip(BLOCKS, CHANNELS, STAGE_STRIDES):
        oracle += block(cin, cout, stride != (1, 1) or cin != cout)
        oracle += (n_blocks - 1) * block(cout, cout, False)
        cin = cout
    assert total == oracle == 5325728


@pytest.mark.parametrize("t", [2, 4, 10, 56, 200, 256, 400])
def test_stage_shapes(t):
    bb, _ = make_backbone()
    feats = bb(Node(np.zeros((2, 1, t, 64), dtype=np.float32)))
    assert len(feats) == 4
    for i, c in enumerate(feats, start=1):
        assert c.shape == stage_shape(i, 2, t)
        assert c.shape[1] == 32 * 2 ** (i - 1)
        assert c.shape[1] * c.shape[3] == 1024  # invariant behind the 2048 pool


def test_input_contract():
    bb, _ = make_backbone()
    for bad in [(2, 1, 7, 64), (2, 2, 8, 64), (2, 1, 8, 32), (2, 1, 8)]:
        with pytest.raises(ShapeError):
            bb(Node(np.zeros(bad, dtype=np.float32)))


def test_zero_input_zero_features():
    # biasless convs + batchnorm with zero beta map zero to zero at every stage
    bb, _ = make_backbone()
    feats = bb(Node(np.zeros((2, 1, 8, 64), dtype=np.float32)))
    for c in feats:
        assert np.all(c.value == 0.0)


def test_residual_shortcut_wiring():
    # zeroing the residual path's closing scale turns a non-projection block
    # into relu(x); for x >= 0 that is the identity, bit for bit
    f = ParamFactory(0, np.float64)
    block = ResidualBlock(f, "b", 8, 8, (1, 1))
    assert block.proj is None
    block.bn2.gamma.value[:] = 0.0
    rng = np.random.default_rng(1)
    x = np.abs(rng.standard_normal((2, 8, 4, 6)))
    y = block(Node(x))
    np.testing.assert_array_equal(y.value, x)


def test_projection_block_changes_grid():
    f = ParamFactory(0, np.float32)
    block = ResidualBlock(f, "b", 8, 16, (1, 2))
    assert block.proj is not None
    y = block(Node(np.zeros((1, 8, 6, 10), dtype=np.float32)))
    assert y.shape == (1, 16, 6, 5)


def test_same_seed_same_outputs():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 1, 8, 64)).astype(np.float32)
    a, _ = make_backbone(seed=5)
    b, _ = make_backbone(seed=5)
    ya = a(Node(x))[3].value
    yb = b(Node(x))[3].value
    np.testing.assert_array_equal(ya, yb)


def test_different_seed_different_outputs():
    x = np.random.default_rng(2).standard_normal((1, 1, 8, 64)).astype(np.float32)
    a, _ = make_backbone(seed=5)
    b, _ = make_backbone(seed=6)
    assert not np.array_equal(a(Node(x))[3].value, b(Node(x))[3].value)
