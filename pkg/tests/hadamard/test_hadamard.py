import numpy as np
import pytest

from bellbox.errors import ConfigError, ShapeError
from bellbox.hadamard import (
    HadamardPlan,
    blocked_transform,
    fwht_blocked,
    hadamard_matrix,
    hadamard_matrix_array,
    is_power_of_two,
)
from bellbox.tensorio import Tensor


@pytest.fixture(scope="function")
def block_input():
    yield np.random.default_rng(3).standard_normal((4, 256))


def test_is_power_of_two():
    assert [n for n in range(1, 20) if is_power_of_two(n)] == [1, 2, 4, 8, 16]
    assert not is_power_of_two(0)


def test_plan_rejects_non_power_of_two():
    with pytest.raises(ConfigError):
        HadamardPlan(96)


def test_plan_checks_divisibility():
    with pytest.raises(ShapeError):
        HadamardPlan(128).check_divides(192)


@pytest.mark.parametrize("size", [1, 2, 8, 128])
def test_matrix_is_orthonormal(size):
    h = hadamard_matrix_array(size)
    np.testing.assert_allclose(h @ h.T, np.eye(size), atol=1e-12)


def test_matrix_entries_follow_popcount():
    h = hadamard_matrix(8).to_numpy(np.float64)
    for i in range(8):
        for j in range(8):
            sign = (-1) ** bin(i & j).count("1")
            assert h[i, j] == pytest.approx(sign / np.sqrt(8), rel=1e-6)


def test_transform_matches_explicit_product(block_input):
    h = hadamard_matrix_array(128)
    expected = (block_input.reshape(4, 2, 128) @ h).reshape(4, 256)
    np.testing.assert_allclose(blocked_transform(block_input, 128), expected, atol=1e-12)


def test_transform_is_an_involution(block_input):
    twice = blocked_transform(blocked_transform(block_input, 64), 64)
    np.testing.assert_allclose(twice, block_input, atol=1e-12)


def test_transform_preserves_norm_per_block(block_input):
    out = blocked_transform(block_input, 128)
    np.testing.assert_allclose(
        np.linalg.norm(out.reshape(-1, 128), axis=1),
        np.linalg.norm(block_input.reshape(-1, 128), axis=1),
    )


def test_blocks_are_independent():
    x = np.zeros((1, 256))
    x[0, 0] = 1.0
    out = blocked_transform(x, 128)
    np.testing.assert_allclose(out[0, :128], np.full(128, 1 / np.sqrt(128)))
    assert np.all(out[0, 128:] == 0.0)


def test_block_size_one_is_identity(block_input):
    np.testing.assert_array_equal(blocked_transform(block_input, 1), block_input)


def test_fwht_blocked_on_tensor():
    x = Tensor.from_numpy(np.ones((2, 4)))
    out = fwht_blocked(x, HadamardPlan(4)).to_numpy()
    np.testing.assert_allclose(out, [[2.0, 0, 0, 0], [2.0, 0, 0, 0]], atol=1e-6)


def test_fwht_blocked_rejects_indivisible():
    with pytest.raises(ShapeError):
        fwht_blocked(Tensor.from_numpy(np.ones((2, 6))), HadamardPlan(4))


def test_transform_gaussianises_uniform_input():
    x = np.random.default_rng(7).uniform(-1.0, 1.0, size=(4096, 128))
    hx = blocked_transform(x, 128).reshape(-1)
    hx = hx - hx.mean()
    excess = np.mean(hx**4) / np.mean(hx**2) ** 2 - 3.0
    assert abs(excess) <= 0.1
