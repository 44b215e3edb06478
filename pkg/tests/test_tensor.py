import numpy as np
import pytest

from src.core.tensor import (Rng, ShapeError, elementwise, flat_index, glorot_uniform, multi_index,
                             random_uniform, reduce_mean, sigmoid)


def test_mul_is_hadamard():
    assert np.array_equal(elementwise("mul", np.array([1.0, 2.0]), np.array([3.0, 4.0])), [3.0, 8.0])


def test_mul_commutes_and_has_ones_identity():
    a = Rng(1).uniform((3, 4), -2, 2)
    b = Rng(2).uniform((3, 4), -2, 2)
    assert np.array_equal(elementwise("mul", a, b), elementwise("mul", b, a))
    assert np.array_equal(elementwise("mul", a, np.ones_like(a)), a)


def test_sigmoid_of_zero_is_half():
    assert np.array_equal(elementwise("sigmoid", np.zeros((2, 2))), np.full((2, 2), 0.5))


def test_sigmoid_is_stable_for_large_inputs():
    values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(values))
    assert values[0] == 0.0 and values[2] == 1.0


def test_add_zeros_is_identity():
    x = Rng(5).uniform((2, 3), -1, 1)
    assert np.array_equal(elementwise("add", x, np.zeros_like(x)), x)


def test_binary_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
        elementwise("add", np.zeros(2), np.zeros(3))


def test_unknown_op():
    with pytest.raises(ValueError):
        elementwise("div", np.ones(2), np.ones(2))


def test_reduce_mean_known_values():
    assert reduce_mean(np.array([[1.0, 2.0], [3.0, 4.0]]), {0, 1}) == 2.5
    assert np.all(reduce_mean(np.full((2, 3, 4), 7.0), {1}) == 7.0)
    x = Rng(3).uniform((2, 2), 0, 1)
    assert np.array_equal(reduce_mean(x, set()), x)


def test_reduce_mean_all_axes_matches_sum():
    x = Rng(4).uniform((5, 6, 7), -3, 3)
    assert reduce_mean(x, {0, 1, 2}) == pytest.approx(x.sum() / x.size, rel=1e-12)


def test_reduce_mean_axis_out_of_range():
    with pytest.raises(ValueError):
        reduce_mean(np.zeros((2, 2)), {2})


def test_flat_and_multi_index_round_trip():
    rng = Rng(9)
    for _ in range(20):
        shape = tuple(int(d) for d in 1 + rng.generator.integers(0, 5, size=int(rng.generator.integers(1, 5))))
        offset = int(rng.generator.integers(0, int(np.prod(shape))))
        assert flat_index(multi_index(offset, shape), shape) == offset


def test_flat_index_is_row_major():
    assert flat_index((1, 2), (3, 4)) == 6


def test_random_uniform_is_deterministic():
    assert np.array_equal(random_uniform(Rng(42), (3,), 0, 1), random_uniform(Rng(42), (3,), 0, 1))


def test_random_uniform_range():
    values = random_uniform(Rng(7), (1000,), 0.0, 1.0)
    assert values.min() >= 0.0 and values.max() < 1.0


def test_different_seeds_differ():
    assert not np.array_equal(random_uniform(Rng(42), (3,), 0, 1), random_uniform(Rng(43), (3,), 0, 1))


def test_random_uniform_rejects_empty_range():
    with pytest.raises(ValueError):
        random_uniform(Rng(0), (2,), 1.0, 1.0)


def test_float32_draws_stay_below_a_close_upper_bound():
    values = random_uniform(Rng(0), (100000,), 1.0, 1.0000001, np.float32)
    assert values.dtype == np.float32
    assert np.all(values.astype(np.float64) < 1.0000001)
    assert np.all(values >= 1.0)


def test_float32_draws_respect_an_unrepresentable_lower_bound():
    values = random_uniform(Rng(1), (10000,), 0.1, 0.1000001, np.float32)
    wide = values.astype(np.float64)
    assert np.all(wide >= 0.1) and np.all(wide < 0.1000001)


def test_range_narrower_than_dtype_spacing_is_rejected():
    with pytest.raises(ValueError, match="float32"):
        random_uniform(Rng(0), (2,), 1.00000001, 1.00000002, np.float32)


def test_rng_rejects_negative_seed():
    with pytest.raises(ValueError):
        Rng(-1)


def test_spawned_streams_are_independent_and_reproducible():
    parent = Rng(11)
    assert parent.spawn(0).seed == Rng(11).spawn(0).seed
    assert parent.spawn(0).seed != parent.spawn(1).seed


def test_glorot_limit():
    values = glorot_uniform(Rng(0), (50, 50), 10, 14)
    assert np.max(np.abs(values)) <= np.sqrt(6.0 / 24)
