import numpy as np
import pytest

from src.core.layers import (Conv2DLayer, Conv3DLayer, DenseLayer, ResidualBlock3D, SEBlock, conv2d_backward,
                             conv2d_forward, conv3d_backward, conv3d_forward, residual_backward, residual_forward,
                             se_backward, se_forward)
from src.core.tensor import Rng, ShapeError

from .conftest import numeric_gradient, relative_error

SEEDS = range(5)


def check_module_gradients(module, x, seed, tolerance=1e-6):
    """Compare analytic input and parameter gradients of sum(w * y) with finite differences."""
    y, _ = module.forward(x)
    weights = Rng(1000 + seed).uniform(y.shape, -1.0, 1.0)

    def loss():
        return float(np.sum(weights * module.forward(x)[0]))

    _, cache = module.forward(x)
    grad_x, grads = module.backward(cache, weights)
    assert relative_error(grad_x, numeric_gradient(loss, x)) < tolerance
    for name, value in module.parameters().items():
        assert relative_error(grads[name], numeric_gradient(loss, value)) < tolerance, name


def test_conv2d_identity_kernel(rng):
    layer = Conv2DLayer(1, 1, 1, rng)
    layer.params["weight"][...] = 1.0
    x = rng.uniform((1, 5, 5), -1, 1)
    assert np.array_equal(conv2d_forward(layer, x), x)


def test_conv2d_all_ones_interior(rng):
    layer = Conv2DLayer(1, 1, 3, rng)
    layer.params["weight"][...] = 1.0
    y = conv2d_forward(layer, np.ones((1, 5, 5)))
    assert y[0, 2, 2] == 9.0
    assert y[0, 0, 0] == 4.0


@pytest.mark.parametrize("kernel", [1, 3, 5])
def test_same_padding_preserves_shape(rng, kernel):
    assert conv2d_forward(Conv2DLayer(2, 3, kernel, rng), np.ones((2, 6, 7))).shape == (3, 6, 7)
    assert conv3d_forward(Conv3DLayer(2, 3, kernel, rng), np.ones((2, 5, 6, 7))).shape == (3, 5, 6, 7)


def test_conv_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        conv2d_forward(Conv2DLayer(2, 3, 3, rng), np.ones((3, 4, 4)))


def test_even_kernel_rejected(rng):
    with pytest.raises(ValueError):
        Conv2DLayer(1, 1, 2, rng)


def test_conv_is_cross_correlation(rng):
    layer = Conv2DLayer(1, 1, 3, rng)
    layer.params["weight"][...] = 0.0
    layer.params["weight"][0, 0, 1, 2] = 1.0
    x = np.arange(25.0).reshape(1, 5, 5)
    # right-hand tap reads the right neighbour
    assert conv2d_forward(layer, x)[0, 2, 2] == x[0, 2, 3]


@pytest.mark.parametrize("seed", SEEDS)
def test_conv2d_gradients(seed):
    rng = Rng(seed)
    layer = Conv2DLayer(2, 3, 3, rng)
    layer.params["bias"][...] = rng.uniform((3,), -0.5, 0.5)
    x = rng.uniform((2, 4, 4), -1, 1)
    check_module_gradients(layer, x, seed)

    grad_y = Rng(1000 + seed).uniform((3, 4, 4), -1, 1)
    gx, gw, gb = conv2d_backward(layer, x, grad_y)
    assert gx.shape == x.shape and gw.shape == layer.params["weight"].shape and gb.shape == (3,)


def test_conv3d_temporal_identity(rng):
    layer = Conv3DLayer(2, 2, (1, 3, 3), rng)
    layer.params["weight"][...] = 0.0
    for c in range(2):
        layer.params["weight"][c, c, 0, 1, 1] = 1.0
    x = rng.uniform((2, 3, 4, 4), -1, 1)
    assert np.array_equal(conv3d_forward(layer, x), x)


def test_conv3d_all_ones_interior(rng):
    layer = Conv3DLayer(1, 1, 3, rng)
    layer.params["weight"][...] = 1.0
    assert conv3d_forward(layer, np.ones((1, 3, 3, 3)))[0, 1, 1, 1] == 27.0


@pytest.mark.parametrize("seed", SEEDS)
def test_conv3d_gradients(seed):
    rng = Rng(seed)
    layer = Conv3DLayer(2, 2, 3, rng)
    x = rng.uniform((2, 3, 3, 3), -1, 1)
    check_module_gradients(layer, x, seed)
    gx, _, _ = conv3d_backward(layer, x, np.ones((2, 3, 3, 3)))
    assert gx.shape == x.shape


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradients(seed):
    rng = Rng(seed)
    layer = DenseLayer(5, 3, rng)
    layer.params["bias"][...] = rng.uniform((3,), -1, 1)
    check_module_gradients(layer, rng.uniform((5,), -1, 1), seed)


def test_dense_shape_check(rng):
    with pytest.raises(ShapeError):
        DenseLayer(4, 2, rng).forward(np.ones(3))


def test_se_requires_divisible_channels(rng):
    with pytest.raises(ValueError):
        SEBlock(6, 4, rng)


def test_se_forced_unit_scale_is_identity(rng):
    block = SEBlock(4, 2, rng)
    block.scale_override = np.ones(4)
    x = rng.uniform((4, 3, 5), -1, 1)
    assert np.array_equal(se_forward(block, x), x)


def test_se_squeeze_is_channel_mean_and_linear(rng):
    block = SEBlock(4, 2, rng)
    x = rng.uniform((4, 3, 5), -1, 1)
    x[1] = 7.0
    z = block.squeeze(x)
    assert z[1] == pytest.approx(7.0)
    scaled = x.copy()
    scaled[2] *= 2.5
    assert block.squeeze(scaled)[2] == pytest.approx(2.5 * z[2])


def test_se_channel_weights_in_unit_interval(rng):
    block = SEBlock(8, 4, rng)
    _, cache = block.forward(rng.uniform((8, 2, 4, 4), -3, 3))
    s = cache[-1]
    assert np.all((s > 0.0) & (s < 1.0))


@pytest.mark.parametrize("seed", SEEDS)
def test_se_gradients(seed):
    rng = Rng(seed)
    block = SEBlock(4, 2, rng)
    for name in ("fc1.bias", "fc2.bias"):
        value = block.parameters()[name]
        value[...] = rng.uniform(value.shape, -0.5, 0.5)
    check_module_gradients(block, rng.uniform((4, 2, 3, 3), -1, 1), seed)


@pytest.mark.parametrize("seed", SEEDS)
def test_se_backward_matches_finite_differences(seed):
    rng = Rng(200 + seed)
    block = SEBlock(4, 2, rng)
    x = rng.uniform((4, 2, 3, 3), -1, 1)
    weights = rng.uniform(x.shape, -1, 1)

    def loss():
        return float(np.sum(weights * se_forward(block, x)))

    grad_x, grads = se_backward(block, x, weights)
    assert relative_error(grad_x, numeric_gradient(loss, x)) < 1e-6
    for name, value in block.parameters().items():
        assert relative_error(grads[name], numeric_gradient(loss, value)) < 1e-6, name


def test_residual_zero_branch_is_identity_for_nonnegative_input(rng):
    block = ResidualBlock3D(2, 3, rng)
    for value in block.parameters().values():
        value[...] = 0.0
    x = rng.uniform((2, 2, 4, 4), 0, 1)
    assert np.array_equal(residual_forward(block, x), x)
    signed = rng.uniform((2, 2, 4, 4), -1, 1)
    assert np.array_equal(residual_forward(block, signed), np.maximum(signed, 0.0))


def test_stacked_zero_residual_blocks_preserve_input(rng):
    blocks = [ResidualBlock3D(2, 3, rng.spawn(k)) for k in range(3)]
    x = rng.uniform((2, 2, 3, 3), 0, 1)
    out = x
    for block in blocks:
        for value in block.parameters().values():
            value[...] = 0.0
        out = residual_forward(block, out)
    assert np.array_equal(out, x)


@pytest.mark.parametrize("seed", SEEDS)
def test_residual_gradients(seed):
    rng = Rng(seed)
    block = ResidualBlock3D(2, 3, rng)
    check_module_gradients(block, rng.uniform((2, 2, 3, 3), -1, 1), seed)


def test_zero_residual_branch_passes_gradient_through(rng):
    block = ResidualBlock3D(2, 3, rng)
    for value in block.parameters().values():
        value[...] = 0.0
    x = rng.uniform((2, 2, 3, 3), 0.1, 1)
    grad_out = rng.uniform(x.shape, -1, 1)
    grad_x, grads = residual_backward(block, x, grad_out)
    assert np.array_equal(grad_x, grad_out)
    assert np.all(grads["conv1.weight"] == 0.0)
    assert set(grads) == set(block.parameters())


@pytest.mark.parametrize("seed", SEEDS)
def test_residual_backward_matches_finite_differences(seed):
    rng = Rng(100 + seed)
    block = ResidualBlock3D(2, 3, rng)
    x = rng.uniform((2, 2, 3, 3), -1, 1)
    weights = rng.uniform(x.shape, -1, 1)

    def loss():
        return float(np.sum(weights * residual_forward(block, x)))

    grad_x, grads = residual_backward(block, x, weights)
    assert relative_error(grad_x, numeric_gradient(loss, x)) < 1e-6
    for name, value in block.parameters().items():
        assert relative_error(grads[name], numeric_gradient(loss, value)) < 1e-6, name


def test_parameter_names_are_dotted(rng):
    names = list(ResidualBlock3D(2, 3, rng).parameters())
    assert names == ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"]
