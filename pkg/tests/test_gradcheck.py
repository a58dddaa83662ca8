"""Tests for the finite-difference gradient checker."""

import numpy as np
import pytest
from conftest import graph_sum

from redsc.autodiff import ConvSpec, conv2d, deconv2d, frobenius_sq, parameter, relu, scale
from redsc.errors import DivergenceError
from redsc.gradcheck import gradcheck


def test_linear_loss_is_exact():
    x = parameter(np.array([0.3, -1.2, 4.0, 0.9]))
    result = gradcheck(lambda: graph_sum(scale(x, 3.0)), [x])
    assert result.max_rel_error < 1e-10
    assert result.skipped_kinks == 0
    assert result.checked == 4


def test_relu_kink_is_skipped_and_counted():
    x = parameter(np.array([-0.5, 0.0, 0.7]))
    result = gradcheck(lambda: graph_sum(relu(x)), [x])
    assert result.skipped_kinks == 1
    assert result.checked == 2
    assert result.max_rel_error < 1e-10


def test_conv_deconv_relu_chain():
    rng = np.random.default_rng(11)
    spec = ConvSpec(kernel_size=3, in_channels=2, out_channels=3, stride=2)
    x = parameter(rng.normal(size=(1, 2, 6, 5)))
    w = parameter(rng.normal(size=spec.weight_shape) * 0.5)
    b = parameter(rng.normal(size=3) * 0.1)

    def build():
        hidden = relu(conv2d(x, spec, w, b))
        return frobenius_sq(deconv2d(hidden, spec, w, b, target_hw=(6, 5)))

    result = gradcheck(build, [x, w, b])
    assert result.max_rel_error < 1e-4


def test_nonfinite_perturbation_names_coordinate():
    x = parameter(np.array([0.3, 1.0]))

    def build():
        out = frobenius_sq(x)
        if x.data[1] > 1.0:
            out = scale(out, float("nan"))
        return out

    with pytest.raises(DivergenceError, match="parameter 0 coordinate 1"):
        gradcheck(build, [x])


def test_subsampling_is_deterministic_and_bounded():
    rng = np.random.default_rng(12)
    x = parameter(rng.normal(size=(20,)))

    def build():
        return frobenius_sq(x)

    a = gradcheck(build, [x], max_coords_per_param=5, seed=99)
    b = gradcheck(build, [x], max_coords_per_param=5, seed=99)
    assert a.checked == b.checked == 5
    assert a.max_rel_error == b.max_rel_error


def test_unused_parameter_has_zero_gradient_agreement():
    used = parameter(np.array([1.0, 2.0]))
    unused = parameter(np.array([3.0]))
    result = gradcheck(lambda: frobenius_sq(used), [used, unused])
    assert result.max_rel_error < 1e-6
    assert result.checked == 3
