"""Reverse-mode automatic differentiation on dense float64 arrays.

The engine provides exactly the operations the encoder-decoder network
needs: strided 2-d convolution, its adjoint (the transposed convolution),
ReLU, elementwise arithmetic, matrix products, reshaping, and the squared
Frobenius norm. Graphs are built dynamically and discarded after every
backward pass; parameters are leaf nodes that persist across graphs.

Convolutions use symmetric zero padding of kernel_size // 2, so a stride-s
layer maps H to ceil(H / s). Transposed convolutions receive their output
shape explicitly (recorded from the matching forward layer), which removes
the usual output-size ambiguity of strided deconvolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "ConvSpec",
    "Value",
    "add",
    "backward",
    "constant",
    "conv2d",
    "deconv2d",
    "frobenius_sq",
    "matmul",
    "parameter",
    "relu",
    "reshape",
    "scale",
    "sub",
    "transpose",
]


class Value:
    """A node in the computation graph: an array plus gradient plumbing.

    ``data`` is an immutable-by-convention float64 array. ``grad`` is
    allocated lazily by :func:`backward`. ``parents`` pairs each upstream
    node with the closure mapping this node's gradient to that parent's
    contribution; nodes that do not require gradients drop their parent
    links so backward passes only walk the differentiable subgraph.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        needs = requires_grad or any(p.requires_grad for p, _ in parents)
        self.requires_grad = needs
        self.parents = tuple(parents) if needs else ()

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Value(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data):
    """A trainable leaf node."""
    return Value(data, requires_grad=True)


def constant(data):
    """A leaf node that never receives gradients."""
    return Value(data)


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root):
    """Accumulate d(root)/d(node) into .grad for every reachable node.

    The root must be scalar-shaped. Gradients of values used several times
    accumulate additively. Leaf gradients persist across graphs until the
    caller resets them; every fresh graph starts with clean interior nodes.
    """
    if root.data.shape != ():
        raise ConfigurationError(
            f"backward requires a scalar root, got shape {root.data.shape}"
        )
    order = _topological_order(root)
    root.grad = np.array(1.0)
    for node in reversed(order):
        grad = node.grad
        if grad is None:
            continue
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            contribution = vjp(grad)
            parent.grad = contribution if parent.grad is None else parent.grad + contribution


# --- elementwise ops and reductions -------------------------------------------


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ConfigurationError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def relu(x):
    mask = x.data > 0.0
    return Value(np.maximum(x.data, 0.0), parents=((x, lambda g: g * mask),))


def add(a, b):
    _check_same_shape("add", a, b)
    return Value(a.data + b.data, parents=((a, lambda g: g), (b, lambda g: g)))


def sub(a, b):
    _check_same_shape("sub", a, b)
    return Value(a.data - b.data, parents=((a, lambda g: g), (b, lambda g: -g)))


def scale(a, factor):
    factor = float(factor)
    return Value(a.data * factor, parents=((a, lambda g: g * factor),))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ConfigurationError(
            f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}"
        )
    a_data, b_data = a.data, b.data
    return Value(
        a_data @ b_data,
        parents=((a, lambda g: g @ b_data.T), (b, lambda g: a_data.T @ g)),
    )


def transpose(a):
    if a.data.ndim != 2:
        raise ConfigurationError(f"transpose expects a matrix, got shape {a.data.shape}")
    return Value(np.ascontiguousarray(a.data.T), parents=((a, lambda g: g.T),))


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ConfigurationError(f"reshape: {exc}") from exc
    original = a.data.shape
    return Value(out, parents=((a, lambda g: g.reshape(original)),))


def frobenius_sq(a):
    """Sum of squared entries, as a scalar node."""
    data = a.data
    return Value(
        np.array((data * data).sum()),
        parents=((a, lambda g: (2.0 * float(g)) * data),),
    )


# --- convolution geometry ------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer and of its adjoint twin.

    ``in_channels``/``out_channels`` describe the forward convolution;
    :func:`deconv2d` with the same spec consumes ``out_channels`` maps and
    emits ``in_channels`` maps. Padding is fixed at ``kernel_size // 2``,
    which with stride s maps height H to ceil(H / s).
    """

    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(
                f"kernel_size must be a positive odd integer, got {self.kernel_size}"
            )
        for name in ("in_channels", "out_channels", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def padding(self):
        return self.kernel_size // 2

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)

    def output_hw(self, h, w):
        s = self.stride
        return ((h - 1) // s + 1, (w - 1) // s + 1)


def _pad_input(x, pad):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _im2col(x, k, stride, pad):
    """(N,C,H,W) -> (N, C*k*k, L) patch matrix, L = H_out * W_out."""
    xp = _pad_input(x, pad)
    n, c, hp, wp = xp.shape
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, k, k, h_out, w_out),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
    )
    return windows.reshape(n, c * k * k, h_out * w_out), (h_out, w_out)


def _col2im(cols, image_hw, channels, k, stride, pad):
    """Adjoint of :func:`_im2col`: scatter-add patches back onto the image grid."""
    n = cols.shape[0]
    h, w = image_hw
    hp, wp = h + 2 * pad, w + 2 * pad
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    cols6 = cols.reshape(n, channels, k, k, h_out, w_out)
    canvas = np.zeros((n, channels, hp, wp))
    for ki in range(k):
        for kj in range(k):
            canvas[:, :, ki : ki + stride * h_out : stride, kj : kj + stride * w_out : stride] += cols6[
                :, :, ki, kj
            ]
    return canvas[:, :, pad : pad + h, pad : pad + w] if pad else canvas


def _conv_raw(x, weight, stride):
    """Forward convolution on plain arrays; returns output and the patch matrix."""
    c_out, _, k, _ = weight.shape
    cols, (h_out, w_out) = _im2col(x, k, stride, k // 2)
    out = np.matmul(weight.reshape(c_out, -1)[None, :, :], cols)
    return out.reshape(x.shape[0], c_out, h_out, w_out), cols


def _conv_input_grad(grad_out, weight, input_hw, stride):
    """Adjoint of the convolution's linear map, applied to grad_out."""
    n, c_out = grad_out.shape[:2]
    _, c_in, k, _ = weight.shape
    g2 = grad_out.reshape(n, c_out, -1)
    cols = np.matmul(weight.reshape(c_out, -1).T[None, :, :], g2)
    return _col2im(cols, input_hw, c_in, k, stride, k // 2)


def _conv_weight_grad(grad_out, cols, weight_shape):
    n, c_out = grad_out.shape[:2]
    g2 = grad_out.reshape(n, c_out, -1)
    return np.einsum("nol,ncl->oc", g2, cols, optimize=True).reshape(weight_shape)


def _check_conv_args(op, spec, weight, bias, expected_bias):
    if weight.data.shape != spec.weight_shape:
        raise ConfigurationError(
            f"{op}: weight shape {weight.data.shape} does not match spec {spec.weight_shape}"
        )
    if bias.data.shape != (expected_bias,):
        raise ConfigurationError(
            f"{op}: bias shape {bias.data.shape} does not match expected ({expected_bias},)"
        )


def conv2d(x, spec, weight, bias):
    """Strided 2-d convolution with per-output-channel bias."""
    _check_conv_args("conv2d", spec, weight, bias, expected_bias=spec.out_channels)
    data = x.data
    if data.ndim != 4 or data.shape[1] != spec.in_channels:
        raise ConfigurationError(
            f"conv2d: input shape {data.shape} incompatible with {spec.in_channels} input channels"
        )
    w_data = weight.data
    out, cols = _conv_raw(data, w_data, spec.stride)
    out = out + bias.data[None, :, None, None]
    input_hw = data.shape[2:]
    stride = spec.stride
    parents = (
        (x, lambda g: _conv_input_grad(g, w_data, input_hw, stride)),
        (weight, lambda g: _conv_weight_grad(g, cols, w_data.shape)),
        (bias, lambda g: g.sum(axis=(0, 2, 3))),
    )
    return Value(out, parents=parents)


def deconv2d(x, spec, weight, bias, target_hw, bias_on_output=False):
    """Adjoint of :func:`conv2d`'s linear map for the same spec.

    Consumes ``spec.out_channels`` maps and emits ``spec.in_channels`` maps
    at the recorded ``target_hw``. By default the bias is a per-channel
    offset applied to the input maps (length ``spec.out_channels``); with
    ``bias_on_output`` it is applied to the produced maps instead (length
    ``spec.in_channels``).
    """
    expected_bias = spec.in_channels if bias_on_output else spec.out_channels
    _check_conv_args("deconv2d", spec, weight, bias, expected_bias=expected_bias)
    data = x.data
    if data.ndim != 4 or data.shape[1] != spec.out_channels:
        raise ConfigurationError(
            f"deconv2d: input shape {data.shape} incompatible with {spec.out_channels} input channels"
        )
    h_t, w_t = (int(t) for t in target_hw)
    if spec.output_hw(h_t, w_t) != tuple(data.shape[2:]):
        raise ConfigurationError(
            f"deconv2d: target {(h_t, w_t)} does not map to input {tuple(data.shape[2:])} "
            f"under stride {spec.stride}"
        )
    w_data = weight.data
    stride = spec.stride
    source = data if bias_on_output else data + bias.data[None, :, None, None]
    out = _conv_input_grad(source, w_data, (h_t, w_t), stride)
    if bias_on_output:
        out = out + bias.data[None, :, None, None]

    def grad_x(g):
        y, _ = _conv_raw(g, w_data, stride)
        return y

    def grad_w(g):
        cols_g, _ = _im2col(g, spec.kernel_size, stride, spec.padding)
        return _conv_weight_grad(source, cols_g, w_data.shape)

    if bias_on_output:
        def grad_b(g):
            return g.sum(axis=(0, 2, 3))
    else:
        def grad_b(g):
            y, _ = _conv_raw(g, w_data, stride)
            return y.sum(axis=(0, 2, 3))

    return Value(out, parents=((x, grad_x), (weight, grad_w), (bias, grad_b)))
