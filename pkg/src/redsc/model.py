"""Residual encoder-decoder network with a shared self-expressive layer.

The encoder is a stack of strided convolutions with ReLU activations. Every
latent level is passed through one shared N-by-N self-expressive matrix (a
bias-free, activation-free linear layer acting on the sample axis), and the
results feed a symmetric deconvolutional decoder: the innermost transformed
latent is the decoder input, the rest are added to the matching decoder
levels before activation (skip additions). The pre-training variant routes
the raw latents instead and omits the self-expressive layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    ConvSpec,
    Value,
    add,
    constant,
    conv2d,
    deconv2d,
    frobenius_sq,
    matmul,
    parameter,
    relu,
    reshape,
    scale,
    sub,
    transpose,
)
from .errors import ConfigurationError, RedscError

__all__ = [
    "Architecture",
    "LatentStack",
    "LossBreakdown",
    "ModelParams",
    "ParameterCount",
    "count_parameters",
    "decode",
    "encode",
    "forward_finetune",
    "forward_pretrain",
    "init_params",
    "loss_global",
    "reconstruction_loss",
    "self_express",
]

SKIP_MODES = ("full", "none")


@dataclass(frozen=True)
class Architecture:
    """Symmetric convolutional encoder-decoder geometry.

    ``kernel_sizes`` and ``channels`` list the encoder followed by the
    mirrored decoder, so both are palindromes of length twice the number of
    encoder layers. The default is the 5-3-3-3-3-5 / 10-20-30-30-20-10
    three-layer network on single-channel images with stride 2.
    """

    kernel_sizes: tuple = (5, 3, 3, 3, 3, 5)
    channels: tuple = (10, 20, 30, 30, 20, 10)
    input_channels: int = 1
    stride: int = 2

    def __post_init__(self):
        ks = tuple(int(k) for k in self.kernel_sizes)
        ch = tuple(int(c) for c in self.channels)
        object.__setattr__(self, "kernel_sizes", ks)
        object.__setattr__(self, "channels", ch)
        if len(ks) < 2 or len(ks) % 2 != 0 or len(ks) != len(ch):
            raise ConfigurationError(
                "kernel_sizes and channels must be equal-length even-sized lists, "
                f"got {len(ks)} and {len(ch)}"
            )
        if ks != ks[::-1] or ch != ch[::-1]:
            raise ConfigurationError("kernel_sizes and channels must be palindromic")
        if any(k < 1 or k % 2 == 0 for k in ks):
            raise ConfigurationError(f"kernel sizes must be positive odd integers, got {ks}")
        if any(c < 1 for c in ch):
            raise ConfigurationError(f"channel counts must be positive, got {ch}")
        if self.input_channels < 1 or self.stride < 1:
            raise ConfigurationError("input_channels and stride must be positive")

    @property
    def n_encoder_layers(self):
        return len(self.kernel_sizes) // 2

    def encoder_spec(self, i):
        """ConvSpec of encoder layer i (0-based)."""
        n_in = self.input_channels if i == 0 else self.channels[i - 1]
        return ConvSpec(
            kernel_size=self.kernel_sizes[i],
            in_channels=n_in,
            out_channels=self.channels[i],
            stride=self.stride,
        )

    def decoder_spec(self, j):
        """ConvSpec whose adjoint decoder layer j (0-based) computes."""
        return self.encoder_spec(self.n_encoder_layers - 1 - j)

    def shape_chain(self, input_hw):
        """Spatial shapes per level, index 0 = input."""
        chain = [tuple(int(v) for v in input_hw)]
        for i in range(self.n_encoder_layers):
            chain.append(self.encoder_spec(i).output_hw(*chain[-1]))
        return chain

    def to_dict(self):
        return {
            "kernel_sizes": list(self.kernel_sizes),
            "channels": list(self.channels),
            "input_channels": self.input_channels,
            "stride": self.stride,
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            kernel_sizes=tuple(payload["kernel_sizes"]),
            channels=tuple(payload["channels"]),
            input_channels=int(payload["input_channels"]),
            stride=int(payload["stride"]),
        )


@dataclass
class ModelParams:
    """Trainable arrays: encoder and decoder (weight, bias) pairs plus the
    N-by-N self-expressive matrix (present only for the fine-tune network)."""

    encoder: list
    decoder: list
    coefficients: Value | None = None

    def trainables(self):
        values = [v for pair in self.encoder + self.decoder for v in pair]
        if self.coefficients is not None:
            values.append(self.coefficients)
        return values

    def copy(self):
        def clone_pairs(pairs):
            return [(parameter(w.data.copy()), parameter(b.data.copy())) for w, b in pairs]

        coeff = None if self.coefficients is None else parameter(self.coefficients.data.copy())
        return ModelParams(clone_pairs(self.encoder), clone_pairs(self.decoder), coeff)


@dataclass
class LatentStack:
    """Per-level latent representations of the current batch.

    ``feature_maps[i]`` has shape (N, C_i, H_i, W_i); ``columns[i]`` is the
    same node flattened to a (D_i, N) matrix with one column per sample.
    ``shape_chain`` records the spatial shapes, index 0 being the input.
    """

    feature_maps: list
    columns: list
    shape_chain: list

    @property
    def n_samples(self):
        return self.feature_maps[0].shape[0]

    def column_arrays(self):
        return [c.data for c in self.columns]


@dataclass
class LossBreakdown:
    """Scalar graph nodes for each loss component.

    ``total`` is built as (reconstruction + self_expression) + regularizer,
    so the float identity total == (r + s) + g holds exactly.
    """

    reconstruction: Value
    self_expression: Value
    regularizer: Value
    total: Value

    def floats(self):
        return (
            self.reconstruction.item(),
            self.self_expression.item(),
            self.regularizer.item(),
            self.total.item(),
        )


@dataclass(frozen=True)
class ParameterCount:
    weights: int
    biases: int
    self_expressive: int


def init_params(arch, n_samples=None, seed=0, coefficient_value=1e-4):
    """Gaussian-initialized network parameters (and the self-expressive matrix).

    Weights draw from N(0, 2 / (k^2 * fan_in)) per layer, biases start at
    zero, and the self-expressive matrix starts at a small constant with a
    zeroed diagonal. Draw order is encoder weights then decoder weights, so
    a given seed always produces the same arrays.
    """
    rng = np.random.default_rng(seed)
    tau = arch.n_encoder_layers

    encoder = []
    for i in range(tau):
        spec = arch.encoder_spec(i)
        std = np.sqrt(2.0 / (spec.kernel_size**2 * spec.in_channels))
        encoder.append(
            (
                parameter(rng.normal(0.0, std, size=spec.weight_shape)),
                parameter(np.zeros(spec.out_channels)),
            )
        )

    decoder = []
    for j in range(tau):
        spec = arch.decoder_spec(j)
        # the deconv layer consumes spec.out_channels maps, so that is its fan-in
        std = np.sqrt(2.0 / (spec.kernel_size**2 * spec.out_channels))
        weight = parameter(rng.normal(0.0, std, size=spec.weight_shape))
        if j < tau - 1:
            bias = parameter(np.zeros(spec.out_channels))
        else:
            bias = parameter(np.zeros(spec.in_channels))
        decoder.append((weight, bias))

    coefficients = None
    if n_samples is not None:
        if int(n_samples) < 1:
            raise ConfigurationError(f"n_samples must be positive, got {n_samples}")
        c = np.full((n_samples, n_samples), float(coefficient_value))
        np.fill_diagonal(c, 0.0)
        coefficients = parameter(c)
    return ModelParams(encoder, decoder, coefficients)


def encode(x, encoder_params, arch):
    """Run the convolutional encoder and record every latent level."""
    data = x.data
    tau = arch.n_encoder_layers
    if data.ndim != 4 or data.shape[1] != arch.input_channels:
        raise ConfigurationError(
            f"encode: input shape {data.shape} incompatible with {arch.input_channels} channels"
        )
    if min(data.shape[2], data.shape[3]) < arch.stride**tau:
        raise ConfigurationError(
            f"encode: spatial dims {data.shape[2:]} too small for {tau} stride-{arch.stride} layers"
        )
    n = data.shape[0]
    chain = [tuple(data.shape[2:])]
    feature_maps = []
    columns = []
    z = x
    for i in range(tau):
        weight, bias = encoder_params[i]
        z = relu(conv2d(z, arch.encoder_spec(i), weight, bias))
        chain.append(tuple(z.shape[2:]))
        feature_maps.append(z)
        columns.append(transpose(reshape(z, (n, -1))))
    return LatentStack(feature_maps, columns, chain)


def self_express(latents, coefficients):
    """Right-multiply every flattened latent by the self-expressive matrix.

    Returns a new LatentStack whose entries are the transformed latents,
    sharing the shape chain of the input stack.
    """
    n = latents.n_samples
    if coefficients.data.shape != (n, n):
        raise ConfigurationError(
            f"self_express: coefficients shape {coefficients.data.shape} "
            f"does not match batch size {n}"
        )
    maps = []
    cols = []
    for z, col in zip(latents.feature_maps, latents.columns):
        mixed = matmul(col, coefficients)
        cols.append(mixed)
        maps.append(reshape(transpose(mixed), z.shape))
    return LatentStack(maps, cols, latents.shape_chain)


def decode(payloads, decoder_params, arch, recorded_shapes, use_skips=True):
    """Run the deconvolutional decoder over the payload stack.

    ``payloads[-1]`` is the decoder input; earlier entries are the skip
    payloads added before each inner activation (they may be None when
    ``use_skips`` is off). The final layer applies no activation and
    carries its bias on the output channel.
    """
    tau = arch.n_encoder_layers
    if len(payloads) != tau or len(recorded_shapes) != tau + 1:
        raise ConfigurationError(
            f"decode: expected {tau} payloads and {tau + 1} recorded shapes, "
            f"got {len(payloads)} and {len(recorded_shapes)}"
        )
    current = payloads[-1]
    for j in range(tau - 1):
        weight, bias = decoder_params[j]
        pre = deconv2d(current, arch.decoder_spec(j), weight, bias, recorded_shapes[tau - 1 - j])
        if use_skips:
            pre = add(pre, payloads[tau - 2 - j])
        current = relu(pre)
    weight, bias = decoder_params[tau - 1]
    return deconv2d(
        current, arch.decoder_spec(tau - 1), weight, bias, recorded_shapes[0], bias_on_output=True
    )


def forward_pretrain(x, encoder_params, decoder_params, arch, use_skips=True):
    """Reconstruction network: raw latents feed the decoder and the skips."""
    latents = encode(x, encoder_params, arch)
    return decode(latents.feature_maps, decoder_params, arch, latents.shape_chain, use_skips)


def forward_finetune(x, params, arch, skip_mode="full"):
    """Full network: self-expressed latents feed the decoder and the skips.

    Returns (reconstruction, latents, expressed_columns) where
    ``expressed_columns[i]`` is the (D_i, N) product for level i, or None
    for levels the configuration leaves untransformed (skip_mode "none"
    transforms only the innermost level and disables skip additions).
    """
    if skip_mode not in SKIP_MODES:
        raise ConfigurationError(f"skip_mode must be one of {SKIP_MODES}, got {skip_mode!r}")
    latents = encode(x, params.encoder, arch)
    tau = arch.n_encoder_layers
    if skip_mode == "full":
        expressed = self_express(latents, params.coefficients)
        x_hat = decode(
            expressed.feature_maps, params.decoder, arch, latents.shape_chain, use_skips=True
        )
        return x_hat, latents, list(expressed.columns)
    mixed = matmul(latents.columns[-1], params.coefficients)
    payload = reshape(transpose(mixed), latents.feature_maps[-1].shape)
    payloads = [None] * (tau - 1) + [payload]
    x_hat = decode(payloads, params.decoder, arch, latents.shape_chain, use_skips=False)
    return x_hat, latents, [None] * (tau - 1) + [mixed]


def reconstruction_loss(x, x_hat):
    """Half the squared Frobenius norm of the reconstruction residual."""
    return scale(frobenius_sq(sub(x, x_hat)), 0.5)


def loss_global(x, x_hat, latents, coefficients, regularization, expressed_columns=None):
    """Reconstruction + per-level self-expression + coefficient penalty.

    ``expressed_columns`` may carry the already-built (D_i, N) products so
    the loss shares graph nodes with the decoder payloads; entries set to
    None are excluded from the self-expression sum (and None entries only
    arise for configurations that exclude those levels). When omitted, the
    products are built here for every level.
    """
    if regularization < 0:
        raise ConfigurationError(f"regularization must be >= 0, got {regularization}")
    recon = reconstruction_loss(x, x_hat)
    if expressed_columns is None:
        expressed_columns = [matmul(col, coefficients) for col in latents.columns]
    se = None
    for col, mixed in zip(latents.columns, expressed_columns):
        if mixed is None:
            continue
        term = frobenius_sq(sub(col, mixed))
        se = term if se is None else add(se, term)
    if se is None:
        raise ConfigurationError("loss_global: no self-expression terms to sum")
    reg = scale(frobenius_sq(coefficients), regularization)
    total = add(add(recon, se), reg)
    return LossBreakdown(recon, se, reg, total)


def count_parameters(arch, n_samples):
    """Closed-form parameter counts, verified against direct enumeration.

    Weights: sum over encoder layers of 2 k_i^2 n_{i-1} n_i (the decoder
    mirrors each layer). Biases: 2 * sum(n_i) - n_1 + 1, reflecting that
    every decoder layer except the last keeps its bias on the deconv input
    channels while the last has a single output-channel bias per image
    channel. The self-expressive matrix holds n_samples^2 entries.
    """
    if int(n_samples) < 1:
        raise ConfigurationError(f"n_samples must be positive, got {n_samples}")
    tau = arch.n_encoder_layers
    weights = 0
    for i in range(tau):
        spec = arch.encoder_spec(i)
        weights += 2 * spec.kernel_size**2 * spec.in_channels * spec.out_channels
    enc_channels = arch.channels[:tau]
    biases = 2 * sum(enc_channels) - enc_channels[0] + arch.input_channels
    self_expressive = int(n_samples) ** 2

    params = init_params(arch, n_samples=n_samples, seed=0)
    enum_weights = sum(w.data.size for w, _ in params.encoder + params.decoder)
    enum_biases = sum(b.data.size for _, b in params.encoder + params.decoder)
    enum_self = params.coefficients.data.size
    if (enum_weights, enum_biases, enum_self) != (weights, biases, self_expressive):
        raise RedscError(
            "parameter count formulas disagree with enumeration: "
            f"formula {(weights, biases, self_expressive)}, "
            f"enumeration {(enum_weights, enum_biases, enum_self)}"
        )
    return ParameterCount(weights, biases, self_expressive)
