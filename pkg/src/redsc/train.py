"""Two-phase full-batch training with Adam.

Phase one (``pretrain``) fits the encoder/decoder on the reconstruction
objective alone; phase two (``finetune``) continues from those weights with
the self-expressive matrix in the loop, minimising reconstruction +
per-level self-expression + coefficient penalty over all parameters. Every
epoch is one gradient step on the whole batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import add, backward, constant, frobenius_sq, matmul, parameter, scale, sub
from .cluster import cluster_coefficients
from .errors import ConfigurationError, DivergenceError
from .model import (
    SKIP_MODES,
    ModelParams,
    encode,
    forward_finetune,
    forward_pretrain,
    init_params,
    loss_global,
    reconstruction_loss,
)

COEFFICIENT_INIT = 1e-4  # off-diagonal magnitude of a fresh self-expressive matrix


@dataclass
class TrainConfig:
    """Hyperparameters for both phases, validated on construction.

    ``skip_mode`` "none" is the ablation wiring: only the innermost latent
    passes through the self-expressive matrix and the decoder runs without
    skip additions. ``freeze_features`` restricts fine-tuning to the
    coefficient matrix on the self-expression + penalty objective with the
    encoder outputs held fixed, which has a closed-form minimiser to test
    against. ``err_every`` > 0 scores clustering error every that many
    epochs during fine-tuning (requires ground truth).
    """

    epochs_pretrain: int
    epochs_finetune: int
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    regularization: float = 1.0
    seed: int = 0
    zero_diag: bool = True
    skip_mode: str = "full"
    freeze_features: bool = False
    err_every: int = 0
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive; got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1); got {beta}")
        if self.adam_eps <= 0:
            raise ConfigurationError(f"adam_eps must be positive; got {self.adam_eps}")
        if self.regularization < 0:
            raise ConfigurationError(
                f"regularization must be non-negative; got {self.regularization}"
            )
        for name in ("epochs_pretrain", "epochs_finetune", "err_every"):
            count = getattr(self, name)
            if not isinstance(count, int) or count < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer; got {count!r}")
        if self.skip_mode not in SKIP_MODES:
            raise ConfigurationError(
                f"skip_mode must be one of {SKIP_MODES}; got {self.skip_mode!r}"
            )
        if self.divergence_factor <= 1.0:
            raise ConfigurationError(
                f"divergence_factor must exceed 1; got {self.divergence_factor}"
            )


@dataclass
class EpochRecord:
    epoch: int
    reconstruction: float
    self_expression: float
    regularizer: float
    total: float
    err: float | None = None


class LossHistory:
    """Ordered per-epoch loss components, exportable as CSV."""

    CSV_HEADER = "epoch,reconstruction,self_expression,regularizer,total,err"

    def __init__(self, records=None):
        self.records: list[EpochRecord] = list(records) if records else []

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    @property
    def final_total(self) -> float:
        if not self.records:
            raise ConfigurationError("empty loss history has no final total")
        return self.records[-1].total

    def epochs_to_reach(self, fraction_of_final: float):
        """First epoch whose total is <= fraction_of_final * final total."""
        if not self.records:
            return None
        threshold = fraction_of_final * self.final_total
        for record in self.records:
            if record.total <= threshold:
                return record.epoch
        return None

    def csv_text(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.records:
            err = "" if r.err is None else repr(float(r.err))
            lines.append(
                f"{r.epoch},{float(r.reconstruction)!r},{float(r.self_expression)!r},"
                f"{float(r.regularizer)!r},{float(r.total)!r},{err}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


class Adam:
    """Standard Adam with bias correction over a fixed list of parameters.

    Parameters whose gradient is unset for a step are left untouched
    (their moment buffers do not decay either).
    """

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        bias1 = 1.0 - self.beta1**self.step_count
        bias2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def _reset_grads(values) -> None:
    for v in values:
        v.grad = None


def _adam_for(config: TrainConfig, params) -> Adam:
    return Adam(params, config.learning_rate, config.adam_beta1, config.adam_beta2,
                config.adam_eps)


def _check_divergence(total: float, initial: float, config: TrainConfig,
                      epoch: int, phase: str) -> None:
    if not np.isfinite(total) or total > config.divergence_factor * initial:
        raise DivergenceError(
            f"{phase} diverged at epoch {epoch}: total loss {total!r} "
            f"exceeds {config.divergence_factor:g} x initial ({initial!r})"
        )


def pretrain(x, arch, config: TrainConfig):
    """Fit encoder/decoder on reconstruction only; returns (params, history).

    Parameters are initialised from ``config.seed``; the returned model has
    no coefficient matrix yet (``finetune`` adds one sized to its batch).
    """
    x = np.asarray(x, dtype=float)
    params = init_params(arch, seed=config.seed)
    history = LossHistory()
    trainables = params.trainables()
    optimizer = _adam_for(config, trainables)
    x_node = constant(x)
    use_skips = config.skip_mode == "full"
    initial = None
    for epoch in range(1, config.epochs_pretrain + 1):
        _reset_grads(trainables)
        x_hat = forward_pretrain(x_node, params.encoder, params.decoder, arch, use_skips)
        loss = reconstruction_loss(x_node, x_hat)
        total = loss.item()
        initial = total if initial is None else initial
        _check_divergence(total, initial, config, epoch, "pre-training")
        history.append(EpochRecord(epoch, total, 0.0, 0.0, total))
        backward(loss)
        optimizer.step()
    return params, history


def _fresh_coefficients(n: int):
    matrix = np.full((n, n), COEFFICIENT_INIT)
    np.fill_diagonal(matrix, 0.0)
    return parameter(matrix)


def _epoch_err(config: TrainConfig, truth, epoch: int, coefficients):
    if truth is None or config.err_every == 0 or epoch % config.err_every != 0:
        return None
    n_clusters = np.unique(truth).size
    result = cluster_coefficients(coefficients.data, n_clusters, seed=config.seed, truth=truth)
    return result.err


def finetune(x, init: ModelParams, arch, config: TrainConfig, truth=None):
    """Continue from pretrained weights with the self-expressive matrix.

    ``init`` is copied, never mutated. A coefficient matrix is created when
    the initialisation lacks one; an existing one must match the batch size.
    With ``truth`` given and ``config.err_every`` > 0, clustering error is
    scored on the requested cadence (against the coefficients each epoch's
    loss was computed from).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    params = init.copy()
    if params.coefficients is None:
        params.coefficients = _fresh_coefficients(n)
    elif params.coefficients.data.shape != (n, n):
        raise ConfigurationError(
            f"initialization carries a {params.coefficients.data.shape[0]}-sample "
            f"coefficient matrix but the batch has {n} samples"
        )
    if config.freeze_features:
        return _finetune_frozen_features(x, params, arch, config, truth)

    history = LossHistory()
    trainables = params.trainables()
    optimizer = _adam_for(config, trainables)
    x_node = constant(x)
    initial = None
    for epoch in range(1, config.epochs_finetune + 1):
        _reset_grads(trainables)
        x_hat, latents, expressed = forward_finetune(x_node, params, arch, config.skip_mode)
        loss = loss_global(x_node, x_hat, latents, params.coefficients,
                           config.regularization, expressed)
        recon, se, reg, total = loss.floats()
        initial = total if initial is None else initial
        _check_divergence(total, initial, config, epoch, "fine-tuning")
        err = _epoch_err(config, truth, epoch, params.coefficients)
        history.append(EpochRecord(epoch, recon, se, reg, total, err))
        backward(loss.total)
        optimizer.step()
        if config.zero_diag:
            np.fill_diagonal(params.coefficients.data, 0.0)
    return params, history


def _finetune_frozen_features(x, params: ModelParams, arch, config: TrainConfig, truth):
    """Optimise only the coefficient matrix on self-expression + penalty.

    Encoder outputs are computed once and held constant, so this minimises
    the ridge objective the closed-form baseline solves. The reconstruction
    column of the history is recorded as nan: the decoder is not part of
    this objective and is never evaluated.
    """
    latents = encode(constant(x), params.encoder, arch)
    columns = [constant(c.data) for c in latents.columns]
    if config.skip_mode == "none":
        columns = columns[-1:]
    theta = params.coefficients
    optimizer = _adam_for(config, [theta])
    history = LossHistory()
    initial = None
    for epoch in range(1, config.epochs_finetune + 1):
        theta.grad = None
        se = None
        for col in columns:
            term = frobenius_sq(sub(col, matmul(col, theta)))
            se = term if se is None else add(se, term)
        reg = scale(frobenius_sq(theta), config.regularization)
        loss = add(se, reg)
        total = loss.item()
        initial = total if initial is None else initial
        _check_divergence(total, initial, config, epoch, "fine-tuning (frozen features)")
        err = _epoch_err(config, truth, epoch, theta)
        history.append(EpochRecord(epoch, float("nan"), se.item(), reg.item(), total, err))
        backward(loss)
        optimizer.step()
        if config.zero_diag:
            np.fill_diagonal(theta.data, 0.0)
    return params, history
