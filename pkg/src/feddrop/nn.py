"""Dense residual feed-forward classifier with manual backprop.

The model is: input projection -> N residual feed-forward blocks ->
output projection. Each block computes ``out = in + relu(in @ w1 + b1) @ w2
+ b2``; the per-block hidden dimension (columns of w1) is the axis that
structural dropout removes. Everything is float64 and pure: operations
return new parameter trees and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .seeds import check_seed


@dataclass(frozen=True)
class Architecture:
    """Dimensions of the full model."""

    input_dim: int
    model_dim: int
    hidden_dim: int
    num_blocks: int
    num_classes: int

    def __post_init__(self) -> None:
        for name in ("input_dim", "model_dim", "hidden_dim", "num_blocks", "num_classes"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")

    @staticmethod
    def from_params(params: "ModelParams") -> "Architecture":
        """Dimensions of a full model; shrunk models have per-block hidden dims."""
        return Architecture(
            input_dim=params.input_w.shape[0],
            model_dim=params.input_w.shape[1],
            hidden_dim=params.blocks[0].w1.shape[1],
            num_blocks=len(params.blocks),
            num_classes=params.output_w.shape[1],
        )


@dataclass
class FFBlock:
    w1: np.ndarray  # (model_dim, hidden_dim)
    b1: np.ndarray  # (hidden_dim,)
    w2: np.ndarray  # (hidden_dim, model_dim)
    b2: np.ndarray  # (model_dim,)

    def arrays(self) -> Iterator[np.ndarray]:
        yield self.w1
        yield self.b1
        yield self.w2
        yield self.b2


@dataclass
class ModelParams:
    """Full parameter tree; also reused for gradients and optimizer moments."""

    input_w: np.ndarray  # (input_dim, model_dim)
    input_b: np.ndarray  # (model_dim,)
    blocks: list[FFBlock]
    output_w: np.ndarray  # (model_dim, num_classes)
    output_b: np.ndarray  # (num_classes,)

    def arrays(self) -> Iterator[np.ndarray]:
        """All arrays in declaration order (the canonical serialization order)."""
        yield self.input_w
        yield self.input_b
        for block in self.blocks:
            yield from block.arrays()
        yield self.output_w
        yield self.output_b

    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(a.shape for a in self.arrays())

    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(block.w1.shape[1] for block in self.blocks)

    def copy(self) -> "ModelParams":
        return tree_map(np.copy, self)


# Gradients share the ModelParams tree structure.
Gradients = ModelParams


def tree_map(fn, *trees: ModelParams) -> ModelParams:
    """Apply ``fn`` leaf-wise across shape-congruent parameter trees."""
    first = trees[0]
    if len(trees) > 1:
        shapes = first.shapes()
        for other in trees[1:]:
            if other.shapes() != shapes:
                raise ShapeError(
                    f"parameter trees are not congruent: {shapes} vs {other.shapes()}"
                )
    blocks = [
        FFBlock(
            w1=np.asarray(fn(*(t.blocks[i].w1 for t in trees))),
            b1=np.asarray(fn(*(t.blocks[i].b1 for t in trees))),
            w2=np.asarray(fn(*(t.blocks[i].w2 for t in trees))),
            b2=np.asarray(fn(*(t.blocks[i].b2 for t in trees))),
        )
        for i in range(len(first.blocks))
    ]
    return ModelParams(
        input_w=np.asarray(fn(*(t.input_w for t in trees))),
        input_b=np.asarray(fn(*(t.input_b for t in trees))),
        blocks=blocks,
        output_w=np.asarray(fn(*(t.output_w for t in trees))),
        output_b=np.asarray(fn(*(t.output_b for t in trees))),
    )


def tree_zeros_like(params: ModelParams) -> ModelParams:
    return tree_map(np.zeros_like, params)


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero.

    Draw order is fixed (input_w, each block's w1 then w2, output_w) so a
    given seed is bit-reproducible.
    """
    check_seed(seed)
    rng = np.random.default_rng(seed)

    def draw(fan_in: int, shape: tuple[int, int]) -> np.ndarray:
        scale = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-scale, scale, size=shape)

    blocks = []
    input_w = draw(arch.input_dim, (arch.input_dim, arch.model_dim))
    for _ in range(arch.num_blocks):
        w1 = draw(arch.model_dim, (arch.model_dim, arch.hidden_dim))
        w2 = draw(arch.hidden_dim, (arch.hidden_dim, arch.model_dim))
        blocks.append(
            FFBlock(
                w1=w1,
                b1=np.zeros(arch.hidden_dim),
                w2=w2,
                b2=np.zeros(arch.model_dim),
            )
        )
    output_w = draw(arch.model_dim, (arch.model_dim, arch.num_classes))
    return ModelParams(
        input_w=input_w,
        input_b=np.zeros(arch.model_dim),
        blocks=blocks,
        output_w=output_w,
        output_b=np.zeros(arch.num_classes),
    )


def param_count(obj: ModelParams | Architecture) -> int:
    """Exact number of trainable scalars in a parameter tree or architecture."""
    if isinstance(obj, Architecture):
        i, m, h, n, c = (
            obj.input_dim,
            obj.model_dim,
            obj.hidden_dim,
            obj.num_blocks,
            obj.num_classes,
        )
        return (i * m + m) + n * (2 * m * h + h + m) + (m * c + c)
    return int(sum(a.size for a in obj.arrays()))


@dataclass
class ForwardCache:
    """Intermediates retained for the backward pass."""

    features: np.ndarray
    block_inputs: list[np.ndarray] = field(default_factory=list)  # len num_blocks + 1
    block_pre: list[np.ndarray] = field(default_factory=list)  # z = in @ w1 + b1
    block_act: list[np.ndarray] = field(default_factory=list)  # relu(z)


def forward(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Logits of shape (batch, num_classes) plus the backward cache."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.input_w.shape[0]:
        raise ShapeError(
            f"features shape {features.shape} does not match input dim "
            f"{params.input_w.shape[0]}"
        )
    cache = ForwardCache(features=features)
    h = features @ params.input_w + params.input_b
    cache.block_inputs.append(h)
    for block in params.blocks:
        z = h @ block.w1 + block.b1
        a = np.maximum(z, 0.0)
        h = h + a @ block.w2 + block.b2
        cache.block_pre.append(z)
        cache.block_act.append(a)
        cache.block_inputs.append(h)
    logits = h @ params.output_w + params.output_b
    return logits, cache


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(
    params: ModelParams, features: np.ndarray, labels: np.ndarray
) -> tuple[float, Gradients]:
    """Mean softmax cross-entropy and its exact analytic gradients."""
    labels = np.asarray(labels)
    num_classes = params.output_w.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"labels must lie in [0, {num_classes})")
    logits, cache = forward(params, features)
    batch = logits.shape[0]
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")

    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(batch), labels].mean())

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch

    h_final = cache.block_inputs[-1]
    d_output_w = h_final.T @ dlogits
    d_output_b = dlogits.sum(axis=0)
    dh = dlogits @ params.output_w.T

    grad_blocks: list[FFBlock] = []
    for i in reversed(range(len(params.blocks))):
        block = params.blocks[i]
        h_in = cache.block_inputs[i]
        a = cache.block_act[i]
        d_w2 = a.T @ dh
        d_b2 = dh.sum(axis=0)
        da = dh @ block.w2.T
        dz = da * (cache.block_pre[i] > 0.0)
        d_w1 = h_in.T @ dz
        d_b1 = dz.sum(axis=0)
        grad_blocks.append(FFBlock(w1=d_w1, b1=d_b1, w2=d_w2, b2=d_b2))
        dh = dh + dz @ block.w1.T  # residual path plus FF path
    grad_blocks.reverse()

    d_input_w = cache.features.T @ dh
    d_input_b = dh.sum(axis=0)
    grads = ModelParams(
        input_w=d_input_w,
        input_b=d_input_b,
        blocks=grad_blocks,
        output_w=d_output_w,
        output_b=d_output_b,
    )
    return loss, grads


def evaluate(params: ModelParams, features: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(mean cross-entropy, classification error rate) on a labeled set."""
    logits, _ = forward(params, features)
    labels = np.asarray(labels)
    log_probs = _log_softmax(logits)
    loss = float(-log_probs[np.arange(logits.shape[0]), labels].mean())
    error = float(np.mean(np.argmax(logits, axis=1) != labels))
    return loss, error


def sgd_step(params: ModelParams, grads: Gradients, lr: float) -> ModelParams:
    """p' = p - lr * g, elementwise."""
    return tree_map(lambda p, g: p - lr * g, params, grads)


@dataclass
class AdamState:
    """First/second moment trees plus step counter and hyperparameters."""

    m: ModelParams
    v: ModelParams
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def init_adam(
    params: ModelParams,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    return AdamState(
        m=tree_zeros_like(params),
        v=tree_zeros_like(params),
        step=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    state: AdamState, params: ModelParams, grads: Gradients
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns the new params and state."""
    t = state.step + 1
    new_m = tree_map(lambda m, g: state.beta1 * m + (1.0 - state.beta1) * g, state.m, grads)
    new_v = tree_map(lambda v, g: state.beta2 * v + (1.0 - state.beta2) * g * g, state.v, grads)
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params = tree_map(
        lambda p, m, v: p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps),
        params,
        new_m,
        new_v,
    )
    new_state = AdamState(
        m=new_m,
        v=new_v,
        step=t,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    return new_params, new_state
