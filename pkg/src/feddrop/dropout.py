"""Structural dropout: mappings, shrink/expand, and size accounting.

A mapping lists, per feed-forward block, the hidden units a client keeps.
Shrinking removes the matching columns of w1, entries of b1 and rows of
w2; projections, b2 and the residual path are untouched. Expanding
scatters a sub-model-shaped tree back into full-model coordinates and
reports exactly which coordinates were written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import seeds
from .errors import ConfigError, MappingError, ShapeError
from .nn import Architecture, FFBlock, ModelParams, param_count

SCHEMES = ("PCPR", "PR")


@dataclass(frozen=True)
class DropoutConfig:
    """Per-block dropout rates plus the mapping scheme and its seed."""

    rates: tuple[float, ...]
    scheme: str = "PCPR"
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        for rate in self.rates:
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        seeds.check_seed(self.seed)

    @staticmethod
    def uniform(rate: float, num_blocks: int, scheme: str = "PCPR", seed: int = 0) -> "DropoutConfig":
        return DropoutConfig(rates=(float(rate),) * num_blocks, scheme=scheme, seed=seed)


@dataclass(frozen=True)
class DropoutMapping:
    """Per-block sorted, duplicate-free kept hidden-unit indices."""

    kept: tuple[tuple[int, ...], ...]

    def as_lists(self) -> list[list[int]]:
        return [list(block) for block in self.kept]


@dataclass(frozen=True)
class MappingSet:
    mappings: tuple[DropoutMapping, ...]
    round_index: int


def kept_count(hidden_dim: int, rate: float) -> int:
    """max(1, round((1-rate)*hidden_dim)), ties rounded half away from zero.

    The product is pre-rounded to 9 decimals so decimal-intent ties (e.g.
    hidden_dim=15, rate=0.3 -> 10.5) survive binary representation error.
    """
    if hidden_dim < 1:
        raise ConfigError(f"hidden_dim must be >= 1, got {hidden_dim}")
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    exact = round((1.0 - rate) * hidden_dim, 9)
    return max(1, int(math.floor(exact + 0.5)))


def draw_mapping(
    hidden_dims: Sequence[int], rates: Sequence[float], rng: np.random.Generator
) -> DropoutMapping:
    """Sample kept indices uniformly without replacement, one block at a time."""
    if len(hidden_dims) != len(rates):
        raise ConfigError(
            f"got {len(rates)} rates for {len(hidden_dims)} blocks"
        )
    kept_blocks = []
    for h, rate in zip(hidden_dims, rates):
        k = kept_count(h, rate)
        if k == h:
            kept_blocks.append(tuple(range(h)))
        else:
            idx = np.sort(rng.choice(h, size=k, replace=False))
            kept_blocks.append(tuple(int(i) for i in idx))
    return DropoutMapping(kept=tuple(kept_blocks))


def generate_mappings(
    config: DropoutConfig, clients_per_round: int, round_index: int, arch: Architecture
) -> MappingSet:
    """The round's mappings: one per client (PCPR) or one shared (PR).

    PCPR draws client k's mapping from the (seed, round, k) stream; PR
    draws a single mapping from the (seed, round) stream and replicates
    it, so the shared sub-model changes from one round to the next.
    """
    if clients_per_round < 1:
        raise ConfigError(f"clients_per_round must be >= 1, got {clients_per_round}")
    if len(config.rates) != arch.num_blocks:
        raise ConfigError(
            f"dropout config has {len(config.rates)} rates but the model has "
            f"{arch.num_blocks} blocks"
        )
    hidden_dims = (arch.hidden_dim,) * arch.num_blocks
    if config.scheme == "PR":
        rng = seeds.substream(config.seed, seeds.MAPPING, round_index)
        shared = draw_mapping(hidden_dims, config.rates, rng)
        mappings = (shared,) * clients_per_round
    else:
        mappings = tuple(
            draw_mapping(
                hidden_dims,
                config.rates,
                seeds.substream(config.seed, seeds.MAPPING, round_index, k),
            )
            for k in range(clients_per_round)
        )
    return MappingSet(mappings=mappings, round_index=round_index)


def _check_mapping(params_blocks: Sequence[FFBlock], mapping: DropoutMapping) -> None:
    if len(mapping.kept) != len(params_blocks):
        raise MappingError(
            f"mapping covers {len(mapping.kept)} blocks, model has {len(params_blocks)}"
        )
    for b, (block, kept) in enumerate(zip(params_blocks, mapping.kept)):
        h = block.w1.shape[1]
        if len(kept) < 1:
            raise MappingError(f"block {b}: empty kept set")
        if any(kept[i] >= kept[i + 1] for i in range(len(kept) - 1)):
            raise MappingError(f"block {b}: kept indices must be strictly increasing")
        if kept[0] < 0 or kept[-1] >= h:
            raise MappingError(f"block {b}: kept index out of range [0, {h})")


def shrink(params: ModelParams, mapping: DropoutMapping) -> ModelParams:
    """Sub-model keeping only the mapped hidden units of each block."""
    _check_mapping(params.blocks, mapping)
    blocks = []
    for block, kept in zip(params.blocks, mapping.kept):
        idx = np.asarray(kept, dtype=np.intp)
        blocks.append(
            FFBlock(
                w1=block.w1[:, idx],
                b1=block.b1[idx],
                w2=block.w2[idx, :],
                b2=block.b2.copy(),
            )
        )
    return ModelParams(
        input_w=params.input_w.copy(),
        input_b=params.input_b.copy(),
        blocks=blocks,
        output_w=params.output_w.copy(),
        output_b=params.output_b.copy(),
    )


def expand(
    delta_sub: ModelParams, mapping: DropoutMapping, arch: Architecture
) -> tuple[ModelParams, ModelParams]:
    """Scatter a sub-model tree into full-model coordinates.

    Returns (delta_full, coverage_mask): unmapped coordinates are exactly
    zero in delta_full and 0.0 in the mask; written coordinates carry the
    sub-model values and 1.0. Projections and b2 are always fully written.
    """
    if len(mapping.kept) != arch.num_blocks:
        raise MappingError(
            f"mapping covers {len(mapping.kept)} blocks, architecture has {arch.num_blocks}"
        )
    expected = [
        ((arch.model_dim, len(kept)), (len(kept),), (len(kept), arch.model_dim), (arch.model_dim,))
        for kept in mapping.kept
    ]
    for b, (block, shapes) in enumerate(zip(delta_sub.blocks, expected)):
        actual = tuple(a.shape for a in block.arrays())
        if actual != shapes:
            raise ShapeError(f"block {b}: sub tree shapes {actual} != expected {shapes}")
    proj_shapes = (
        delta_sub.input_w.shape,
        delta_sub.input_b.shape,
        delta_sub.output_w.shape,
        delta_sub.output_b.shape,
    )
    want = (
        (arch.input_dim, arch.model_dim),
        (arch.model_dim,),
        (arch.model_dim, arch.num_classes),
        (arch.num_classes,),
    )
    if proj_shapes != want:
        raise ShapeError(f"projection shapes {proj_shapes} != expected {want}")

    blocks = []
    mask_blocks = []
    for block, kept in zip(delta_sub.blocks, mapping.kept):
        idx = np.asarray(kept, dtype=np.intp)
        w1 = np.zeros((arch.model_dim, arch.hidden_dim))
        b1 = np.zeros(arch.hidden_dim)
        w2 = np.zeros((arch.hidden_dim, arch.model_dim))
        w1[:, idx] = block.w1
        b1[idx] = block.b1
        w2[idx, :] = block.w2
        m_w1 = np.zeros_like(w1)
        m_b1 = np.zeros_like(b1)
        m_w2 = np.zeros_like(w2)
        m_w1[:, idx] = 1.0
        m_b1[idx] = 1.0
        m_w2[idx, :] = 1.0
        blocks.append(FFBlock(w1=w1, b1=b1, w2=w2, b2=block.b2.copy()))
        mask_blocks.append(
            FFBlock(w1=m_w1, b1=m_b1, w2=m_w2, b2=np.ones(arch.model_dim))
        )
    delta_full = ModelParams(
        input_w=delta_sub.input_w.copy(),
        input_b=delta_sub.input_b.copy(),
        blocks=blocks,
        output_w=delta_sub.output_w.copy(),
        output_b=delta_sub.output_b.copy(),
    )
    mask = ModelParams(
        input_w=np.ones((arch.input_dim, arch.model_dim)),
        input_b=np.ones(arch.model_dim),
        blocks=mask_blocks,
        output_w=np.ones((arch.model_dim, arch.num_classes)),
        output_b=np.ones(arch.num_classes),
    )
    return delta_full, mask


def shrunk_param_count(arch: Architecture, rates: Sequence[float]) -> int:
    """Parameters of the sub-model induced by per-block rates (via kept_count)."""
    if len(rates) != arch.num_blocks:
        raise ConfigError(
            f"got {len(rates)} rates for {arch.num_blocks} blocks"
        )
    m = arch.model_dim
    exempt = (arch.input_dim * m + m) + (m * arch.num_classes + arch.num_classes)
    blocks = sum(
        2 * m * kept_count(arch.hidden_dim, rate) + kept_count(arch.hidden_dim, rate) + m
        for rate in rates
    )
    return exempt + blocks


def size_reduction(arch: Architecture, rates: Sequence[float]) -> float:
    """1 - shrunk/full parameter count, computed exactly."""
    return 1.0 - shrunk_param_count(arch, rates) / param_count(arch)


def ff_param_split(arch: Architecture) -> tuple[int, int]:
    """(feed-forward block params, dropout-exempt projection params)."""
    total = param_count(arch)
    m = arch.model_dim
    exempt = (arch.input_dim * m + m) + (m * arch.num_classes + arch.num_classes)
    return total - exempt, exempt


def make_table3_arch(
    ff_fraction: float,
    total_params_target: int,
    model_dim: int = 32,
    num_blocks: int = 4,
) -> Architecture:
    """Toy architecture whose FF-block parameter share hits ``ff_fraction``.

    Searches hidden dims (multiples of 10, so the usual 10..50% rate
    ladder drops an exact number of units) and input/class dims for the
    closest share within 1%; used only for size-accounting reproduction.
    """
    if not 0.0 < ff_fraction < 1.0:
        raise ConfigError(f"ff_fraction must lie in (0, 1), got {ff_fraction}")
    if total_params_target < 1:
        raise ConfigError("total_params_target must be >= 1")
    m = model_dim
    n = num_blocks
    ideal_h = (ff_fraction * total_params_target / n - m) / (2 * m + 1)
    base = max(10, int(round(ideal_h / 10.0)) * 10)
    best: tuple[float, float, Architecture] | None = None
    for h in sorted({max(10, base + step) for step in range(-30, 40, 10)}):
        ff = n * (2 * m * h + h + m)
        exempt_target = ff * (1.0 - ff_fraction) / ff_fraction
        for c in range(4, 17):
            i_real = (exempt_target - m - c * (m + 1)) / m
            for i in {max(1, int(math.floor(i_real)) + d) for d in (-1, 0, 1, 2)}:
                arch = Architecture(
                    input_dim=i, model_dim=m, hidden_dim=h, num_blocks=n, num_classes=c
                )
                share = ff / param_count(arch)
                key = (abs(share - ff_fraction), abs(param_count(arch) - total_params_target))
                if best is None or key < (best[0], best[1]):
                    best = (key[0], key[1], arch)
    assert best is not None
    if best[0] > 0.01:
        raise ConfigError(
            f"cannot realize FF share {ff_fraction} within 1% near "
            f"{total_params_target} params (best error {best[0]:.4f})"
        )
    return best[2]
