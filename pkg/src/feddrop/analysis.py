"""Ambient-block ranking, per-block rate assignment, sub-model sampling.

A block is "ambient" when resetting its parameters to their initial values
barely degrades eval error; ambient blocks tolerate (and are targeted
with) extra dropout. Sub-model sampling draws random mappings from a
trained model and evaluates the shrunk models directly, with no further
training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeds
from .data import LabeledSet
from .dropout import draw_mapping, shrink
from .errors import ConfigError, ShapeError
from .nn import ModelParams, evaluate


@dataclass(frozen=True)
class AmbientRanking:
    """Block indices most-ambient first, plus per-block error degradation.

    degradations[b] is the eval-error increase when block b is reset to its
    initial parameters; order sorts blocks ascending by that degradation
    (ties broken by lower block index).
    """

    order: tuple[int, ...]
    degradations: tuple[float, ...]
    trained_error: float


@dataclass(frozen=True)
class SubModelReport:
    n: int
    rate: float
    seed: int
    errors: tuple[float, ...]
    mean_error: float
    std_error: float  # population std


def ambient_rank(
    trained: ModelParams, init: ModelParams, eval_set: LabeledSet
) -> AmbientRanking:
    """Rank blocks by the error cost of resetting them to initial values."""
    if trained.shapes() != init.shapes():
        raise ShapeError("trained and initial parameters are not congruent")
    _, trained_error = evaluate(trained, eval_set.features, eval_set.labels)
    degradations = []
    for b in range(len(trained.blocks)):
        blocks = list(trained.blocks)
        blocks[b] = init.blocks[b]
        variant = ModelParams(
            input_w=trained.input_w,
            input_b=trained.input_b,
            blocks=blocks,
            output_w=trained.output_w,
            output_b=trained.output_b,
        )
        _, reset_error = evaluate(variant, eval_set.features, eval_set.labels)
        degradations.append(reset_error - trained_error)
    order = tuple(sorted(range(len(degradations)), key=lambda b: (degradations[b], b)))
    return AmbientRanking(
        order=order, degradations=tuple(degradations), trained_error=trained_error
    )


def assign_rates(
    base_rate: float, extra: list[float] | tuple[float, ...], ranking: AmbientRanking
) -> tuple[float, ...]:
    """Per-block rates: the block at ambient rank n gets base_rate + extra[n].

    Blocks beyond len(extra) get the flat base rate; an empty extra list is
    the uniform configuration.
    """
    num_blocks = len(ranking.order)
    if len(extra) > num_blocks:
        raise ConfigError(f"{len(extra)} increments for {num_blocks} blocks")
    rates = [base_rate] * num_blocks
    for rank, increment in enumerate(extra):
        rates[ranking.order[rank]] = base_rate + increment
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"assigned rate {rate} outside [0, 1)")
    return tuple(rates)


def sample_submodels(
    trained: ModelParams, rate: float, n: int, seed: int, eval_set: LabeledSet
) -> SubModelReport:
    """Evaluate n randomly shrunk copies of a trained model, no retraining."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"rate must lie in [0, 1), got {rate}")
    hidden_dims = trained.hidden_dims()
    rates = (rate,) * len(hidden_dims)
    errors = []
    for i in range(n):
        rng = seeds.substream(seed, seeds.SUBMODEL, i)
        mapping = draw_mapping(hidden_dims, rates, rng)
        sub = shrink(trained, mapping)
        _, error = evaluate(sub, eval_set.features, eval_set.labels)
        errors.append(error)
    arr = np.array(errors)
    return SubModelReport(
        n=n,
        rate=rate,
        seed=seed,
        errors=tuple(float(e) for e in errors),
        mean_error=float(arr.mean()),
        std_error=float(arr.std()),  # population std by definition of np.std
    )
