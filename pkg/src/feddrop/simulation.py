"""Federated round orchestration.

Each round: sample clients, generate mappings, shrink the server model per
client, run local SGD on the sub-models, expand the deltas (initial minus
final weights) back to full shape, aggregate them into a pseudo-gradient,
and apply the server optimizer. Client work is pure and keyed by seeded
substreams, so rounds are reproducible and independent of whether clients
run sequentially or in a thread pool.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import seeds
from .data import FederatedDataset, split_holdout
from .dropout import DropoutConfig, MappingSet, expand, generate_mappings, shrink, shrunk_param_count
from .errors import ConfigError, RoundError, ShapeError
from .nn import (
    AdamState,
    Architecture,
    ModelParams,
    adam_step,
    evaluate,
    init_adam,
    init_params,
    loss_and_grads,
    sgd_step,
    tree_map,
)

BYTES_PER_PARAM = 8  # float64 payload, both directions

AGGREGATION_MODES = ("covered-mean", "participant-mean")


class SkipClient(Exception):
    """Raised by client_update when a client has no data to train on."""


@dataclass(frozen=True)
class ServerSgd:
    lr: float = 1.0


@dataclass(frozen=True)
class ServerAdam:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class FederatedConfig:
    rounds: int
    client_lr: float
    local_steps: int
    batch_size: int
    dropout: DropoutConfig
    seed: int
    clients_per_round: int = 128
    server_optimizer: ServerSgd | ServerAdam = ServerAdam()
    aggregation: str = "covered-mean"

    def __post_init__(self) -> None:
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.clients_per_round < 1:
            raise ConfigError("clients_per_round must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("local_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.client_lr <= 0.0:
            raise ConfigError("client_lr must be > 0")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
        seeds.check_seed(self.seed)


@dataclass
class RoundRecord:
    round_index: int
    eval_error: float
    eval_loss: float
    train_loss: float
    client_model_param_count: int
    bytes_down: int
    bytes_up: int


@dataclass
class ClientUpdateResult:
    client_index: int  # position k within the round
    delta: ModelParams  # initial minus final sub-model weights
    train_loss: float


@dataclass
class TrainState:
    params: ModelParams
    opt_state: AdamState | None = None


@dataclass
class TrainResult:
    params: ModelParams
    records: list[RoundRecord] = field(default_factory=list)
    init_params: ModelParams | None = None


def resolve_threads() -> int:
    """Intra-round worker count: FEDDROP_THREADS, else machine parallelism."""
    raw = os.environ.get("FEDDROP_THREADS", "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"FEDDROP_THREADS must be an integer, got {raw!r}") from exc
        if value < 1:
            raise ConfigError("FEDDROP_THREADS must be >= 1")
        return value
    return os.cpu_count() or 1


def round_contribution(
    features: np.ndarray, labels: np.ndarray, uniform_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Subsample a client with more data than the uniform per-round size."""
    n = labels.shape[0]
    if n <= uniform_size:
        return features, labels
    idx = np.sort(rng.choice(n, size=uniform_size, replace=False))
    return features[idx], labels[idx]


def client_update(
    client_index: int,
    sub_params: ModelParams,
    features: np.ndarray,
    labels: np.ndarray,
    client_lr: float,
    local_steps: int,
    batch_size: int,
    rng: np.random.Generator,
) -> ClientUpdateResult:
    """Local minibatch SGD on the shrunk model; delta = initial - final.

    When batch_size covers the whole contribution, every step uses the full
    set (so one step at lr equals lr times the analytic gradient).
    """
    n = labels.shape[0]
    if n == 0:
        raise SkipClient(f"client at position {client_index} has no data")
    w = sub_params
    losses = []
    for _ in range(local_steps):
        if batch_size >= n:
            batch_x, batch_y = features, labels
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
            batch_x, batch_y = features[idx], labels[idx]
        loss, grads = loss_and_grads(w, batch_x, batch_y)
        losses.append(loss)
        w = sgd_step(w, grads, client_lr)
    delta = tree_map(lambda a, b: a - b, sub_params, w)
    return ClientUpdateResult(
        client_index=client_index, delta=delta, train_loss=float(np.mean(losses))
    )


def aggregate(
    results: Sequence[ClientUpdateResult],
    mappings: MappingSet,
    arch: Architecture,
    mode: str = "covered-mean",
) -> ModelParams:
    """Combine expanded client deltas into a full-shape pseudo-gradient.

    covered-mean: per-coordinate mean over the clients whose mask covers
    the coordinate (uncovered coordinates stay exactly zero).
    participant-mean: divide by the number of participating clients.
    Summation runs in ascending client-index order.
    """
    if not results:
        raise RoundError("cannot aggregate an empty result set")
    if mode not in AGGREGATION_MODES:
        raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
    template = None
    total = None
    counts = None
    for result in sorted(results, key=lambda r: r.client_index):
        delta_full, mask = expand(result.delta, mappings.mappings[result.client_index], arch)
        if total is None:
            total, counts = delta_full, mask
            template = delta_full
        else:
            total = tree_map(lambda t, d: t + d, total, delta_full)
            counts = tree_map(lambda c, m: c + m, counts, mask)
    assert total is not None and counts is not None and template is not None
    if mode == "participant-mean":
        k = float(len(results))
        return tree_map(lambda t: t / k, total)
    return tree_map(lambda t, c: t / np.maximum(c, 1.0), total, counts)


def server_update(
    params: ModelParams,
    pseudo_grad: ModelParams,
    optimizer: ServerSgd | ServerAdam,
    opt_state: AdamState | None = None,
) -> tuple[ModelParams, AdamState | None]:
    """Apply the server optimizer to the aggregated pseudo-gradient.

    SGD with lr=1 recovers FedAvg exactly under full coverage; Adam runs
    the standard bias-corrected recurrence with persistent state.
    """
    if params.shapes() != pseudo_grad.shapes():
        raise ShapeError("pseudo-gradient is not congruent with the server model")
    if isinstance(optimizer, ServerSgd):
        return sgd_step(params, pseudo_grad, optimizer.lr), opt_state
    if opt_state is None:
        opt_state = init_adam(
            params,
            lr=optimizer.lr,
            beta1=optimizer.beta1,
            beta2=optimizer.beta2,
            eps=optimizer.eps,
        )
    return adam_step(opt_state, params, pseudo_grad)


def _run_client(
    position: int,
    client_pos: int,
    params: ModelParams,
    mappings: MappingSet,
    config: FederatedConfig,
    dataset: FederatedDataset,
    uniform_size: int,
    round_index: int,
) -> ClientUpdateResult | None:
    client = dataset.clients[client_pos]
    rng = seeds.substream(config.seed, seeds.CLIENT_LOCAL, round_index, client.client_id)
    features, labels = round_contribution(client.features, client.labels, uniform_size, rng)
    sub = shrink(params, mappings.mappings[position])
    try:
        return client_update(
            position,
            sub,
            features,
            labels,
            config.client_lr,
            config.local_steps,
            config.batch_size,
            rng,
        )
    except SkipClient:
        return None


def run_round(
    state: TrainState,
    config: FederatedConfig,
    dataset: FederatedDataset,
    round_index: int,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[TrainState, RoundRecord]:
    """One full round; evaluates the updated model on the dataset eval pool."""
    num_clients = len(dataset.clients)
    k = config.clients_per_round
    if num_clients < k:
        raise ConfigError(f"dataset has {num_clients} clients, need >= {k}")
    arch = Architecture.from_params(state.params)
    sampler = seeds.substream(config.seed, seeds.CLIENT_SAMPLING, round_index)
    sampled = sorted(int(c) for c in sampler.choice(num_clients, size=k, replace=False))
    mappings = generate_mappings(config.dropout, k, round_index, arch)
    uniform_size = dataset.min_client_size()

    jobs = list(enumerate(sampled))
    if executor is not None:
        raw = list(
            executor.map(
                lambda job: _run_client(
                    job[0], job[1], state.params, mappings, config, dataset, uniform_size, round_index
                ),
                jobs,
            )
        )
    else:
        raw = [
            _run_client(pos, cpos, state.params, mappings, config, dataset, uniform_size, round_index)
            for pos, cpos in jobs
        ]
    results = [r for r in raw if r is not None]
    if not results:
        raise RoundError(f"round {round_index}: every sampled client was skipped")

    pseudo_grad = aggregate(results, mappings, arch, mode=config.aggregation)
    new_params, new_opt = server_update(
        state.params, pseudo_grad, config.server_optimizer, state.opt_state
    )

    eval_set = dataset.eval_pool()
    eval_loss, eval_error = evaluate(new_params, eval_set.features, eval_set.labels)
    sub_count = shrunk_param_count(arch, config.dropout.rates)
    bytes_one_way = BYTES_PER_PARAM * sub_count * len(results)
    record = RoundRecord(
        round_index=round_index,
        eval_error=eval_error,
        eval_loss=eval_loss,
        train_loss=float(np.mean([r.train_loss for r in results])),
        client_model_param_count=sub_count,
        bytes_down=bytes_one_way,
        bytes_up=bytes_one_way,
    )
    return TrainState(params=new_params, opt_state=new_opt), record


def train(
    arch: Architecture,
    config: FederatedConfig,
    dataset: FederatedDataset,
    initial_params: ModelParams | None = None,
) -> TrainResult:
    """Run config.rounds rounds from a seeded (or provided) initialization.

    The initialization snapshot is retained in the result so ambient-layer
    ablations can reset blocks to their initial values later.
    """
    init = initial_params if initial_params is not None else init_params(arch, config.seed)
    state = TrainState(params=init)
    records: list[RoundRecord] = []
    threads = resolve_threads()
    if threads > 1 and config.rounds > 0:
        with ThreadPoolExecutor(max_workers=min(threads, config.clients_per_round)) as pool:
            for round_index in range(config.rounds):
                state, record = run_round(state, config, dataset, round_index, executor=pool)
                records.append(record)
    else:
        for round_index in range(config.rounds):
            state, record = run_round(state, config, dataset, round_index)
            records.append(record)
    return TrainResult(params=state.params, records=records, init_params=init)


@dataclass(frozen=True)
class CentralizedConfig:
    """Plain minibatch SGD on pooled data (the pre-adaptation baseline)."""

    steps: int
    batch_size: int
    lr: float
    seed: int

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0.0:
            raise ConfigError("lr must be > 0")
        seeds.check_seed(self.seed)


def centralized_train(
    arch: Architecture,
    config: CentralizedConfig,
    features: np.ndarray,
    labels: np.ndarray,
    initial_params: ModelParams | None = None,
) -> ModelParams:
    params = initial_params if initial_params is not None else init_params(arch, config.seed)
    rng = seeds.substream(config.seed, seeds.CENTRAL)
    n = labels.shape[0]
    for _ in range(config.steps):
        if config.batch_size >= n:
            batch_x, batch_y = features, labels
        else:
            idx = rng.choice(n, size=config.batch_size, replace=False)
            batch_x, batch_y = features[idx], labels[idx]
        _, grads = loss_and_grads(params, batch_x, batch_y)
        params = sgd_step(params, grads, config.lr)
    return params


@dataclass
class AdaptResult:
    baseline_params: ModelParams
    adapted_params: ModelParams
    records: list[RoundRecord]
    baseline_seen_error: float
    baseline_holdout_error: float
    adapted_holdout_error: float


def domain_adapt(
    arch: Architecture,
    pretrain_config: CentralizedConfig,
    adapt_config: FederatedConfig,
    dataset: FederatedDataset,
    holdout_domain: int,
) -> AdaptResult:
    """Centralized pretraining without the holdout domain, then federated
    fine-tuning on holdout-domain clients, evaluated on the holdout eval set."""
    split = split_holdout(dataset, holdout_domain)
    pool_clients = sorted(split.pretrain.clients, key=lambda c: c.client_id)
    pooled_x = np.concatenate([c.features for c in pool_clients])
    pooled_y = np.concatenate([c.labels for c in pool_clients])
    baseline = centralized_train(arch, pretrain_config, pooled_x, pooled_y)

    seen = split.pretrain.eval_pool()
    _, baseline_seen_error = evaluate(baseline, seen.features, seen.labels)
    _, baseline_holdout_error = evaluate(
        baseline, split.holdout_eval.features, split.holdout_eval.labels
    )

    result = train(arch, adapt_config, split.adapt, initial_params=baseline)
    _, adapted_holdout_error = evaluate(
        result.params, split.holdout_eval.features, split.holdout_eval.labels
    )
    return AdaptResult(
        baseline_params=baseline,
        adapted_params=result.params,
        records=result.records,
        baseline_seen_error=baseline_seen_error,
        baseline_holdout_error=baseline_holdout_error,
        adapted_holdout_error=adapted_holdout_error,
    )
