"""Seeded synthetic federated datasets: non-IID, multi-domain classification.

Features are class-conditional Gaussian mixtures (two modes per class, so
the task is not linearly separable and the feed-forward blocks carry real
signal). Each domain adds a fixed random offset of configurable magnitude
to every feature vector; each client draws its class distribution from a
Dirichlet, which dials the non-IID skew. Everything derives from the
config seed through purpose-tagged substreams, so generation is a pure
function of the config and parallelizable per client.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import seeds
from .errors import ConfigError, DataError

MODES_PER_CLASS = 2
CLASS_MEAN_SCALE = 2.0
FEATURE_NOISE = 1.0

_HEADER_PREFIX = "#feddrop-dataset v1 "


@dataclass(frozen=True)
class GeneratorConfig:
    num_domains: int
    num_clients: int
    examples_per_client: int
    input_dim: int
    num_classes: int
    class_skew: float  # Dirichlet concentration; smaller = more skewed clients
    domain_shift: float
    seed: int
    eval_examples_per_domain: int = 200

    def __post_init__(self) -> None:
        if self.num_domains < 1:
            raise ConfigError("num_domains must be >= 1")
        if self.num_clients < self.num_domains:
            raise ConfigError("need at least one client per domain")
        for name in ("examples_per_client", "input_dim", "num_classes", "eval_examples_per_domain"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.class_skew <= 0.0:
            raise ConfigError("class_skew (Dirichlet concentration) must be > 0")
        if self.domain_shift < 0.0:
            raise ConfigError("domain_shift must be >= 0")
        seeds.check_seed(self.seed)


@dataclass
class LabeledSet:
    features: np.ndarray  # (n, input_dim) float64
    labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class ClientData:
    client_id: int
    domain: int
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass
class FederatedDataset:
    clients: list[ClientData]
    eval_sets: dict[int, LabeledSet]  # domain -> held-out eval examples
    config: GeneratorConfig | None = None

    def domains(self) -> list[int]:
        return sorted({c.domain for c in self.clients})

    def eval_pool(self) -> LabeledSet:
        """All eval examples, concatenated in ascending domain order."""
        keys = sorted(self.eval_sets)
        return LabeledSet(
            features=np.concatenate([self.eval_sets[d].features for d in keys]),
            labels=np.concatenate([self.eval_sets[d].labels for d in keys]),
        )

    def min_client_size(self) -> int:
        return min(len(c) for c in self.clients)

    def validate(self) -> None:
        for client in self.clients:
            if len(client) == 0:
                raise DataError(f"client {client.client_id} is empty")
        for domain in self.domains():
            if domain not in self.eval_sets:
                raise DataError(f"domain {domain} has clients but no eval set")
        for domain, eval_set in self.eval_sets.items():
            if len(eval_set) == 0:
                raise DataError(f"domain {domain} eval set is empty")


@dataclass
class HoldoutSplit:
    pretrain: FederatedDataset
    adapt: FederatedDataset
    holdout_eval: LabeledSet


class _Mixture:
    """Shared class/domain structure drawn once per dataset seed."""

    def __init__(self, config: GeneratorConfig):
        rng = seeds.substream(config.seed, seeds.DATA_SHARED)
        self.mode_means = rng.normal(
            0.0,
            CLASS_MEAN_SCALE,
            size=(config.num_classes, MODES_PER_CLASS, config.input_dim),
        )
        offsets = np.zeros((config.num_domains, config.input_dim))
        if config.domain_shift > 0.0:
            for d in range(config.num_domains):
                v = rng.normal(size=config.input_dim)
                offsets[d] = config.domain_shift * v / np.linalg.norm(v)
        self.domain_offsets = offsets

    def sample(
        self, labels: np.ndarray, domain: int, rng: np.random.Generator
    ) -> np.ndarray:
        modes = rng.integers(MODES_PER_CLASS, size=labels.shape[0])
        means = self.mode_means[labels, modes]
        noise = rng.normal(0.0, FEATURE_NOISE, size=means.shape)
        return means + self.domain_offsets[domain] + noise


def generate(config: GeneratorConfig) -> FederatedDataset:
    """Deterministic dataset for the config; see module docstring."""
    mixture = _Mixture(config)
    clients: list[ClientData] = []
    for cid in range(config.num_clients):
        domain = cid % config.num_domains
        rng = seeds.substream(config.seed, seeds.DATA_CLIENT, cid)
        class_probs = rng.dirichlet(np.full(config.num_classes, config.class_skew))
        labels = rng.choice(config.num_classes, size=config.examples_per_client, p=class_probs)
        labels = labels.astype(np.int64)
        features = mixture.sample(labels, domain, rng)
        clients.append(ClientData(client_id=cid, domain=domain, features=features, labels=labels))

    eval_sets: dict[int, LabeledSet] = {}
    for domain in range(config.num_domains):
        rng = seeds.substream(config.seed, seeds.DATA_EVAL, domain)
        n = config.eval_examples_per_domain
        labels = (np.arange(n) % config.num_classes).astype(np.int64)  # balanced
        features = mixture.sample(labels, domain, rng)
        eval_sets[domain] = LabeledSet(features=features, labels=labels)

    dataset = FederatedDataset(clients=clients, eval_sets=eval_sets, config=config)
    dataset.validate()
    return dataset


def split_holdout(dataset: FederatedDataset, holdout_domain: int) -> HoldoutSplit:
    """Partition into pretrain clients (other domains) and adapt clients (holdout).

    The partitions are disjoint and exhaustive over clients; the holdout
    eval set stays disjoint from all client data by dataset construction.
    """
    if holdout_domain not in dataset.domains():
        raise ConfigError(f"holdout domain {holdout_domain} not present in dataset")
    if len(dataset.domains()) < 2:
        raise ConfigError("holdout split needs at least 2 domains")
    pretrain_clients = [c for c in dataset.clients if c.domain != holdout_domain]
    adapt_clients = [c for c in dataset.clients if c.domain == holdout_domain]
    pretrain = FederatedDataset(
        clients=pretrain_clients,
        eval_sets={d: s for d, s in dataset.eval_sets.items() if d != holdout_domain},
        config=dataset.config,
    )
    adapt = FederatedDataset(
        clients=adapt_clients,
        eval_sets={holdout_domain: dataset.eval_sets[holdout_domain]},
        config=dataset.config,
    )
    return HoldoutSplit(pretrain=pretrain, adapt=adapt, holdout_eval=dataset.eval_sets[holdout_domain])


def _format_row(domain: int, client: int, label: int, features: np.ndarray) -> str:
    values = ",".join(repr(float(x)) for x in features)
    return f"{domain},{client},{label},{values}"


def save_dataset(dataset: FederatedDataset, path: str | Path) -> None:
    """Write the newline-delimited record format.

    Line 1 is a header echoing the generator config as JSON. Each record
    line is ``domain,client,label,f0,f1,...``; eval examples use client id
    -1 and are grouped by domain after the client records. Floats are
    written with ``repr`` so a load/save round trip is byte-identical.
    """
    lines = [_HEADER_PREFIX + json.dumps(asdict(dataset.config), sort_keys=True)]
    for client in sorted(dataset.clients, key=lambda c: c.client_id):
        for row in range(len(client)):
            lines.append(
                _format_row(client.domain, client.client_id, int(client.labels[row]), client.features[row])
            )
    for domain in sorted(dataset.eval_sets):
        eval_set = dataset.eval_sets[domain]
        for row in range(len(eval_set)):
            lines.append(_format_row(domain, -1, int(eval_set.labels[row]), eval_set.features[row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> FederatedDataset:
    """Inverse of save_dataset; validates the dataset invariants."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_HEADER_PREFIX):
        raise DataError(f"{path}: not a feddrop dataset file")
    config = GeneratorConfig(**json.loads(lines[0][len(_HEADER_PREFIX):]))

    client_rows: dict[int, tuple[int, list[np.ndarray], list[int]]] = {}
    eval_rows: dict[int, tuple[list[np.ndarray], list[int]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 3 + config.input_dim:
            raise DataError(f"{path}:{lineno}: expected {3 + config.input_dim} fields")
        domain, client, label = int(parts[0]), int(parts[1]), int(parts[2])
        if not 0 <= label < config.num_classes:
            raise DataError(f"{path}:{lineno}: label {label} out of range")
        features = np.array([float(x) for x in parts[3:]], dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise DataError(f"{path}:{lineno}: non-finite feature")
        if client < 0:
            eval_rows.setdefault(domain, ([], []))
            eval_rows[domain][0].append(features)
            eval_rows[domain][1].append(label)
        else:
            entry = client_rows.setdefault(client, (domain, [], []))
            if entry[0] != domain:
                raise DataError(f"{path}:{lineno}: client {client} spans domains")
            entry[1].append(features)
            entry[2].append(label)

    clients = [
        ClientData(
            client_id=cid,
            domain=domain,
            features=np.vstack(feats),
            labels=np.array(labels, dtype=np.int64),
        )
        for cid, (domain, feats, labels) in sorted(client_rows.items())
    ]
    eval_sets = {
        domain: LabeledSet(features=np.vstack(feats), labels=np.array(labels, dtype=np.int64))
        for domain, (feats, labels) in sorted(eval_rows.items())
    }
    dataset = FederatedDataset(clients=clients, eval_sets=eval_sets, config=config)
    dataset.validate()
    return dataset
