"""The frozen standard synthetic task.

Every calibrated acceptance threshold in the test suite is anchored to
this generator config, architecture, and training recipe. Changing any
value here invalidates those calibrations; treat the constants as frozen.
"""

from __future__ import annotations

from .data import GeneratorConfig
from .dropout import DropoutConfig
from .nn import Architecture
from .simulation import FederatedConfig, ServerAdam

STANDARD_DATASET_SEED = 2024

STANDARD_GENERATOR = GeneratorConfig(
    num_domains=3,
    num_clients=256,
    examples_per_client=40,
    input_dim=16,
    num_classes=8,
    class_skew=0.5,
    domain_shift=6.0,
    seed=STANDARD_DATASET_SEED,
    eval_examples_per_domain=200,
)

STANDARD_ARCH = Architecture(
    input_dim=16,
    model_dim=16,
    hidden_dim=32,
    num_blocks=2,
    num_classes=8,
)


def standard_federated(
    rate: float = 0.0,
    scheme: str = "PCPR",
    rounds: int = 30,
    clients_per_round: int = 16,
    seed: int = 0,
    rates: tuple[float, ...] | None = None,
) -> FederatedConfig:
    """The calibrated desk-scale training recipe for the standard task."""
    dropout = (
        DropoutConfig(rates=rates, scheme=scheme, seed=seed)
        if rates is not None
        else DropoutConfig.uniform(rate, STANDARD_ARCH.num_blocks, scheme=scheme, seed=seed)
    )
    return FederatedConfig(
        rounds=rounds,
        client_lr=0.05,
        local_steps=4,
        batch_size=16,
        dropout=dropout,
        seed=seed,
        clients_per_round=clients_per_round,
        server_optimizer=ServerAdam(lr=1e-2),
    )
