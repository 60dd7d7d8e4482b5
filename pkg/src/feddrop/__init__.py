"""Desk-scale federated learning simulator with structural federated dropout.

Clients train structurally shrunk sub-models (whole hidden units removed
from the feed-forward blocks) while the server maintains and updates the
full-size model. See README.md for the experiment drivers and file
formats.
"""

from .analysis import AmbientRanking, SubModelReport, ambient_rank, assign_rates, sample_submodels
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    ClientData,
    FederatedDataset,
    GeneratorConfig,
    HoldoutSplit,
    LabeledSet,
    generate,
    load_dataset,
    save_dataset,
    split_holdout,
)
from .dropout import (
    DropoutConfig,
    DropoutMapping,
    MappingSet,
    expand,
    generate_mappings,
    kept_count,
    make_table3_arch,
    shrink,
    shrunk_param_count,
    size_reduction,
)
from .errors import ConfigError, DataError, MappingError, RoundError, ShapeError
from .nn import (
    AdamState,
    Architecture,
    FFBlock,
    Gradients,
    ModelParams,
    adam_step,
    evaluate,
    forward,
    init_adam,
    init_params,
    loss_and_grads,
    param_count,
    sgd_step,
    tree_map,
    tree_zeros_like,
)
from .simulation import (
    AdaptResult,
    CentralizedConfig,
    ClientUpdateResult,
    FederatedConfig,
    RoundRecord,
    ServerAdam,
    ServerSgd,
    SkipClient,
    TrainResult,
    TrainState,
    aggregate,
    centralized_train,
    client_update,
    domain_adapt,
    run_round,
    server_update,
    train,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
