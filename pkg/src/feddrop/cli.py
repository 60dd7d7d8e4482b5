"""Experiment front-end.

Subcommands bind the library to config files and deterministic artifacts:

    feddrop generate-data --config cfg.json --out DIR   -> dataset.txt
    feddrop train         --config cfg.json --out DIR   -> metrics.csv, summary.json,
                                                           checkpoint.bin, figures/
    feddrop adapt         --config cfg.json --out DIR   -> same as train
    feddrop ablate        --config cfg.json --out DIR   -> ablation.json, figures/
    feddrop submodels     --config cfg.json --out DIR   -> submodels.json, figures/
    feddrop size-report   --config cfg.json --out DIR   -> size_report.json, figures/

Configs are strict JSON: unknown keys are errors. ``--seed N`` overrides
every ``seed`` field in the config. ``FEDDROP_THREADS`` caps intra-round
parallelism (default: machine parallelism). Reruns of the same config
produce byte-identical CSV/JSON.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import figures
from .analysis import ambient_rank, sample_submodels
from .checkpoint import load_checkpoint, save_checkpoint
from .data import FederatedDataset, GeneratorConfig, generate, load_dataset, save_dataset
from .dropout import DropoutConfig, ff_param_split, make_table3_arch, size_reduction
from .errors import ConfigError, DataError
from .nn import Architecture, param_count
from .simulation import (
    CentralizedConfig,
    FederatedConfig,
    RoundRecord,
    ServerAdam,
    ServerSgd,
    domain_adapt,
    train,
)

CSV_COLUMNS = ("round", "eval_error", "eval_loss", "train_loss", "client_params", "bytes_up", "bytes_down")

EXPERIMENTS = ("generate-data", "scratch", "adapt", "ablate", "submodels", "size-report")


# ---------------------------------------------------------------------------
# config parsing

def _check_keys(section: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    missing = sorted(required - set(section))
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _parse_architecture(section: dict) -> Architecture:
    _check_keys(section, _field_names(Architecture), _field_names(Architecture), "architecture")
    return Architecture(**section)


def _parse_generator(section: dict) -> GeneratorConfig:
    fields = dataclasses.fields(GeneratorConfig)
    required = {f.name for f in fields if f.default is dataclasses.MISSING}
    _check_keys(section, {f.name for f in fields}, required, "generator")
    return GeneratorConfig(**section)


def _parse_dropout(section: dict, num_blocks: int) -> DropoutConfig:
    _check_keys(section, {"rate", "rates", "scheme", "seed"}, set(), "dropout")
    if ("rate" in section) == ("rates" in section):
        raise ConfigError("dropout: give exactly one of 'rate' or 'rates'")
    if "rate" in section:
        rates = (float(section["rate"]),) * num_blocks
    else:
        rates = tuple(float(r) for r in section["rates"])
        if len(rates) != num_blocks:
            raise ConfigError(
                f"dropout: {len(rates)} rates for {num_blocks} blocks"
            )
    return DropoutConfig(
        rates=rates, scheme=section.get("scheme", "PCPR"), seed=section.get("seed", 0)
    )


def _parse_server_optimizer(section: dict) -> ServerSgd | ServerAdam:
    _check_keys(section, {"kind", "lr", "beta1", "beta2", "eps"}, {"kind"}, "server_optimizer")
    kind = section["kind"]
    rest = {k: v for k, v in section.items() if k != "kind"}
    if kind == "sgd":
        _check_keys(rest, {"lr"}, set(), "server_optimizer")
        return ServerSgd(**rest)
    if kind == "adam":
        return ServerAdam(**rest)
    raise ConfigError(f"server_optimizer.kind must be 'sgd' or 'adam', got {kind!r}")


def _parse_federated(section: dict, num_blocks: int) -> FederatedConfig:
    allowed = {
        "rounds", "client_lr", "local_steps", "batch_size", "clients_per_round",
        "seed", "aggregation", "server_optimizer", "dropout",
    }
    required = {"rounds", "client_lr", "local_steps", "batch_size", "seed", "dropout"}
    _check_keys(section, allowed, required, "federated")
    kwargs = dict(section)
    kwargs["dropout"] = _parse_dropout(section["dropout"], num_blocks)
    if "server_optimizer" in section:
        kwargs["server_optimizer"] = _parse_server_optimizer(section["server_optimizer"])
    return FederatedConfig(**kwargs)


def _parse_pretrain(section: dict) -> CentralizedConfig:
    names = _field_names(CentralizedConfig)
    _check_keys(section, names, names, "pretrain")
    return CentralizedConfig(**section)


@dataclass
class SubmodelSpec:
    n: int
    rate: float
    seed: int


@dataclass
class SizeReportSpec:
    ff_fraction: float
    rates: tuple[float, ...]
    total_params_target: int


@dataclass
class RunConfig:
    """One experiment: its kind plus exactly the sections that kind needs."""

    experiment: str
    out_dir: Path | None = None
    architecture: Architecture | None = None
    generator: GeneratorConfig | None = None
    dataset_path: Path | None = None
    federated: FederatedConfig | None = None
    pretrain: CentralizedConfig | None = None
    holdout_domain: int | None = None
    checkpoint: Path | None = None
    target_error: float | None = None
    eval_domain: int | None = None
    submodels: SubmodelSpec | None = None
    size_report: SizeReportSpec | None = None


_SECTIONS: dict[str, tuple[set[str], set[str]]] = {
    "generate-data": ({"generator"}, {"generator"}),
    "scratch": (
        {"architecture", "generator", "dataset", "federated", "target_error"},
        {"architecture", "federated"},
    ),
    "adapt": (
        {"architecture", "generator", "dataset", "federated", "pretrain",
         "holdout_domain", "target_error"},
        {"architecture", "federated", "pretrain", "holdout_domain"},
    ),
    "ablate": ({"checkpoint", "generator", "dataset", "eval_domain"}, {"checkpoint"}),
    "submodels": (
        {"checkpoint", "generator", "dataset", "eval_domain", "submodels"},
        {"checkpoint", "submodels"},
    ),
    "size-report": ({"size_report"}, {"size_report"}),
}


def _override_seeds(obj: Any, seed: int) -> Any:
    if isinstance(obj, dict):
        return {k: (seed if k == "seed" else _override_seeds(v, seed)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_override_seeds(v, seed) for v in obj]
    return obj


def load_run_config(path: str | Path, experiment: str, seed_override: int | None = None) -> RunConfig:
    """Parse and validate a strict-JSON run config for one subcommand."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if seed_override is not None:
        raw = _override_seeds(raw, seed_override)

    declared = raw.get("experiment")
    if declared != experiment:
        raise ConfigError(
            f"config declares experiment {declared!r} but the subcommand expects {experiment!r}"
        )
    allowed, required = _SECTIONS[experiment]
    _check_keys(raw, allowed | {"experiment", "out_dir"}, required, path if isinstance(path, str) else str(path))

    cfg = RunConfig(experiment=experiment)
    if "out_dir" in raw:
        cfg.out_dir = Path(raw["out_dir"])
    if "architecture" in raw:
        cfg.architecture = _parse_architecture(raw["architecture"])
    if "generator" in raw:
        cfg.generator = _parse_generator(raw["generator"])
    if "dataset" in raw:
        cfg.dataset_path = Path(raw["dataset"])
    if "federated" in raw:
        if cfg.architecture is None:
            raise ConfigError("federated section requires an architecture section")
        cfg.federated = _parse_federated(raw["federated"], cfg.architecture.num_blocks)
    if "pretrain" in raw:
        cfg.pretrain = _parse_pretrain(raw["pretrain"])
    if "holdout_domain" in raw:
        cfg.holdout_domain = int(raw["holdout_domain"])
    if "checkpoint" in raw:
        cfg.checkpoint = Path(raw["checkpoint"])
    if "target_error" in raw and raw["target_error"] is not None:
        cfg.target_error = float(raw["target_error"])
    if "eval_domain" in raw and raw["eval_domain"] is not None:
        cfg.eval_domain = int(raw["eval_domain"])
    if "submodels" in raw:
        _check_keys(raw["submodels"], {"n", "rate", "seed"}, {"n", "rate"}, "submodels")
        cfg.submodels = SubmodelSpec(
            n=int(raw["submodels"]["n"]),
            rate=float(raw["submodels"]["rate"]),
            seed=int(raw["submodels"].get("seed", 0)),
        )
    if "size_report" in raw:
        _check_keys(
            raw["size_report"],
            {"ff_fraction", "rates", "total_params_target"},
            {"ff_fraction", "rates"},
            "size_report",
        )
        cfg.size_report = SizeReportSpec(
            ff_fraction=float(raw["size_report"]["ff_fraction"]),
            rates=tuple(float(r) for r in raw["size_report"]["rates"]),
            total_params_target=int(raw["size_report"].get("total_params_target", 60000)),
        )

    if experiment in ("scratch", "adapt", "ablate", "submodels"):
        if (cfg.generator is None) == (cfg.dataset_path is None):
            raise ConfigError(f"{experiment}: give exactly one of 'generator' or 'dataset'")
    return cfg


# ---------------------------------------------------------------------------
# shared output helpers

def _resolve_out(cfg: RunConfig, out_flag: str | None) -> Path:
    out = Path(out_flag) if out_flag else cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: set 'out_dir' in the config or pass --out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg: RunConfig) -> FederatedDataset:
    if cfg.dataset_path is not None:
        if not cfg.dataset_path.exists():
            raise ConfigError(f"dataset file not found: {cfg.dataset_path}")
        return load_dataset(cfg.dataset_path)
    assert cfg.generator is not None
    return generate(cfg.generator)


def _check_arch_matches(arch: Architecture, dataset: FederatedDataset) -> None:
    sample = dataset.clients[0].features
    if sample.shape[1] != arch.input_dim:
        raise ConfigError(
            f"architecture input_dim {arch.input_dim} != dataset feature dim {sample.shape[1]}"
        )
    if dataset.config is not None and dataset.config.num_classes != arch.num_classes:
        raise ConfigError(
            f"architecture num_classes {arch.num_classes} != dataset classes "
            f"{dataset.config.num_classes}"
        )


def write_metrics_csv(path: Path, records: list[RoundRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.round_index,
                    repr(r.eval_error),
                    repr(r.eval_loss),
                    repr(r.train_loss),
                    r.client_model_param_count,
                    r.bytes_up,
                    r.bytes_down,
                ]
            )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _rounds_to_target(records: list[RoundRecord], target: float | None) -> int | None:
    if target is None:
        return None
    for r in records:
        if r.eval_error <= target:
            return r.round_index + 1
    return None


def _dropout_echo(dropout: DropoutConfig) -> dict:
    return {"rates": list(dropout.rates), "scheme": dropout.scheme, "seed": dropout.seed}


def _train_summary(cfg: RunConfig, records: list[RoundRecord]) -> dict:
    assert cfg.architecture is not None and cfg.federated is not None
    errors = [r.eval_error for r in records]
    return {
        "experiment": cfg.experiment,
        "rounds": len(records),
        "final_error": errors[-1] if errors else None,
        "best_error": min(errors) if errors else None,
        "target_error": cfg.target_error,
        "rounds_to_target": _rounds_to_target(records, cfg.target_error),
        "dropout": _dropout_echo(cfg.federated.dropout),
        "size_reduction": size_reduction(cfg.architecture, cfg.federated.dropout.rates),
        "full_model_param_count": param_count(cfg.architecture),
        "client_model_param_count": records[-1].client_model_param_count if records else None,
    }


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate_data(cfg: RunConfig, out: Path) -> None:
    assert cfg.generator is not None
    dataset = generate(cfg.generator)
    path = out / "dataset.txt"
    save_dataset(dataset, path)
    total = sum(len(c) for c in dataset.clients)
    print(f"wrote {path}")
    print(
        f"clients={len(dataset.clients)} examples={total} "
        f"domains={len(dataset.eval_sets)} "
        f"eval={sum(len(s) for s in dataset.eval_sets.values())}"
    )


def cmd_train(cfg: RunConfig, out: Path) -> None:
    assert cfg.architecture is not None and cfg.federated is not None
    dataset = _load_data(cfg)
    _check_arch_matches(cfg.architecture, dataset)
    result = train(cfg.architecture, cfg.federated, dataset)
    write_metrics_csv(out / "metrics.csv", result.records)
    _write_json(out / "summary.json", _train_summary(cfg, result.records))
    save_checkpoint(out / "checkpoint.bin", result.params, result.init_params)
    figures.plot_training_curves(result.records, out / "figures" / "training.png")
    final = result.records[-1].eval_error if result.records else float("nan")
    print(f"trained {len(result.records)} rounds, final eval error {final:.4f}")
    print(f"wrote {out / 'metrics.csv'}, {out / 'summary.json'}, {out / 'checkpoint.bin'}")


def cmd_adapt(cfg: RunConfig, out: Path) -> None:
    assert cfg.architecture is not None and cfg.federated is not None
    assert cfg.pretrain is not None and cfg.holdout_domain is not None
    dataset = _load_data(cfg)
    _check_arch_matches(cfg.architecture, dataset)
    result = domain_adapt(
        cfg.architecture, cfg.pretrain, cfg.federated, dataset, cfg.holdout_domain
    )
    write_metrics_csv(out / "metrics.csv", result.records)
    summary = _train_summary(cfg, result.records)
    summary.update(
        {
            "holdout_domain": cfg.holdout_domain,
            "baseline_seen_error": result.baseline_seen_error,
            "baseline_holdout_error": result.baseline_holdout_error,
            "adapted_holdout_error": result.adapted_holdout_error,
        }
    )
    _write_json(out / "summary.json", summary)
    save_checkpoint(out / "checkpoint.bin", result.adapted_params, result.baseline_params)
    figures.plot_training_curves(result.records, out / "figures" / "training.png")
    print(
        f"holdout error: baseline {result.baseline_holdout_error:.4f} -> "
        f"adapted {result.adapted_holdout_error:.4f}"
    )
    print(f"wrote {out / 'metrics.csv'}, {out / 'summary.json'}, {out / 'checkpoint.bin'}")


def _eval_set_for(cfg: RunConfig, dataset: FederatedDataset):
    if cfg.eval_domain is not None:
        if cfg.eval_domain not in dataset.eval_sets:
            raise ConfigError(f"eval_domain {cfg.eval_domain} has no eval set")
        return dataset.eval_sets[cfg.eval_domain]
    return dataset.eval_pool()


def _load_required_checkpoint(cfg: RunConfig):
    assert cfg.checkpoint is not None
    if not cfg.checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {cfg.checkpoint}")
    return load_checkpoint(cfg.checkpoint)


def cmd_ablate(cfg: RunConfig, out: Path) -> None:
    trained, init = _load_required_checkpoint(cfg)
    dataset = _load_data(cfg)
    eval_set = _eval_set_for(cfg, dataset)
    ranking = ambient_rank(trained, init, eval_set)
    _write_json(
        out / "ablation.json",
        {
            "experiment": cfg.experiment,
            "order_most_ambient_first": list(ranking.order),
            "degradations": list(ranking.degradations),
            "trained_error": ranking.trained_error,
            "eval_domain": cfg.eval_domain,
        },
    )
    figures.plot_ablation(ranking, out / "figures" / "ablation.png")
    print(f"ambient order (most ambient first): {list(ranking.order)}")
    print(f"wrote {out / 'ablation.json'}")


def cmd_submodels(cfg: RunConfig, out: Path) -> None:
    assert cfg.submodels is not None
    trained, _ = _load_required_checkpoint(cfg)
    dataset = _load_data(cfg)
    eval_set = _eval_set_for(cfg, dataset)
    spec = cfg.submodels
    report = sample_submodels(trained, spec.rate, spec.n, spec.seed, eval_set)
    _write_json(
        out / "submodels.json",
        {
            "experiment": cfg.experiment,
            "n": report.n,
            "rate": report.rate,
            "seed": report.seed,
            "errors": list(report.errors),
            "mean_error": report.mean_error,
            "std_error": report.std_error,
            "eval_domain": cfg.eval_domain,
        },
    )
    figures.plot_submodel_errors(report, out / "figures" / "submodels.png")
    print(
        f"{report.n} sub-models at rate {report.rate}: "
        f"mean error {report.mean_error:.4f}, std {report.std_error:.4f}"
    )
    print(f"wrote {out / 'submodels.json'}")


def cmd_size_report(cfg: RunConfig, out: Path) -> None:
    assert cfg.size_report is not None
    spec = cfg.size_report
    arch = make_table3_arch(spec.ff_fraction, spec.total_params_target)
    full = param_count(arch)
    ladder = []
    for rate in spec.rates:
        rates = (rate,) * arch.num_blocks
        reduction = size_reduction(arch, rates)
        ladder.append(
            {
                "rate": rate,
                "size_reduction": reduction,
                "client_model_param_count": round(full * (1.0 - reduction)),
            }
        )
    ff, exempt = ff_param_split(arch)
    _write_json(
        out / "size_report.json",
        {
            "experiment": cfg.experiment,
            "ff_fraction_target": spec.ff_fraction,
            "ff_fraction_actual": ff / full,
            "architecture": dataclasses.asdict(arch),
            "full_model_param_count": full,
            "ff_param_count": ff,
            "exempt_param_count": exempt,
            "ladder": ladder,
        },
    )
    figures.plot_size_ladder(
        [row["rate"] for row in ladder], [row["size_reduction"] for row in ladder],
        out / "figures" / "size_report.png",
    )
    for row in ladder:
        print(f"rate {row['rate']:.2f} -> size reduction {100 * row['size_reduction']:.2f}%")
    print(f"wrote {out / 'size_report.json'}")


_HANDLERS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "ablate": cmd_ablate,
    "submodels": cmd_submodels,
    "size-report": cmd_size_report,
}

_KIND_FOR_COMMAND = {
    "generate-data": "generate-data",
    "train": "scratch",
    "adapt": "adapt",
    "ablate": "ablate",
    "submodels": "submodels",
    "size-report": "size-report",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feddrop",
        description="Desk-scale federated learning simulator with structural dropout.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, _KIND_FOR_COMMAND[args.command], args.seed)
        out = _resolve_out(cfg, args.out)
        _HANDLERS[args.command](cfg, out)
    except (ConfigError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
