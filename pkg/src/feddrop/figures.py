"""Figure rendering for the CLI report path.

Core library modules never import matplotlib; the CSV/JSON files remain
the machine-readable interface and these renderers draw alongside them.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import AmbientRanking, SubModelReport
from .simulation import RoundRecord


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def plot_training_curves(records: Sequence[RoundRecord], path: str | Path) -> None:
    rounds = [r.round_index for r in records]
    fig, (ax_err, ax_loss) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_err.plot(rounds, [r.eval_error for r in records], marker=".", color="tab:blue")
    ax_err.set_xlabel("round")
    ax_err.set_ylabel("eval error")
    ax_err.set_ylim(bottom=0.0)
    ax_loss.plot(rounds, [r.eval_loss for r in records], label="eval loss", color="tab:orange")
    ax_loss.plot(rounds, [r.train_loss for r in records], label="train loss", color="tab:green")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_ablation(ranking: AmbientRanking, path: str | Path) -> None:
    blocks = range(len(ranking.degradations))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bars = ax.bar(blocks, ranking.degradations, color="tab:blue")
    most_ambient = ranking.order[0]
    bars[most_ambient].set_color("tab:orange")
    ax.set_xlabel("block")
    ax.set_ylabel("error increase when reset to init")
    ax.set_xticks(list(blocks))
    ax.set_title("ambient ranking (orange = most ambient)")
    _save(fig, path)


def plot_submodel_errors(report: SubModelReport, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(report.errors, bins=min(20, max(5, report.n // 3)), color="tab:blue", alpha=0.8)
    ax.axvline(report.mean_error, color="tab:red", linestyle="--",
               label=f"mean {report.mean_error:.3f} (std {report.std_error:.3f})")
    ax.set_xlabel("sub-model eval error")
    ax.set_ylabel("count")
    ax.set_title(f"{report.n} sub-models at rate {report.rate}")
    ax.legend()
    _save(fig, path)


def plot_size_ladder(rates: Sequence[float], reductions: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([r * 100 for r in rates], [r * 100 for r in reductions], marker="o", color="tab:blue")
    ax.set_xlabel("dropout rate (%)")
    ax.set_ylabel("client model size reduction (%)")
    ax.grid(True, alpha=0.3)
    _save(fig, path)
