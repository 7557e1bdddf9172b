"""Multi-seed ablation grids over one configuration axis.

Each grid cell is a full RunConfig differing from the base config only along
the ablated axis; cells are validated up front, trained per seed, and
aggregated into mean/sd tables keyed by cell name. Cells may run in parallel
worker processes; results are keyed by (cell, seed) so aggregation is
independent of completion order.
"""

from __future__ import annotations

import dataclasses
import multiprocessing
from dataclasses import dataclass

import numpy as np

from .config import LossConfig, RunConfig, SimilarityConfig
from .errors import ConfigError
from .training import train

AXES = ("loss", "similarity", "awareness", "views")

KEY_METRICS = ("r1_i2t", "r1_t2i", "r5_i2t", "r5_t2i", "probe_acc",
               "auc_all", "auc_d1", "auc_d2", "auc_d3", "loss")


@dataclass(frozen=True)
class AblationCell:
    name: str
    config: RunConfig


def loss_grid(base: RunConfig) -> list[AblationCell]:
    """The five loss configurations compared in the loss ablation."""
    def with_loss(name, **kw):
        return AblationCell(name, dataclasses.replace(base, loss=LossConfig(**kw)))

    return [
        with_loss("milnce", kind="milnce"),
        with_loss("supcon", kind="supcon"),
        with_loss("mpnce_plain", kind="mpnce", trivial=False, weights=False),
        with_loss("mpnce_trivial", kind="mpnce", trivial=True, weights=False),
        with_loss("mpnce_full", kind="mpnce", trivial=True, weights=True),
    ]


def similarity_grid(base: RunConfig) -> list[AblationCell]:
    """Similarity sharing x supervision: the three compared combinations."""
    def cell(name, mode, supervision):
        sim = dataclasses.replace(base.similarity, mode=mode)
        return AblationCell(
            name, dataclasses.replace(base, similarity=sim, supervision=supervision)
        )

    return [
        cell("shared_unified", "shared_offset", "unified"),
        cell("domain_separated", "domain", "separated"),
        cell("domain_unified", "domain", "unified"),
    ]


def awareness_grid(base: RunConfig) -> list[AblationCell]:
    """Where the augmentation embedding enters: head, nowhere, or encoder."""
    def cell(name, aug_input):
        enc = dataclasses.replace(base.encoder, aug_input=aug_input)
        return AblationCell(name, dataclasses.replace(base, encoder=enc))

    return [
        cell("aware_head", "head"),
        cell("agnostic", "none"),
        cell("aware_encoder", "encoder"),
    ]


def views_grid(base: RunConfig) -> list[AblationCell]:
    def cell(v, t):
        return AblationCell(
            f"v{v}t{t}", dataclasses.replace(base, image_views=v, text_views=t)
        )

    return [cell(1, 1), cell(2, 1), cell(2, 2), cell(3, 1)]


def build_grid(axis: str, base: RunConfig) -> list[AblationCell]:
    builders = {
        "loss": loss_grid,
        "similarity": similarity_grid,
        "awareness": awareness_grid,
        "views": views_grid,
    }
    if axis not in builders:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    return builders[axis](base)


@dataclass
class AblationResult:
    axis: str
    seeds: list[int]
    # cell name -> {seed -> final metrics dict}
    cells: dict

    def aggregate(self) -> dict:
        """cell -> metric -> (mean, sd) over seeds."""
        out = {}
        for name, by_seed in self.cells.items():
            vals = {}
            for metric in KEY_METRICS:
                xs = np.array([by_seed[s][metric] for s in self.seeds])
                vals[metric] = (float(xs.mean()), float(xs.std(ddof=1)) if len(xs) > 1 else 0.0)
            out[name] = vals
        return out

    def per_seed_metric(self, cell: str, metric: str) -> np.ndarray:
        return np.array([self.cells[cell][s][metric] for s in self.seeds])


def _run_cell(job) -> tuple[str, int, dict]:
    name, cfg = job
    result = train(cfg)
    return name, cfg.seed, dict(result.final.values)


def run_ablation(
    cells: list[AblationCell], seeds, workers: int = 0, axis: str = "custom"
) -> AblationResult:
    """Train every (cell, seed) combination and collect final-epoch metrics.

    Every cell config is validated before any training starts (constructing a
    RunConfig validates it; dataclasses.replace re-runs validation).
    """
    seeds = list(seeds)
    if not cells or not seeds:
        raise ConfigError("need at least one cell and one seed")
    jobs = [
        (cell.name, dataclasses.replace(cell.config, seed=seed))
        for cell in cells
        for seed in seeds
    ]
    if workers and workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(processes=workers) as pool:
            outcomes = pool.map(_run_cell, jobs)
    else:
        outcomes = [_run_cell(j) for j in jobs]
    table: dict = {cell.name: {} for cell in cells}
    for name, seed, final in outcomes:
        table[name][seed] = final
    return AblationResult(axis=axis, seeds=seeds, cells=table)
