"""Atomic, self-describing output files.

Every artifact is written via temp-file-plus-rename and starts with a
metadata block holding the resolved config and seed, so any file on disk can
be traced back to the exact invocation that produced it. CSV/TSV metadata
lines start with '#'; JSON artifacts embed the config under a "config" key.
"""

from __future__ import annotations

import json
import os
import tempfile

from .config import RunConfig, config_to_dict
from .training import METRIC_COLUMNS, MetricsRecord


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_lines(cfg: RunConfig | None, extra: dict | None = None) -> list[str]:
    lines = ["# uniclr artifact v1"]
    if cfg is not None:
        lines.append("# config: " + json.dumps(config_to_dict(cfg), sort_keys=True))
        lines.append(f"# seed: {cfg.seed}")
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(path, history: list[MetricsRecord], cfg: RunConfig) -> None:
    lines = _meta_lines(cfg)
    lines.append(",".join(METRIC_COLUMNS))
    for rec in history:
        lines.append(",".join(_fmt(v) for v in rec.row()))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_summary_json(path, summary: dict, cfg: RunConfig) -> None:
    payload = {
        "artifact": "uniclr summary v1",
        "config": config_to_dict(cfg),
        "seed": cfg.seed,
        "metrics": summary,
    }
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_density_tsv(path, density, cfg: RunConfig, label: str) -> None:
    """One histogram file per (label, domain) caller convention; this writes
    a single domain's positive/negative cosine histogram."""
    lines = _meta_lines(cfg, {"label": label, "domain": density.domain,
                              "auc": repr(density.auc)})
    lines.append("bin_left\tbin_right\tpositives\tnegatives")
    for i in range(density.hist_pos.size):
        lines.append(
            f"{repr(float(density.edges[i]))}\t{repr(float(density.edges[i + 1]))}"
            f"\t{int(density.hist_pos[i])}\t{int(density.hist_neg[i])}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_ablation_json(path, result, base_cfg: RunConfig) -> None:
    payload = {
        "artifact": "uniclr ablation v1",
        "axis": result.axis,
        "seeds": result.seeds,
        "base_config": config_to_dict(base_cfg),
        "cells": result.cells,
        "aggregate": result.aggregate(),
    }
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_ablation_csv(path, result, base_cfg: RunConfig, metrics=("r1_i2t", "r1_t2i")) -> None:
    agg = result.aggregate()
    lines = _meta_lines(base_cfg, {"axis": result.axis, "seeds": ",".join(map(str, result.seeds))})
    header = ["cell"]
    for m in metrics:
        header += [f"{m}_mean", f"{m}_sd"]
    lines.append(",".join(header))
    for cell, vals in agg.items():
        row = [cell]
        for m in metrics:
            row += [repr(vals[m][0]), repr(vals[m][1])]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")
