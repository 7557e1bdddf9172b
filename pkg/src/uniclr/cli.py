"""Command-line entry point.

Subcommands: train, ablate, grad-check, loss-compare, sim-density,
export-dataset. Exit codes: 0 success, 1 runtime failure, 2 config error.
Output files are atomic and carry the resolved config in their metadata.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys

import numpy as np
import yaml

from . import artifacts
from .ablation import AXES, build_grid, run_ablation
from .config import (
    RunConfig, apply_overrides, config_from_dict, config_to_dict, load_config,
)
from .errors import ConfigError, NonFiniteLossError
from .gradcheck import run_suite
from .training import train
from .world import generate_dataset, write_dataset

DEFAULT_OUT_ENV = "UNICLR_OUT"


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    data = config_to_dict(cfg)
    overrides = list(getattr(args, "override", []) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_dict(data)


def _out_dir(args) -> str:
    out = getattr(args, "out", None) or os.environ.get(DEFAULT_OUT_ENV, "runs")
    os.makedirs(out, exist_ok=True)
    return out


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    result = train(cfg)
    artifacts.write_metrics_csv(os.path.join(out, "metrics.csv"), result.history, cfg)
    artifacts.write_summary_json(os.path.join(out, "summary.json"), result.summary(), cfg)
    final = result.final
    print(
        f"trained {cfg.epochs} epochs: loss={final['loss']:.4f} "
        f"R@1 i2t={final['r1_i2t']:.3f} t2i={final['r1_t2i']:.3f} "
        f"probe={final['probe_acc']:.3f}"
    )
    print(f"wrote {out}/metrics.csv and {out}/summary.json")
    return 0


def _seeds(args) -> list[int]:
    base = args.seed if args.seed is not None else 0
    return [base + i for i in range(args.seeds)]


def cmd_ablate(args, axis: str | None = None) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    axis = axis or args.axis
    cells = build_grid(axis, cfg)
    result = run_ablation(cells, _seeds(args), workers=args.workers, axis=axis)
    artifacts.write_ablation_json(os.path.join(out, f"ablation_{axis}.json"), result, cfg)
    artifacts.write_ablation_csv(os.path.join(out, f"ablation_{axis}.csv"), result, cfg)
    _print_ablation_table(result)
    print(f"wrote {out}/ablation_{axis}.json and .csv")
    return 0


def _print_ablation_table(result) -> None:
    agg = result.aggregate()
    print(f"axis={result.axis} seeds={result.seeds}")
    print(f"{'cell':<18} {'R@1 i2t':>14} {'R@1 t2i':>14} {'probe':>14}")
    for cell, vals in agg.items():
        def ms(metric):
            mean, sd = vals[metric]
            return f"{mean:.3f}+-{sd:.3f}"
        print(f"{cell:<18} {ms('r1_i2t'):>14} {ms('r1_t2i'):>14} {ms('probe_acc'):>14}")


def cmd_grad_check(args) -> int:
    results = run_suite(trials=args.trials, seed=args.seed if args.seed is not None else 0)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"[{status}] {r.name}: {r.passed}/{r.total} within {r.tolerance:g}"
              f" (worst {r.worst:.3e})")
        failed += not r.ok
    total_pass = sum(r.passed for r in results)
    total = sum(r.total for r in results)
    print(f"{total_pass}/{total} instances passed across {len(results)} checks")
    return 1 if failed else 0


def cmd_loss_compare(args) -> int:
    return cmd_ablate(args, axis="loss")


def cmd_sim_density(args) -> int:
    """Train each loss configuration and dump per-(loss, domain) histograms."""
    from .losses import build_pair_sets
    from .similarity import domain_matrix, score_matrix
    from .training import STREAM_EVAL, assemble_batch, similarity_density_stats

    cfg = _resolve_config(args)
    out = _out_dir(args)
    cells = build_grid("loss", cfg)
    written = []
    for cell in cells:
        result = train(cell.config)
        dataset = result.dataset
        eval_images, eval_texts, _ = dataset.stacked("eval")
        nd = min(cell.config.eval.density_batch, eval_images.shape[0])
        rng_eval = np.random.default_rng([cell.config.seed, STREAM_EVAL])
        pick = rng_eval.choice(eval_images.shape[0], size=nd, replace=False)
        batch = assemble_batch(
            eval_images[pick], eval_texts[pick], (cfg.weak, cfg.strong), result.model,
            rng_eval, cfg.image_views, cfg.text_views,
        )
        sets = build_pair_sets(nd, cfg.image_views, cfg.text_views)
        domains = domain_matrix(nd, cfg.image_views, cfg.text_views)
        density = similarity_density_stats(score_matrix(batch.z, result.sim, domains), sets)
        for d, dd in density.items():
            path = os.path.join(out, f"density_{cell.name}_d{d}.tsv")
            artifacts.write_density_tsv(path, dd, cell.config, cell.name)
            written.append(path)
    print(f"wrote {len(written)} histogram files to {out}")
    return 0


def cmd_export_dataset(args) -> int:
    cfg = _resolve_config(args)
    out = args.out or "dataset.bin"
    dataset = generate_dataset(cfg.world, cfg.seed)
    buf = io.BytesIO()
    write_dataset(dataset, buf)
    artifacts.atomic_write_bytes(out, buf.getvalue())
    print(f"wrote {out} ({len(dataset.train)} train, {len(dataset.eval)} eval pairs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uniclr",
        description="Unified multi-positive contrastive learning on a synthetic world.",
    )
    parser.add_argument("--dump-defaults", action="store_true",
                        help="print the default config as YAML and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p, out_help="output directory"):
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("-o", "--out", help=out_help + f" (default $"
                       f"{DEFAULT_OUT_ENV} or ./runs)")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("-O", "--override", action="append", metavar="KEY=VALUE",
                       help="dotted config override, e.g. loss.kind=mpnce")

    p = sub.add_parser("train", help="run a single training run")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="run a multi-seed ablation grid")
    common(p)
    p.add_argument("--axis", choices=AXES, default="loss")
    p.add_argument("--seeds", type=int, default=5, help="number of seeds")
    p.add_argument("--workers", type=int, default=0, help="parallel worker processes")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("grad-check", help="run the finite-difference oracle suite")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("loss-compare", help="the five-row loss comparison table")
    common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--workers", type=int, default=0)
    p.set_defaults(fn=cmd_loss_compare)

    p = sub.add_parser("sim-density", help="per-(loss, domain) similarity histograms")
    common(p)
    p.set_defaults(fn=cmd_sim_density)

    p = sub.add_parser("export-dataset", help="dump the synthetic dataset to a flat binary")
    common(p, out_help="output file path")
    p.set_defaults(fn=cmd_export_dataset)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.dump_defaults:
        print(yaml.safe_dump(config_to_dict(RunConfig()), sort_keys=False), end="")
        return 0
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NonFiniteLossError as exc:
        dump_path = os.path.join(getattr(args, "out", None) or "runs", "divergence_dump.npz")
        os.makedirs(os.path.dirname(dump_path), exist_ok=True)
        np.savez(dump_path, **{k: np.asarray(v) for k, v in exc.dump.items()})
        print(f"runtime error: {exc} (diagnostics in {dump_path})", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
