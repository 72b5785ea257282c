"""Command-line entry point: ``cocoimc <verb> [--config PATH] ...``.

Exit status is 0 when every requested run completed, 1 when some run
failed (details in ``failures.json`` under the output directory) and 2 for
configuration or input errors detected before any training.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments as ex
from .data import ConfigurationError, LoadError, read_labels, write_matrix
from .evaluate import score
from .networks import CheckpointError, load_checkpoint
from .trainer import fit

logger = logging.getLogger("cocoimc")


def _setup_logging():
    level = os.environ.get("COCO_IMC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _config(args):
    if args.config is None:
        cfg = ex.ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        return cfg
    return ex.load_config(args.config, seed=args.seed, out=args.out)


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_run(args):
    cfg = _config(args)
    res = ex.run(cfg)
    _print({"out": str(res.out_dir), **(res.metrics.as_dict() if res.metrics else {})})
    return 0


def _report_table(rows, failures, out, name):
    print(f"wrote {Path(out) / name} ({len(rows)} rows)")
    if failures:
        print(f"{len(failures)} run(s) failed; see {Path(out) / 'failures.json'}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep_missing(args):
    cfg = _config(args)
    rows, failures = ex.sweep_missing(cfg, jobs=args.jobs)
    return _report_table(rows, failures, cfg.out, "sweep_missing.csv")


def cmd_sweep_momentum(args):
    cfg = _config(args)
    values = ex.MOMENTUM_GRID
    if args.values:
        try:
            values = tuple(float(v) for v in args.values.split(","))
        except ValueError:
            raise ConfigurationError(f"cannot parse momentum values {args.values!r}") from None
    rows, failures = ex.sweep_momentum(cfg, values, jobs=args.jobs)
    return _report_table(rows, failures, cfg.out, "sweep_momentum.csv")


def cmd_ablate(args):
    cfg = _config(args)
    rows, failures = ex.ablation(cfg, jobs=args.jobs)
    return _report_table(rows, failures, cfg.out, "ablation.csv")


def cmd_export_embedding(args):
    cfg = _config(args)
    ds = ex.build_dataset(cfg)
    if args.checkpoint:
        bundle = load_checkpoint(args.checkpoint)
        if bundle.view_dims != ds.dims:
            raise ConfigurationError(f"checkpoint view dims {bundle.view_dims} do not match data {ds.dims}")
    else:
        bundle, _ = fit(ds, cfg.train)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embedding.csv"
    write_matrix(path, ex.embedding(bundle, ds, cfg), ["initial_pc1", "initial_pc2", "final_pc1", "final_pc2"])
    print(f"wrote {path}")
    return 0


def cmd_score(args):
    pred, truth = read_labels(args.pred), read_labels(args.truth)
    report = score(pred, truth).as_dict()
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "score.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _print(report)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="cocoimc", description="Incomplete two-view clustering experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, jobs=False):
        p.add_argument("--config", help="INI experiment config (default: built-in synthetic benchmark)")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")

    p = sub.add_parser("run", help="train, cluster and score one configuration")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-missing", help="missing rate 0.0 .. 0.9")
    common(p, jobs=True)
    p.set_defaults(func=cmd_sweep_missing)

    p = sub.add_parser("sweep-momentum", help="target-network momentum grid")
    common(p, jobs=True)
    p.add_argument("--values", help="comma-separated momentum values")
    p.set_defaults(func=cmd_sweep_momentum)

    p = sub.add_parser("ablate", help="11-row loss ablation grid")
    common(p, jobs=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-embedding", help="2-D PCA of raw features and learned representation")
    common(p)
    p.add_argument("--checkpoint", help="use a saved model instead of training")
    p.set_defaults(func=cmd_export_embedding)

    p = sub.add_parser("score", help="ACC/NMI/ARI between two label files")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--out", help="also write score.json here")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, LoadError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
