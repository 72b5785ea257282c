"""Config-driven experiment runner: single runs, sweeps and the ablation grid.

Configs are INI files (``key = value`` under ``[run]``, ``[data]``,
``[mask]``, ``[train]`` and ``[weights]``); see ``configs/synthetic.ini`` for
an annotated example.  Unless a section sets its own ``seed``, data
generation, masking and training all use the ``[run]`` seed.
"""

import configparser
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import MISSING, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from sklearn.decomposition import PCA

from .data import (
    ConfigurationError,
    MaskSpec,
    apply_mask,
    load_views,
    normalize,
    synth_two_view,
    write_labels,
    write_mask,
    write_matrix,
)
from .evaluate import build_common_representation, kmeans, score
from .losses import LossWeights
from .networks import save_checkpoint
from .trainer import TrainConfig, fit

logger = logging.getLogger(__name__)

__all__ = [
    "DataSpec",
    "ExperimentConfig",
    "RunResult",
    "load_config",
    "build_dataset",
    "run",
    "sweep_missing",
    "sweep_momentum",
    "ablation",
    "ABLATION_GRID",
    "MISSING_RATES",
    "MOMENTUM_GRID",
    "RUN_ARTIFACTS",
]

MISSING_RATES = tuple(round(0.1 * i, 1) for i in range(10))
MOMENTUM_GRID = (0.0, 0.5, 0.9, 0.99, 0.996, 0.999, 1.0)
RUN_ARTIFACTS = ("history.csv", "metrics.json", "model.ckpt", "labels.txt", "embedding.csv")
HISTORY_COLUMNS = ("epoch", "rec", "cml", "pre", "ccl", "total")

# (rec, cml, pre, ccl) for rows (1)-(11) of the ablation table
ABLATION_GRID = (
    (1, 0, 0, 0),
    (0, 1, 0, 0),
    (0, 0, 1, 0),
    (0, 0, 0, 1),
    (1, 1, 0, 0),
    (1, 0, 1, 0),
    (1, 0, 0, 1),
    (1, 1, 1, 0),
    (1, 1, 0, 1),
    (1, 0, 1, 1),
    (1, 1, 1, 1),
)


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    n: int = 600
    k: int = 3
    d1: int = 20
    d2: int = 15
    noise_sd: float = 0.3
    separation: float = 6.0
    views: tuple = ()
    labels: str = None
    normalize: bool = True
    seed: int = None

    def __post_init__(self):
        if self.source not in ("synthetic", "files"):
            raise ConfigurationError(f"data source must be 'synthetic' or 'files', got {self.source!r}")
        if self.source == "files":
            if len(self.views) != 2:
                raise ConfigurationError(f"file source needs exactly two view paths, got {len(self.views)}")
            for p in [*self.views, *([self.labels] if self.labels else [])]:
                if not Path(p).is_file():
                    raise ConfigurationError(f"data file not found: {p}")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataSpec = field(default_factory=DataSpec)
    missing_rate: float = 0.5
    mask_seed: int = None
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out: str = "runs/default"
    tag: str = "default"

    def __post_init__(self):
        MaskSpec(self.missing_rate, 0)

    def with_seed(self, seed):
        return replace(self, seed=seed, train=replace(self.train, seed=seed))


def _coerce(raw, annotation, default, key):
    raw = raw.strip()
    kind = annotation if isinstance(annotation, type) else type(default)
    try:
        if raw.lower() in ("", "none") and default is None:
            return None
        if kind is bool:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if isinstance(default, tuple) and default and isinstance(default[0], int):
                return tuple(int(p) for p in parts)
            return tuple(parts)
        if kind in (int, float, str):
            return kind(raw)
        if default is None:
            return int(raw)
    except ValueError:
        raise ConfigurationError(f"cannot parse {key} = {raw!r}") from None
    raise ConfigurationError(f"unsupported config key {key}")


def _section(parser, name, cls, skip=()):
    if not parser.has_section(name):
        return {}
    known = {f.name: f for f in fields(cls) if f.name not in skip}
    out = {}
    for key, raw in parser.items(name):
        if key not in known:
            raise ConfigurationError(f"unknown key [{name}] {key}")
        f = known[key]
        if f.default is not MISSING:
            default = f.default
        elif f.default_factory is not MISSING:
            default = f.default_factory()
        else:
            default = None
        out[key] = _coerce(raw, f.type, default, f"[{name}] {key}")
    return out


def load_config(path, seed=None, out=None):
    """Parse and validate an INI experiment config."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        found = parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not found:
        raise ConfigurationError(f"config file not found: {path}")
    for name in parser.sections():
        if name not in ("run", "data", "mask", "train", "weights"):
            raise ConfigurationError(f"unknown config section [{name}]")
    base = Path(path).resolve().parent
    run = _section(parser, "run", ExperimentConfig, skip=("data", "train", "missing_rate", "mask_seed"))
    data = _section(parser, "data", DataSpec)
    if "views" in data:
        data["views"] = tuple(str(base / p) for p in data["views"])
    if data.get("labels"):
        data["labels"] = str(base / data["labels"])
    mask = {}
    if parser.has_section("mask"):
        for key, raw in parser.items("mask"):
            if key == "missing_rate":
                mask["missing_rate"] = _coerce(raw, float, 0.5, "[mask] missing_rate")
            elif key == "seed":
                mask["mask_seed"] = _coerce(raw, int, 0, "[mask] seed")
            else:
                raise ConfigurationError(f"unknown key [mask] {key}")
    weights = _section(parser, "weights", LossWeights)
    train = _section(parser, "train", TrainConfig, skip=("weights",))
    if seed is not None:
        run["seed"] = seed
    if out is not None:
        run["out"] = out
    train.setdefault("seed", run.get("seed", 0))
    data_spec = DataSpec(**data)
    if data_spec.source == "synthetic":
        train.setdefault("n_clusters", data_spec.k)
    elif "n_clusters" not in train:
        raise ConfigurationError("[train] n_clusters is required for file data")
    cfg = ExperimentConfig(
        data=data_spec,
        train=TrainConfig(weights=LossWeights(**weights), **train),
        **mask,
        **run,
    )
    return cfg


def build_dataset(cfg):
    """Load or generate the data, normalise it and apply the missing-view mask."""
    d = cfg.data
    data_seed = cfg.seed if d.seed is None else d.seed
    if d.source == "synthetic":
        ds = synth_two_view(d.n, d.k, d.d1, d.d2, d.noise_sd, data_seed, separation=d.separation)
    else:
        ds = load_views(list(d.views), d.labels)
    mask_seed = cfg.seed if cfg.mask_seed is None else cfg.mask_seed
    ds = apply_mask(ds, MaskSpec(cfg.missing_rate, mask_seed))
    return normalize(ds) if d.normalize else ds


def _pca2(x):
    x = np.asarray(x, dtype=np.float64)
    n_comp = min(2, *x.shape)
    out = np.zeros((x.shape[0], 2))
    out[:, :n_comp] = PCA(n_components=n_comp, svd_solver="full").fit_transform(x)
    return out


def _raw_features(ds):
    """Concatenated inputs with each unobserved view block set to its observed mean."""
    blocks = []
    for v, x in enumerate(ds.views):
        rows = ds.observed_rows(v)
        filled = np.array(x)
        filled[~ds.mask[:, v]] = x[rows].mean(axis=0) if rows.size else 0.0
        blocks.append(filled)
    return np.hstack(blocks)


def embedding(bundle, ds, cfg):
    """Initial (raw features) and final (common representation) 2-D PCA coordinates."""
    final = build_common_representation(bundle, ds, cfg.train.representation)
    return np.hstack([_pca2(_raw_features(ds)), _pca2(final)])


def write_history(path, history):
    metrics = any("acc" in r for r in history.records)
    cols = list(HISTORY_COLUMNS) + (["acc", "nmi", "ari"] if metrics else []) + ["skipped"]
    rows = [[r.get(c, -1.0) for c in cols] for r in history.records]
    write_matrix(path, rows, cols)


@dataclass
class RunResult:
    metrics: object
    out_dir: Path
    history: object = None
    target_drift: float = 0.0
    labels: np.ndarray = None


def run(cfg, out_dir=None):
    """Train, cluster, score and write the run artifacts to ``out_dir``."""
    out_dir = Path(cfg.out if out_dir is None else out_dir)
    ds = build_dataset(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("run %s: n=%d eta=%.2f seed=%d", cfg.tag, ds.n_samples, cfg.missing_rate, cfg.seed)
    bundle, history = fit(ds, cfg.train)
    rep = build_common_representation(bundle, ds, cfg.train.representation)
    result = kmeans(rep, cfg.train.n_clusters, seed=cfg.train.seed, n_init=cfg.train.n_init)
    report = score(result.labels, ds.labels) if ds.labels is not None else None

    write_history(out_dir / "history.csv", history)
    payload = {
        "tag": cfg.tag,
        "seed": cfg.seed,
        "missing_rate": cfg.missing_rate,
        "momentum": cfg.train.weights.momentum,
        "n_samples": ds.n_samples,
        "n_complete": int(ds.complete_rows.size),
    }
    if report is not None:
        payload.update(report.as_dict())
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_checkpoint(bundle, out_dir / "model.ckpt")
    write_labels(out_dir / "labels.txt", result.labels)
    write_matrix(
        out_dir / "embedding.csv",
        embedding(bundle, ds, cfg),
        ["initial_pc1", "initial_pc2", "final_pc1", "final_pc2"],
    )
    write_mask(out_dir / "mask.csv", ds.mask)
    return RunResult(report, out_dir, history, history.target_drift, result.labels)


def _guarded(job):
    name, cfg, out_dir, check = job
    try:
        res = run(cfg, out_dir)
        if res.metrics is None:
            raise ConfigurationError("sweeps need ground-truth labels")
        if check == "target_constant" and res.target_drift != 0.0:
            raise AssertionError(f"target parameters moved by {res.target_drift} with momentum 1")
        return name, res.metrics, res.target_drift, None
    except Exception as exc:  # one bad run must not abort the sweep
        logger.error("run %s failed: %s", name, exc)
        return name, None, None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


def _execute(jobs, n_jobs):
    if n_jobs and n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_guarded, jobs))
    return [_guarded(job) for job in jobs]


def _metric_cells(metrics):
    if metrics is None:
        return [-1.0, -1.0, -1.0, 1]
    return [metrics.acc, metrics.nmi, metrics.ari, 0]


def _finish(out, table_name, header, rows, outcomes):
    write_matrix(out / table_name, rows, header)
    failures = [{"run": name, "error": err} for name, _, _, err in outcomes if err]
    manifest = out / "failures.json"
    if failures:
        with open(manifest, "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=2)
            fh.write("\n")
    elif manifest.exists():
        manifest.unlink()
    return rows, failures


def sweep_missing(cfg, rates=MISSING_RATES, out_dir=None, jobs=1):
    """One run per missing rate; run ``i`` is seeded ``cfg.seed + i``.

    Writes ``sweep_missing.csv`` with columns eta, acc, nmi, ari, failed
    (failed rows carry -1 metrics) and returns ``(rows, failures)``.
    """
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    for i, rate in enumerate(rates):
        sub = replace(cfg.with_seed(cfg.seed + i), missing_rate=float(rate), tag=f"{cfg.tag}-eta{rate:.1f}")
        todo.append((f"eta_{rate:.1f}", sub, out / f"eta_{rate:.1f}", None))
    outcomes = _execute(todo, jobs)
    rows = [[float(r), *_metric_cells(o[1])] for r, o in zip(rates, outcomes)]
    return _finish(out, "sweep_missing.csv", ["eta", "acc", "nmi", "ari", "failed"], rows, outcomes)


def sweep_momentum(cfg, values=MOMENTUM_GRID, out_dir=None, jobs=1):
    """One run per momentum value, all on the base seed.

    The m = 1 run fails unless its target networks stayed exactly at their
    post-pretraining values.
    """
    for m in values:
        if not 0.0 <= m <= 1.0:
            raise ConfigurationError(f"momentum values must lie in [0, 1], got {m}")
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    for m in values:
        weights = replace(cfg.train.weights, momentum=float(m))
        sub = replace(cfg, train=replace(cfg.train, weights=weights), tag=f"{cfg.tag}-m{m:g}")
        todo.append((f"m_{m:g}", sub, out / f"m_{m:g}", "target_constant" if m == 1.0 else None))
    outcomes = _execute(todo, jobs)
    rows = []
    for m, o in zip(values, outcomes):
        drift = -1.0 if o[2] is None else o[2]
        acc_, nmi_, ari_, failed = _metric_cells(o[1])
        rows.append([float(m), acc_, nmi_, ari_, drift, failed])
    header = ["momentum", "acc", "nmi", "ari", "target_drift", "failed"]
    return _finish(out, "sweep_momentum.csv", header, rows, outcomes)


def ablation(cfg, out_dir=None, jobs=1, grid=ABLATION_GRID):
    """The 11-row on/off grid over the four loss terms, all on the base seed.

    A disabled term is not computed.  Rows without reconstruction also skip
    the reconstruction-only pretraining phase.
    """
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    todo = []
    for i, (rec, cml, pre, ccl) in enumerate(grid, start=1):
        train = replace(cfg.train, use_rec=bool(rec), use_cml=bool(cml), use_pre=bool(pre), use_ccl=bool(ccl))
        todo.append((f"row_{i:02d}", replace(cfg, train=train, tag=f"{cfg.tag}-row{i}"), out / f"row_{i:02d}", None))
    outcomes = _execute(todo, jobs)
    rows = [[i, *flags, *_metric_cells(o[1])] for i, (flags, o) in enumerate(zip(grid, outcomes), start=1)]
    header = ["row", "rec", "cml", "pre", "ccl", "acc", "nmi", "ari", "failed"]
    return _finish(out, "ablation.csv", header, rows, outcomes)

