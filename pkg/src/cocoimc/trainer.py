"""Training loop: autoencoder pretraining, then joint optimisation of the
reconstruction, complementarity and consistency terms with a per-batch EMA
update of the target networks."""

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .data import ConfigurationError
from .losses import (
    LossBreakdown,
    LossWeights,
    combine,
    joint_distribution,
    loss_ccl,
    loss_cml,
    loss_pre,
    loss_rec,
)
from .networks import (
    cluster_probs,
    cross_predict,
    decode,
    ema_update,
    encode,
    init_model,
    online_forward,
    target_forward,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "History",
    "adam_step",
    "pre_active",
    "batch_losses",
    "pretrain",
    "train_epoch",
    "fit",
]


@dataclass
class TrainConfig:
    """Everything one training run needs besides the data.

    ``pre_schedule`` selects when the cross-view prediction term is on:
    ``"warmup"`` from global epoch ``warmup_epochs_for_pre`` onwards
    (default: right after pretraining), ``"literal"`` during the first
    ``pretrain_epochs`` joint epochs only.  ``cml_mode`` ``"same"`` compares
    online and target outputs of the same view; ``"cross"`` compares the
    online output of one view with the target output of the other.
    """

    n_clusters: int = 3
    pretrain_epochs: int = 50
    epochs: int = 300
    warmup_epochs_for_pre: int = None
    pre_schedule: str = "warmup"
    batch_size: int = 256
    learning_rate: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    latent_dim: int = 32
    hidden: tuple = (256, 128)
    proj_hidden: int = 64
    proj_dim: int = 32
    pred_hidden: int = 64
    cross_hidden: int = 64
    predictor_out: str = "l2norm"
    cml_mode: str = "same"
    use_rec: bool = True
    use_cml: bool = True
    use_pre: bool = True
    use_ccl: bool = True
    freeze_encoders_for_pre: bool = False
    representation: str = "concat"
    n_init: int = 10
    eval_every: int = 0

    def __post_init__(self):
        if self.warmup_epochs_for_pre is None:
            self.warmup_epochs_for_pre = self.pretrain_epochs
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.pretrain_epochs <= self.epochs:
            raise ConfigurationError(
                f"need 0 <= pretrain_epochs <= epochs, got {self.pretrain_epochs} and {self.epochs}"
            )
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.n_clusters < 1:
            raise ConfigurationError(f"n_clusters must be positive, got {self.n_clusters}")
        if self.pre_schedule not in ("warmup", "literal"):
            raise ConfigurationError(f"pre_schedule must be 'warmup' or 'literal', got {self.pre_schedule!r}")
        if self.cml_mode not in ("same", "cross"):
            raise ConfigurationError(f"cml_mode must be 'same' or 'cross', got {self.cml_mode!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def arch(self):
        return {
            "hidden": self.hidden,
            "proj_hidden": self.proj_hidden,
            "proj_dim": self.proj_dim,
            "pred_hidden": self.pred_hidden,
            "cross_hidden": self.cross_hidden,
            "predictor_out": self.predictor_out,
        }

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update, in place, for every key of ``grads``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise nx.DimensionError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class History:
    """Per-epoch records: losses, skipped-batch count, optional metrics."""

    records: list = field(default_factory=list)
    # largest |target change| over the joint phase
    target_drift: float = 0.0

    def __len__(self):
        return len(self.records)

    def append(self, epoch, phase, parts, skipped=0, metrics=None):
        row = {"epoch": epoch, "phase": phase, **asdict(parts), "skipped": skipped}
        if metrics is not None:
            row.update(metrics.as_dict())
        self.records.append(row)

    def column(self, name):
        return np.array([r.get(name, np.nan) for r in self.records], dtype=np.float64)


def pre_active(cfg, epoch):
    """Whether the cross-view prediction term is on at global 1-based ``epoch``."""
    if not cfg.use_pre:
        return False
    if cfg.pre_schedule == "literal":
        return epoch - cfg.pretrain_epochs <= cfg.pretrain_epochs
    return epoch >= cfg.warmup_epochs_for_pre


def batch_losses(bundle, ds, idx, cfg, params, terms, use_pre):
    """Taped loss terms for the batch ``idx``.

    Returns ``(parts, n_complete)``: ``parts`` maps term names to 1x1 nodes
    for the terms that were computed.
    """
    mask = ds.mask[idx]
    parts = {}
    latents = []
    for v in range(ds.n_views):
        rows = idx[mask[:, v]]
        if rows.size == 0:
            latents.append(None)
            continue
        x = ds.views[v][rows]
        z = encode(bundle, v, x, params)
        latents.append(z)
        if "rec" in terms:
            term = loss_rec(x, decode(bundle, v, z, params))
            parts["rec"] = term if "rec" not in parts else parts["rec"] + term

    both = mask.all(axis=1)
    complete = idx[both]
    if complete.size and ds.n_views == 2:
        zc = [nx.take_rows(latents[v], np.flatnonzero(both[mask[:, v]])) for v in range(2)]
        if "cml" in terms:
            xs = [ds.views[v][complete] for v in range(2)]
            cml = None
            for v in range(2):
                src = v if cfg.cml_mode == "same" else 1 - v
                term = loss_cml(online_forward(bundle, v, None, params, z=zc[v]), target_forward(bundle, src, xs[src]))
                cml = term if cml is None else cml + term
            parts["cml"] = cml
        if "ccl" in terms:
            p = [cluster_probs(bundle, v, zc[v], params) for v in range(2)]
            parts["ccl"] = loss_ccl(joint_distribution(p[0], p[1]), cfg.weights.eta_reg)
        if use_pre:
            parts["pre"] = loss_pre(
                zc[0],
                zc[1],
                lambda z: cross_predict(bundle, 0, z, params),
                lambda z: cross_predict(bundle, 1, z, params),
                detach_source=cfg.freeze_encoders_for_pre,
            )
    return parts, complete.size


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _run_epoch(bundle, ds, cfg, rng, adam, terms, use_pre, momentum=None):
    sums = {k: 0.0 for k in ("rec", "cml", "pre", "ccl")}
    counts = {k: 0 for k in sums}
    skipped = 0
    needs_pair = bool({"cml", "ccl"} & terms) or use_pre
    for idx in _batches(ds.n_samples, cfg.batch_size, rng):
        tape = nx.Tape()
        leaves = {k: tape.leaf(v) for k, v in bundle.params.items()}
        parts, n_complete = batch_losses(bundle, ds, idx, cfg, leaves, terms, use_pre)
        if needs_pair and n_complete == 0:
            skipped += 1
        if parts:
            zero = 0.0
            loss = combine(
                parts.get("rec", zero),
                parts.get("cml", zero),
                parts.get("pre", zero),
                parts.get("ccl", zero),
                cfg.weights,
                pre_active=True,
            )
            if isinstance(loss, nx.Var):
                tape.backward(loss)
                grads = {k: leaf.grad for k, leaf in leaves.items()}
                adam_step(bundle.params, grads, adam, cfg.learning_rate)
            for k, node in parts.items():
                sums[k] += node.item()
                counts[k] += 1
        if momentum is not None:
            ema_update(bundle, momentum)
    means = {k: sums[k] / counts[k] if counts[k] else 0.0 for k in sums}
    out = LossBreakdown(**means)
    out.total = float(combine(out.rec, out.cml, out.pre, out.ccl, cfg.weights, use_pre))
    return out, skipped


def _joint_terms(cfg):
    return {name for name, on in (("rec", cfg.use_rec), ("cml", cfg.use_cml), ("ccl", cfg.use_ccl)) if on}


def _metrics(bundle, ds, cfg, seed):
    from .evaluate import build_common_representation, kmeans, score

    rep = build_common_representation(bundle, ds, cfg.representation)
    labels = kmeans(rep, cfg.n_clusters, seed=seed, n_init=cfg.n_init).labels
    return score(labels, ds.labels)


def _maybe_eval(bundle, ds, cfg, epoch):
    if cfg.eval_every and ds.labels is not None and epoch % cfg.eval_every == 0:
        return _metrics(bundle, ds, cfg, cfg.seed)
    return None


def pretrain(bundle, ds, cfg, history=None, rng=None, adam=None, epochs=None):
    """Reconstruction-only epochs, then a hard sync of the target networks."""
    rng = np.random.default_rng([cfg.seed, 1]) if rng is None else rng
    adam = AdamState() if adam is None else adam
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    for epoch in range(1, epochs + 1):
        parts, skipped = _run_epoch(bundle, ds, cfg, rng, adam, {"rec"}, use_pre=False)
        if history is not None:
            history.append(epoch, "pretrain", parts, skipped, _maybe_eval(bundle, ds, cfg, epoch))
        logger.debug("pretrain epoch %d rec=%.6g", epoch, parts.rec)
    bundle.sync_target()
    return bundle


def train_epoch(bundle, ds, cfg, epoch, rng=None, adam=None, history=None):
    """One joint epoch; returns the epoch-mean :class:`LossBreakdown`.

    Batches without a complete pair skip the pairwise terms and are counted
    in the history record.
    """
    rng = np.random.default_rng([cfg.seed, 2, epoch]) if rng is None else rng
    adam = AdamState() if adam is None else adam
    use_pre = pre_active(cfg, epoch)
    parts, skipped = _run_epoch(
        bundle, ds, cfg, rng, adam, _joint_terms(cfg), use_pre, momentum=cfg.weights.momentum
    )
    if history is not None:
        history.append(epoch, "train", parts, skipped, _maybe_eval(bundle, ds, cfg, epoch))
    return parts


def fit(ds, cfg):
    """Pretrain, then train jointly; returns ``(bundle, history)``.

    When reconstruction is disabled the pretraining phase is skipped and
    every epoch is a joint epoch.
    """
    if ds.n_views != 2:
        raise ConfigurationError(f"training supports exactly two views, got {ds.n_views}")
    bundle = init_model(ds.dims, cfg.latent_dim, cfg.n_clusters, seed=cfg.seed, **cfg.arch())
    history = History()
    rng = np.random.default_rng([cfg.seed, 1])
    adam = AdamState()
    n1 = cfg.pretrain_epochs if cfg.use_rec else 0
    pretrain(bundle, ds, cfg, history, rng, adam, epochs=n1)
    start = {k: v.copy() for k, v in bundle.target.items()}
    for epoch in range(n1 + 1, cfg.epochs + 1):
        parts = train_epoch(bundle, ds, cfg, epoch, rng, adam, history)
        logger.debug("epoch %d total=%.6g", epoch, parts.total)
    history.target_drift = max(float(np.abs(bundle.target[k] - start[k]).max()) for k in start)
    return bundle, history
