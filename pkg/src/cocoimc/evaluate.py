"""Inference: latent imputation, k-means on the common representation, and
clustering metrics (ACC, NMI, ARI)."""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import ConfigurationError
from .networks import cross_predict, encode

__all__ = [
    "ClusterResult",
    "MetricsReport",
    "build_common_representation",
    "kmeans",
    "contingency",
    "acc",
    "nmi",
    "ari",
    "score",
]


@dataclass
class ClusterResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_trace: list = field(default_factory=list)


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    nmi: float
    ari: float

    def as_dict(self):
        return asdict(self)


def build_common_representation(bundle, ds, mode="concat"):
    """Per-sample latent codes with missing views imputed.

    Observed views are encoded directly; a missing view's latent is the
    cross-view prediction from the observed one.  ``mode`` is ``"concat"``
    (n x 2d) or ``"mean"`` (n x d).
    """
    if ds.n_views != 2:
        raise ConfigurationError("common representation is defined for two views")
    n, d = ds.n_samples, bundle.latent_dim
    latents = [np.zeros((n, d)), np.zeros((n, d))]
    for v in range(2):
        rows = ds.observed_rows(v)
        if rows.size:
            latents[v][rows] = encode(bundle, v, ds.views[v][rows])
    for v in range(2):
        other = 1 - v
        only = np.flatnonzero(ds.mask[:, v] & ~ds.mask[:, other])
        if only.size:
            latents[other][only] = cross_predict(bundle, v, latents[v][only])
    if mode == "concat":
        return np.hstack(latents)
    if mode == "mean":
        return 0.5 * (latents[0] + latents[1])
    raise ConfigurationError(f"unknown representation mode {mode!r}")


def _sq_dists(z, centers):
    d = (z * z).sum(axis=1)[:, None] - 2.0 * z @ centers.T + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(z, k, rng):
    n = z.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(z, z[chosen])[:, 0]
    for _ in range(1, k):
        weight = closest.copy()
        weight[chosen] = 0.0
        if weight.sum() > 0:
            nxt = int(rng.choice(n, p=weight / weight.sum()))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(free))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(z, z[[nxt]])[:, 0])
    return z[chosen].copy()


def _lloyd(z, k, rng, max_iter, tol):
    centers = _plusplus(z, k, rng)
    slack = 1e-12 * float((z * z).sum())
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        dist = _sq_dists(z, centers)
        labels = dist.argmin(axis=1)
        point_cost = ((z - centers[labels]) ** 2).sum(axis=1)
        inertia = float(point_cost.sum())
        if trace and inertia > trace[-1] * (1 + 1e-9) + slack:
            raise RuntimeError(f"k-means inertia increased from {trace[-1]} to {inertia}")
        trace.append(inertia)
        new = centers.copy()
        taken = np.zeros(len(z), dtype=bool)
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = z[members].mean(axis=0)
            else:
                # re-seed on the point worst served by its current centre
                cost = np.where(taken, -1.0, point_cost)
                far = int(cost.argmax())
                taken[far] = True
                new[c] = z[far]
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    labels = _sq_dists(z, centers).argmin(axis=1)
    inertia = float(((z - centers[labels]) ** 2).sum())
    trace.append(inertia)
    return ClusterResult(labels, centers, inertia, n_iter, trace)


def kmeans(z, n_clusters, seed=0, max_iter=300, tol=1e-6, n_init=10):
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` runs by inertia."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ConfigurationError(f"kmeans needs a 2-D matrix, got shape {z.shape}")
    if n_clusters < 1 or z.shape[0] < n_clusters:
        raise ConfigurationError(f"need 1 <= K <= n, got K={n_clusters}, n={z.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _lloyd(z, n_clusters, rng, max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def _check_pair(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ValueError(f"label lengths differ: {pred.size} predicted vs {truth.size} true")
    if truth.size == 0:
        raise ValueError("empty label vectors")
    return pred, truth


def contingency(pred, truth):
    """Counts ``C[i, j]`` of samples in predicted cluster i and true class j."""
    pred, truth = _check_pair(pred, truth)
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    table = np.zeros((p.max() + 1, t.max() + 1), dtype=np.int64)
    np.add.at(table, (p, t), 1)
    return table


def acc(pred, truth):
    """Best one-to-one cluster-to-class matching accuracy."""
    table = contingency(pred, truth)
    size = max(table.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    rows, cols = linear_sum_assignment(padded, maximize=True)
    return float(padded[rows, cols].sum() / table.sum())


def _entropy(counts, n):
    p = np.sort(counts[counts > 0]) / n
    return float(-(p * np.log(p)).sum())


def _same_partition(table):
    nz = table > 0
    return bool((nz.sum(axis=0) == 1).all() and (nz.sum(axis=1) == 1).all())


def nmi(pred, truth):
    """Mutual information over the geometric mean of the entropies.

    Identical partitions (up to relabeling) score exactly 1; otherwise a
    zero-entropy labeling scores 0.  Terms are summed in sorted order so the
    value does not depend on label names.
    """
    table = contingency(pred, truth)
    n = table.sum()
    if _same_partition(table):
        return 1.0
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    rows, cols = np.nonzero(table)
    c = table[rows, cols].astype(np.float64)
    terms = c / n * np.log(c * n / (table.sum(axis=1)[rows] * table.sum(axis=0)[cols]))
    mi = float(np.sort(terms).sum())
    return float(min(max(mi / np.sqrt(h_pred * h_true), 0.0), 1.0))


def _pairs(x):
    return sum(int(v) * (int(v) - 1) // 2 for v in np.asarray(x).reshape(-1))


def ari(pred, truth):
    """Adjusted Rand index from pair counts; 1 when both partitions are trivial.

    Pair counts are integers, so the index is formed in exact integer
    arithmetic and rounded once.
    """
    table = contingency(pred, truth)
    n = int(table.sum())
    index = _pairs(table)
    a = _pairs(table.sum(axis=1))
    b = _pairs(table.sum(axis=0))
    total_pairs = n * (n - 1) // 2
    num = 2 * (index * total_pairs - a * b)
    den = (a + b) * total_pairs - 2 * a * b
    if den == 0:
        return 1.0
    return num / den


def score(pred, truth):
    return MetricsReport(acc(pred, truth), nmi(pred, truth), ari(pred, truth))
