"""Two-view datasets, the missing-view protocol, and CSV I/O."""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .numerics import DimensionError, as_matrix

__all__ = [
    "MultiViewDataset",
    "MaskSpec",
    "LoadError",
    "ConfigurationError",
    "complete_count",
    "generate_mask",
    "apply_mask",
    "load_views",
    "read_matrix",
    "read_labels",
    "write_matrix",
    "write_labels",
    "write_mask",
    "normalize",
    "synth_two_view",
]


class LoadError(ValueError):
    """A data file is malformed or inconsistent with its siblings."""


class ConfigurationError(ValueError):
    """A configuration value is outside its supported range."""


@dataclass(frozen=True)
class MultiViewDataset:
    """Per-view feature matrices with a presence mask.

    ``mask[i, v]`` is True when sample ``i`` is observed in view ``v``.
    Entries of unobserved rows are kept in ``views`` but never read by
    training or inference.
    """

    views: tuple
    mask: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        views = tuple(
            np.array(as_matrix(v, name=f"view {i}")) for i, v in enumerate(self.views)
        )
        if not views:
            raise DimensionError("a dataset needs at least one view")
        n = views[0].shape[0]
        for i, v in enumerate(views):
            if v.shape[0] != n:
                raise DimensionError(f"view 0 has {n} rows but view {i} has {v.shape[0]}")
        mask = np.array(self.mask, dtype=bool)
        if mask.shape != (n, len(views)):
            raise DimensionError(f"mask shape {mask.shape} does not match ({n}, {len(views)})")
        if not mask.any(axis=1).all():
            row = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise ValueError(f"sample {row} is not observed in any view")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64).reshape(-1)
            if labels.shape[0] != n:
                raise DimensionError(f"{labels.shape[0]} labels for {n} samples")
        for v in views:
            v.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def complete(cls, views, labels=None):
        views = [as_matrix(v) for v in views]
        return cls(tuple(views), np.ones((views[0].shape[0], len(views)), dtype=bool), labels)

    @property
    def n_samples(self):
        return self.views[0].shape[0]

    @property
    def n_views(self):
        return len(self.views)

    @property
    def dims(self):
        return [v.shape[1] for v in self.views]

    @property
    def complete_rows(self):
        return np.flatnonzero(self.mask.all(axis=1))

    def observed_rows(self, v):
        return np.flatnonzero(self.mask[:, v])

    def with_mask(self, mask):
        return replace(self, mask=mask)


@dataclass(frozen=True)
class MaskSpec:
    missing_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_rate <= 1.0:
            raise ConfigurationError(f"missing_rate must lie in [0, 1], got {self.missing_rate}")


def complete_count(n, missing_rate):
    """Number of fully observed samples, ``n - round(missing_rate * n)``.

    Python's ``round`` is round-half-to-even, which fixes the count for
    halfway cases.
    """
    return n - int(round(missing_rate * n))


def generate_mask(n, num_views, spec):
    """Presence mask with exactly ``complete_count`` complete rows.

    Every other row keeps exactly one view.  Single-view rows are split as
    evenly as possible between the two views, with the odd row and the
    assignment order drawn from ``spec.seed``, so each row's kept view is
    uniform and both views stay nonempty whenever there are two or more
    incomplete rows.
    """
    if num_views != 2:
        raise ConfigurationError(f"only two-view masking is supported, got {num_views} views")
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    rng = np.random.default_rng(spec.seed)
    m = complete_count(n, spec.missing_rate)
    order = rng.permutation(n)
    mask = np.zeros((n, 2), dtype=bool)
    mask[order[:m]] = True
    rest = order[m:]
    first = len(rest) // 2 + (int(rng.integers(2)) if len(rest) % 2 else 0)
    mask[rest[:first], 0] = True
    mask[rest[first:], 1] = True
    return mask


def apply_mask(ds, spec):
    return ds.with_mask(generate_mask(ds.n_samples, ds.n_views, spec))


def read_matrix(path):
    """Read a headed numeric CSV into a float64 array."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise LoadError(f"{path}: empty file")
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                values = [float(cell) for cell in row]
            except ValueError:
                col = next(c for c, cell in enumerate(row) if not _is_float(cell))
                raise LoadError(
                    f"{path}: non-numeric cell {row[col]!r} at data row {r}, column {col + 1}"
                ) from None
            rows.append(values)
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise LoadError(f"{path}: ragged rows with widths {sorted(widths)}")
    if not rows:
        return np.zeros((0, len(header)))
    try:
        return as_matrix(rows, name=str(path))
    except ValueError as exc:
        raise LoadError(str(exc)) from None


def _is_float(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_labels(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    try:
        return np.array([int(x) for x in lines], dtype=np.int64)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None


def load_views(paths, label_path=None):
    views = [read_matrix(p) for p in paths]
    counts = [v.shape[0] for v in views]
    if len(set(counts)) > 1:
        detail = ", ".join(f"{p} ({c} rows)" for p, c in zip(paths, counts))
        raise LoadError(f"view files disagree on sample count: {detail}")
    labels = read_labels(label_path) if label_path is not None else None
    if labels is not None and len(labels) != counts[0]:
        raise LoadError(f"{label_path}: {len(labels)} labels for {counts[0]} samples")
    return MultiViewDataset.complete(views, labels)


def write_matrix(path, data, header):
    data = np.asarray(data, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(x)) for x in row])


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(x)}\n" for x in labels)


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"view{v + 1}" for v in range(mask.shape[1])])
        writer.writerows(mask.astype(int).tolist())


def normalize(ds):
    """Min-max scale every feature column to [0, 1].

    Column ranges come from observed rows only; unobserved rows are clipped
    into the same range.  Constant columns map to 0.
    """
    scaled = []
    for v, x in enumerate(ds.views):
        rows = ds.observed_rows(v)
        ref = x[rows] if rows.size else x
        lo = ref.min(axis=0)
        span = ref.max(axis=0) - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - lo) / safe, 0.0)
        scaled.append(np.clip(out, 0.0, 1.0))
    return replace(ds, views=tuple(scaled))


def synth_two_view(n, k, d1, d2, noise_sd, seed, separation=6.0):
    """Gaussian-mixture latents seen through two random linear maps.

    The latent space has ``k`` dimensions; component ``c`` has mean
    ``separation * e_c`` and identity covariance.  Each view map has
    orthonormal rows when ``d >= k`` (a random isometric embedding, so
    latent distances carry over to the noiseless views) and i.i.d. Gaussian
    entries otherwise.  Components are balanced (sizes differ by at most
    one) and the dataset is fully observed.
    """
    if k < 2 or n < k:
        raise ConfigurationError(f"need n >= k >= 2, got n={n}, k={k}")
    if noise_sd < 0:
        raise ConfigurationError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % k)
    means = separation * np.eye(k)
    latent = means[labels] + rng.standard_normal((n, k))
    views = []
    for d in (d1, d2):
        if d >= k:
            proj = np.linalg.qr(rng.standard_normal((d, k)))[0].T
        else:
            proj = rng.standard_normal((k, d)) / np.sqrt(k)
        views.append(latent @ proj + noise_sd * rng.standard_normal((n, d)))
    return MultiViewDataset.complete(views, labels)
