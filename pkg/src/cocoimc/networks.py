"""MLP blocks and the per-view model: autoencoders, online/target networks,
cross-view predictors and cluster heads.

All parameters of a :class:`ModelBundle` live in two flat dicts keyed by
``"<module>.w<i>"`` / ``"<module>.b<i>"``: ``params`` (trained by gradient
steps) and ``target`` (moved only by :func:`ema_update`).  The online
encoder of view ``v`` is the autoencoder encoder ``enc<v>``; the target
network holds EMA shadows of ``enc<v>`` and ``proj<v>``.
"""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .data import ConfigurationError

logger = logging.getLogger(__name__)

__all__ = [
    "Mlp",
    "ModelBundle",
    "init_model",
    "encode",
    "decode",
    "online_forward",
    "target_forward",
    "ema_update",
    "cross_predict",
    "cluster_probs",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]

_OUTPUTS = (None, "softmax", "l2norm")
CHECKPOINT_MAGIC = "COCOIMC-CHECKPOINT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Mlp:
    """Fully connected net: relu on hidden layers, optional output map."""

    def __init__(self, name, dims, output=None):
        dims = [int(d) for d in dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ConfigurationError(f"{name}: invalid layer dims {dims}")
        if output not in _OUTPUTS:
            raise ConfigurationError(f"{name}: unknown output activation {output!r}")
        self.name = name
        self.dims = dims
        self.output = output

    def __repr__(self):
        return f"Mlp({self.name!r}, {self.dims}, output={self.output!r})"

    @property
    def n_layers(self):
        return len(self.dims) - 1

    def keys(self):
        for i in range(self.n_layers):
            yield f"{self.name}.w{i}"
            yield f"{self.name}.b{i}"

    def init(self, rng):
        """Xavier-uniform weights, zero biases."""
        out = {}
        for i, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            out[f"{self.name}.w{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            out[f"{self.name}.b{i}"] = np.zeros((1, fan_out))
        return out

    def forward(self, params, x, eps=0.0):
        if nx.value_of(x).shape[1] != self.dims[0]:
            raise nx.DimensionError(
                f"{self.name} expects {self.dims[0]} input columns, got shape {nx.value_of(x).shape}"
            )
        h = x
        for i in range(self.n_layers):
            h = h @ params[f"{self.name}.w{i}"] + params[f"{self.name}.b{i}"]
            if i < self.n_layers - 1:
                h = nx.relu(h)
        if self.output == "softmax":
            h = nx.softmax(h)
        elif self.output == "l2norm":
            h = nx.l2norm(h, eps=eps)
        return h


@dataclass
class ModelBundle:
    view_dims: list
    latent_dim: int
    n_clusters: int
    arch: dict
    params: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)

    def __post_init__(self):
        a = self.arch
        hidden = list(a["hidden"])
        self.encoders, self.decoders = [], []
        self.projectors, self.predictors, self.heads = [], [], []
        for v, d in enumerate(self.view_dims):
            self.encoders.append(Mlp(f"enc{v}", [d, *hidden, self.latent_dim]))
            self.decoders.append(Mlp(f"dec{v}", [self.latent_dim, *hidden[::-1], d]))
            self.projectors.append(
                Mlp(f"proj{v}", [self.latent_dim, a["proj_hidden"], a["proj_dim"]])
            )
            self.predictors.append(
                Mlp(f"pred{v}", [a["proj_dim"], a["pred_hidden"], a["proj_dim"]], output=None)
            )
            self.heads.append(Mlp(f"head{v}", [self.latent_dim, self.n_clusters], output="softmax"))
        # cross[v] maps the latent of view v to the latent of the other view
        self.cross = [
            Mlp("g12", [self.latent_dim, a["cross_hidden"], self.latent_dim]),
            Mlp("g21", [self.latent_dim, a["cross_hidden"], self.latent_dim]),
        ]
        self._warned_degenerate = False

    def online_modules(self):
        yield from self.encoders
        yield from self.decoders
        yield from self.projectors
        yield from self.predictors
        yield from self.cross
        yield from self.heads

    def target_modules(self):
        yield from self.encoders
        yield from self.projectors

    def target_keys(self):
        return [k for m in self.target_modules() for k in m.keys()]

    def sync_target(self):
        self.target = {k: self.params[k].copy() for k in self.target_keys()}

    def copy(self):
        out = ModelBundle(list(self.view_dims), self.latent_dim, self.n_clusters, dict(self.arch))
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.target = {k: v.copy() for k, v in self.target.items()}
        return out


DEFAULT_ARCH = {
    "hidden": (256, 128),
    "proj_hidden": 64,
    "proj_dim": 32,
    "pred_hidden": 64,
    "cross_hidden": 64,
    "predictor_out": "l2norm",
}


def init_model(view_dims, latent_dim=32, n_clusters=2, seed=0, **arch):
    """Build and initialise a :class:`ModelBundle`.

    Target networks start as exact copies of the online encoder/projector.
    ``arch`` overrides entries of ``DEFAULT_ARCH``.
    """
    unknown = set(arch) - set(DEFAULT_ARCH)
    if unknown:
        raise ConfigurationError(f"unknown architecture keys {sorted(unknown)}")
    spec = {**DEFAULT_ARCH, **arch}
    spec["hidden"] = tuple(int(h) for h in spec["hidden"])
    if spec["predictor_out"] not in ("l2norm", "softmax"):
        raise ConfigurationError(f"predictor_out must be 'l2norm' or 'softmax', got {spec['predictor_out']!r}")
    if latent_dim < 1 or n_clusters < 1 or any(d < 1 for d in view_dims):
        raise ConfigurationError("dimensions must be positive")
    bundle = ModelBundle([int(d) for d in view_dims], int(latent_dim), int(n_clusters), spec)
    rng = np.random.default_rng(seed)
    for module in bundle.online_modules():
        bundle.params.update(module.init(rng))
    bundle.sync_target()
    return bundle


def encode(bundle, v, x, params=None):
    return bundle.encoders[v].forward(bundle.params if params is None else params, x)


def decode(bundle, v, z, params=None):
    return bundle.decoders[v].forward(bundle.params if params is None else params, z)


def _normalize_rows(bundle, h):
    hv = nx.value_of(h)
    if np.any(~hv.any(axis=1)):
        if not bundle._warned_degenerate:
            logger.warning("zero row before normalization; adding 1e-12 to row norms")
            bundle._warned_degenerate = True
        return nx.l2norm(h, eps=1e-12)
    return nx.l2norm(h)


def online_forward(bundle, v, x, params=None, z=None):
    """Q(P(E(x))) with unit-norm rows.

    Pass ``z`` to reuse an already computed encoding of ``x``.  In softmax
    predictor mode the softmax output is additionally row-normalized so the
    result still lives on the unit sphere.
    """
    params = bundle.params if params is None else params
    if z is None:
        z = encode(bundle, v, x, params)
    h = bundle.predictors[v].forward(params, bundle.projectors[v].forward(params, z))
    if bundle.arch["predictor_out"] == "softmax":
        h = nx.softmax(h)
    return _normalize_rows(bundle, h)


def target_forward(bundle, v, x):
    """P_target(E_target(x)) with unit-norm rows; plain arrays only, never taped."""
    x = nx.value_of(x)
    h = bundle.projectors[v].forward(bundle.target, bundle.encoders[v].forward(bundle.target, x))
    return nx.value_of(_normalize_rows(bundle, h))


def ema_update(bundle, m):
    """target <- m * target + (1 - m) * online, for every target entry."""
    if not 0.0 <= m <= 1.0:
        raise ConfigurationError(f"momentum must lie in [0, 1], got {m}")
    for k, t in bundle.target.items():
        bundle.target[k] = m * t + (1.0 - m) * bundle.params[k]
    return bundle.target


def cross_predict(bundle, from_view, z, params=None):
    return bundle.cross[from_view].forward(bundle.params if params is None else params, z)


def cluster_probs(bundle, v, z, params=None):
    return bundle.heads[v].forward(bundle.params if params is None else params, z)


def save_checkpoint(bundle, path):
    """Write ``bundle`` to ``path``.

    Layout: a text line ``COCOIMC-CHECKPOINT 1``, a one-line JSON header with
    the model dims, architecture and an ordered array table
    (``group``/``name``/``shape``), then every array's entries as raw
    little-endian float64 in row-major order, concatenated in table order.
    """
    table, blobs = [], []
    for group, store in (("online", bundle.params), ("target", bundle.target)):
        for name, arr in store.items():
            table.append({"group": group, "name": name, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "view_dims": bundle.view_dims,
        "latent_dim": bundle.latent_dim,
        "n_clusters": bundle.n_clusters,
        "arch": {**bundle.arch, "hidden": list(bundle.arch["hidden"])},
        "arrays": table,
    }
    with open(path, "wb") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n".encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.readline().decode().split()
        if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        if int(magic[1]) != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {magic[1]}")
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    arch = {**header["arch"], "hidden": tuple(header["arch"]["hidden"])}
    bundle = ModelBundle(header["view_dims"], header["latent_dim"], header["n_clusters"], arch)
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        if offset + size > len(payload):
            raise CheckpointError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype="<f8", count=size // 8, offset=offset).reshape(shape)
        store = bundle.params if entry["group"] == "online" else bundle.target
        store[entry["name"]] = arr.astype(np.float64)
        offset += size
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes")
    return bundle
