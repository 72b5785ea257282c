"""Loss terms of the training objective.

Every function works on plain arrays and on taped :class:`~cocoimc.numerics.Var`
nodes, returning a 1x1 matrix (or node).
"""

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import ConfigurationError
from .numerics import ContractError

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "loss_rec",
    "loss_cml",
    "loss_pre",
    "joint_distribution",
    "loss_ccl",
    "literal_mi_value",
    "combine",
    "total_loss",
]

LOG_FLOOR = 1e-16


@dataclass(frozen=True)
class LossWeights:
    """Scalar hyper-parameters of the objective.

    ``alpha``, ``beta`` and ``lam`` weight reconstruction, complementarity
    and consistency; ``eta_reg`` is the marginal-entropy exponent of the
    consistency term and ``momentum`` the target-network EMA rate.
    """

    alpha: float = 0.01
    beta: float = 0.001
    lam: float = 1.0
    eta_reg: float = 9.0
    momentum: float = 0.996

    def __post_init__(self):
        for name in ("alpha", "beta", "lam", "eta_reg"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1], got {self.momentum}")


@dataclass
class LossBreakdown:
    rec: float = 0.0
    cml: float = 0.0
    pre: float = 0.0
    ccl: float = 0.0
    total: float = 0.0


def _rows(x):
    return nx.value_of(x).shape[0]


def loss_rec(x, x_hat, observed=None):
    """Mean over observed rows of the squared row distance."""
    xv = nx.value_of(x)
    if xv.shape != nx.value_of(x_hat).shape:
        raise nx.DimensionError(f"reconstruction shape {nx.value_of(x_hat).shape} != input {xv.shape}")
    if observed is not None:
        rows = np.flatnonzero(np.asarray(observed, dtype=bool))
        x, x_hat = nx.take_rows(x, rows), nx.take_rows(x_hat, rows)
    n = _rows(x)
    if n == 0:
        raise ContractError("loss_rec needs at least one observed row")
    diff = nx.sub(x_hat, x)
    return nx.total(diff * diff) / float(n)


def loss_cml(q_online, z_target):
    """Mean squared distance between unit-norm rows, i.e. mean of 2 - 2 cos.

    All-zero rows (what the epsilon fallback of a degenerate normalization
    yields) are accepted and contribute the squared norm of their partner.
    """
    qv, zv = nx.value_of(q_online), nx.value_of(z_target)
    if qv.shape != zv.shape:
        raise nx.DimensionError(f"online shape {qv.shape} != target shape {zv.shape}")
    for name, arr in (("online", qv), ("target", zv)):
        norms = np.sqrt((arr * arr).sum(axis=1))
        dev = np.where(norms < 1e-6, 0.0, np.abs(norms - 1.0))
        if dev.size and dev.max() > 1e-6:
            raise ContractError(f"{name} rows must have unit norm (max deviation {dev.max():.3g})")
    if qv.shape[0] == 0:
        raise ContractError("loss_cml needs at least one row")
    diff = nx.sub(q_online, z_target)
    return nx.total(diff * diff) / float(qv.shape[0])


def loss_pre(z1, z2, predict12, predict21, complete=None, detach_source=False):
    """Symmetric cross-view prediction error over complete rows.

    ``predict12`` maps view-1 latents to view-2 latents and ``predict21``
    the reverse.  Regression targets are constants; gradients reach the
    predictors and, unless ``detach_source``, the source latents.
    """
    if complete is not None:
        rows = np.flatnonzero(np.asarray(complete, dtype=bool))
        z1, z2 = nx.take_rows(z1, rows), nx.take_rows(z2, rows)
    n = _rows(z1)
    if n == 0:
        raise ContractError("loss_pre needs at least one complete row; skip the term")
    t1, t2 = nx.value_of(z1), nx.value_of(z2)
    s1, s2 = (t1, t2) if detach_source else (z1, z2)
    d12 = nx.sub(predict12(s1), t2)
    d21 = nx.sub(predict21(s2), t1)
    return (nx.total(d12 * d12) + nx.total(d21 * d21)) / float(n)


def _check_probability_rows(p, name):
    pv = nx.value_of(p)
    if pv.ndim != 2 or pv.shape[0] == 0:
        raise nx.DimensionError(f"{name} must be a nonempty n x K matrix, got shape {pv.shape}")
    dev = np.abs(pv.sum(axis=1) - 1.0).max()
    if dev > 1e-9 or pv.min() < 0:
        raise ContractError(f"{name} rows must be probability vectors (max row-sum error {dev:.3g})")


def joint_distribution(p1, p2):
    """Symmetrised K x K co-assignment distribution of two soft clusterings."""
    _check_probability_rows(p1, "p1")
    _check_probability_rows(p2, "p2")
    if nx.value_of(p1).shape != nx.value_of(p2).shape:
        raise nx.DimensionError(
            f"cluster probabilities differ in shape: {nx.value_of(p1).shape} vs {nx.value_of(p2).shape}"
        )
    n = float(_rows(p1))
    P = nx.matmul(nx.transpose(p1), p2) / n
    return (P + nx.transpose(P)) * 0.5


def loss_ccl(P, eta_reg=9.0):
    """Negative entropy-regularised mutual information of a joint distribution.

    ``-sum_ij P_ij [ln P_ij - (1+eta) ln P_i - (1+eta) ln P_j]`` with row and
    column marginals ``P_i``, ``P_j``.  Entries below 1e-16 contribute zero.
    With ``eta_reg = 0`` this is ``-I`` and lies in ``[-ln K, 0]``.
    """
    Pv = nx.value_of(P)
    if Pv.ndim != 2 or Pv.shape[0] != Pv.shape[1]:
        raise nx.DimensionError(f"joint distribution must be square, got shape {Pv.shape}")
    if Pv.min() < -1e-15 or abs(Pv.sum() - 1.0) > 1e-9:
        raise ContractError(f"invalid joint distribution (sum {Pv.sum():.12g}, min {Pv.min():.3g})")
    if eta_reg < 0:
        raise ConfigurationError(f"eta_reg must be non-negative, got {eta_reg}")
    live = (Pv >= LOG_FLOOR).astype(np.float64)
    ln_p = nx.log(nx.clamp_min(P, LOG_FLOOR))
    ln_pi = nx.log(nx.clamp_min(nx.sum_cols(P), LOG_FLOOR))
    ln_pj = nx.log(nx.clamp_min(nx.sum_rows(P), LOG_FLOOR))
    w = 1.0 + eta_reg
    inner = ln_p - w * ln_pi - w * ln_pj
    return -nx.total(P * inner * live)


def literal_mi_value(P, eta_reg=9.0):
    """Value of the log-ratio expression as typeset, for reporting only.

    ``-sum_ij P_ij log(P_i P_j) / log(P_i^(1+eta) P_j^(1+eta))``.  Every
    ratio equals ``1/(1+eta)`` wherever it is defined, so the value does not
    depend on the clustering and carries no training signal.
    """
    Pv = np.asarray(nx.value_of(P), dtype=np.float64)
    pi = Pv.sum(axis=1, keepdims=True)
    pj = Pv.sum(axis=0, keepdims=True)
    num = np.log(np.maximum(pi * pj, LOG_FLOOR))
    den = (1.0 + eta_reg) * num
    ratio = np.divide(num, den, out=np.zeros_like(Pv * num), where=den != 0)
    return float(-(Pv * ratio).sum())


def combine(rec, cml, pre, ccl, weights, pre_active=True):
    """beta*cml + lam*(ccl + pre if active) + alpha*rec (floats or nodes)."""
    consistency = ccl + pre if pre_active else ccl
    return weights.beta * cml + weights.lam * consistency + weights.alpha * rec


def total_loss(parts, weights, pre_active=True):
    return combine(parts.rec, parts.cml, parts.pre, parts.ccl, weights, pre_active)
