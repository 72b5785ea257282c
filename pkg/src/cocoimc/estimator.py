"""scikit-learn style estimator wrapping training, imputation and k-means."""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import MultiViewDataset
from .evaluate import _sq_dists, build_common_representation, kmeans
from .losses import LossWeights
from .numerics import DimensionError
from .trainer import TrainConfig, fit

__all__ = ["CoCoIMC", "check_views"]


def check_views(X, mask=None, labels=None, n_views=2):
    """Coerce ``X`` to a :class:`MultiViewDataset`.

    ``X`` is either a dataset (``mask``/``labels`` override its own when
    given) or a sequence of per-view arrays sharing their row count.  A
    missing ``mask`` means every sample is observed in every view.
    """
    if isinstance(X, MultiViewDataset):
        ds = X
        if mask is not None:
            ds = ds.with_mask(mask)
        if labels is not None:
            ds = MultiViewDataset(ds.views, ds.mask, labels)
    else:
        if isinstance(X, np.ndarray) and X.ndim == 2:
            raise DimensionError("X must be a sequence of per-view matrices, not a single matrix")
        views = [np.asarray(v, dtype=np.float64) for v in X]
        if mask is None:
            mask = np.ones((views[0].shape[0], len(views)), dtype=bool)
        ds = MultiViewDataset(tuple(views), mask, labels)
    if n_views is not None and ds.n_views != n_views:
        raise DimensionError(f"expected {n_views} views, got {ds.n_views}")
    return ds


class CoCoIMC(ClusterMixin, TransformerMixin, BaseEstimator):
    """Incomplete two-view clustering with online/target networks.

    Parameters
    ----------
    n_clusters : int
        Number of clusters K.
    alpha, beta, lam : float
        Weights of the reconstruction, complementarity and consistency
        terms.
    eta_reg : float
        Marginal-entropy exponent of the mutual-information term.
    momentum : float
        EMA rate of the target networks, in [0, 1].
    pretrain_epochs, epochs : int
        Reconstruction-only epochs, and total epochs including them.
    random_state : int
        Seeds initialisation, batching and k-means.

    The remaining parameters mirror :class:`~cocoimc.trainer.TrainConfig`.

    Attributes
    ----------
    model_ : ModelBundle
    history_ : History
    labels_ : ndarray of shape (n_samples,)
    cluster_centers_ : ndarray of shape (n_clusters, n_features_out)
    """

    def __init__(
        self,
        n_clusters=3,
        *,
        alpha=0.01,
        beta=0.001,
        lam=1.0,
        eta_reg=9.0,
        momentum=0.996,
        pretrain_epochs=50,
        epochs=300,
        warmup_epochs_for_pre=None,
        pre_schedule="warmup",
        batch_size=256,
        learning_rate=1e-3,
        latent_dim=32,
        hidden=(256, 128),
        predictor_out="l2norm",
        cml_mode="same",
        use_rec=True,
        use_cml=True,
        use_pre=True,
        use_ccl=True,
        representation="concat",
        n_init=10,
        eval_every=0,
        random_state=0,
    ):
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.beta = beta
        self.lam = lam
        self.eta_reg = eta_reg
        self.momentum = momentum
        self.pretrain_epochs = pretrain_epochs
        self.epochs = epochs
        self.warmup_epochs_for_pre = warmup_epochs_for_pre
        self.pre_schedule = pre_schedule
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.predictor_out = predictor_out
        self.cml_mode = cml_mode
        self.use_rec = use_rec
        self.use_cml = use_cml
        self.use_pre = use_pre
        self.use_ccl = use_ccl
        self.representation = representation
        self.n_init = n_init
        self.eval_every = eval_every
        self.random_state = random_state

    def train_config(self):
        weights = LossWeights(self.alpha, self.beta, self.lam, self.eta_reg, self.momentum)
        return TrainConfig(
            n_clusters=self.n_clusters,
            pretrain_epochs=self.pretrain_epochs,
            epochs=self.epochs,
            warmup_epochs_for_pre=self.warmup_epochs_for_pre,
            pre_schedule=self.pre_schedule,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weights=weights,
            seed=self.random_state,
            latent_dim=self.latent_dim,
            hidden=tuple(self.hidden),
            predictor_out=self.predictor_out,
            cml_mode=self.cml_mode,
            use_rec=self.use_rec,
            use_cml=self.use_cml,
            use_pre=self.use_pre,
            use_ccl=self.use_ccl,
            representation=self.representation,
            n_init=self.n_init,
            eval_every=self.eval_every,
        )

    def fit(self, X, y=None, mask=None):
        """Train on views ``X`` (observed rows given by ``mask``).

        ``y`` is only used to log per-epoch metrics when ``eval_every > 0``.
        """
        cfg = self.train_config()
        ds = check_views(X, mask, y)
        self.model_, self.history_ = fit(ds, cfg)
        rep = build_common_representation(self.model_, ds, cfg.representation)
        result = kmeans(rep, cfg.n_clusters, seed=cfg.seed, n_init=cfg.n_init)
        self.labels_ = result.labels
        self.cluster_centers_ = result.centers
        self.inertia_ = result.inertia
        self.view_dims_ = ds.dims
        return self

    def transform(self, X, mask=None):
        """Common representation with missing-view latents imputed."""
        check_is_fitted(self, "model_")
        ds = check_views(X, mask)
        if ds.dims != self.view_dims_:
            raise DimensionError(f"fitted on view dims {self.view_dims_}, got {ds.dims}")
        return build_common_representation(self.model_, ds, self.representation)

    def predict(self, X, mask=None):
        """Index of the nearest fitted cluster centre."""
        rep = self.transform(X, mask)
        return _sq_dists(rep, self.cluster_centers_).argmin(axis=1)

    def fit_predict(self, X, y=None, mask=None):
        return self.fit(X, y, mask=mask).labels_

    def fit_transform(self, X, y=None, mask=None):
        return self.fit(X, y, mask=mask).transform(X, mask)
