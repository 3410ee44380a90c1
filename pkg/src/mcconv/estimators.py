"""scikit-learn style wrappers around the functional API.

Hyperparameters live in ``__init__`` and are exposed through ``get_params``;
``fit`` learns state into trailing-underscore attributes. ``X`` is a
:class:`~mcconv.cloud.PointCloud` or an ``(n, 3)`` array of positions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cloud import normalize_cloud
from .conv import ConvLayerConfig, conv_table, mc_conv_forward
from .losses import cosine_loss
from .network import forward
from .poisson import poisson_sample
from .protocols import Protocol, apply_protocol
from .rng import as_rng
from .training import TrainConfig, train_normal_estimation
from .validation import check_cloud, check_cloud_list, check_features, check_positive


class PoissonDiskSampler(TransformerMixin, BaseEstimator):
    """Subsample a cloud so that no two kept points are closer than ``radius``.

    ``radius`` is absolute unless ``relative=True``, in which case it is a
    fraction of the bounding-box diagonal.
    """

    def __init__(self, radius=0.1, relative=True, random_state=None):
        self.radius = radius
        self.relative = relative
        self.random_state = random_state

    def fit(self, X, y=None):
        cloud = check_cloud(X)
        check_positive("radius", self.radius)
        self.radius_ = self.radius * cloud.bbox_diag if self.relative else self.radius
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "radius_")
        cloud = check_cloud(X)
        self.indices_ = poisson_sample(cloud, self.radius_, as_rng(self.random_state))
        sub = cloud.subset(self.indices_)
        return sub if not isinstance(X, np.ndarray) else sub.positions.copy()


class ProtocolResampler(TransformerMixin, BaseEstimator):
    """Thin a cloud with one of the non-uniform sampling protocols."""

    def __init__(self, protocol="uniform", keep_prob=0.25, direction=None, p_min=0.05, random_state=None):
        self.protocol = protocol
        self.keep_prob = keep_prob
        self.direction = direction
        self.p_min = p_min
        self.random_state = random_state

    def fit(self, X=None, y=None):
        seed = as_rng(self.random_state).seed
        direction = None if self.direction is None else tuple(self.direction)
        self.protocol_ = Protocol(self.protocol, self.keep_prob, direction, self.p_min, seed=seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "protocol_")
        cloud = check_cloud(X)
        sub, self.indices_ = apply_protocol(cloud, self.protocol_, return_indices=True)
        return sub if not isinstance(X, np.ndarray) else sub.positions.copy()


class MCConvolution(TransformerMixin, BaseEstimator):
    """One spatial convolution with freshly initialized MLP kernels.

    ``transform(X)`` convolves the features carried by ``X`` (or a constant 1
    when it has none) onto the points of ``X`` itself.
    """

    def __init__(self, out_channels=None, mode="multi", radius_fraction=0.1, sigma_fraction=0.25,
                 density="kde", hidden=8, kernel_outputs=8, random_state=None):
        self.out_channels = out_channels
        self.mode = mode
        self.radius_fraction = radius_fraction
        self.sigma_fraction = sigma_fraction
        self.density = density
        self.hidden = hidden
        self.kernel_outputs = kernel_outputs
        self.random_state = random_state

    def _features(self, cloud):
        if cloud.features is None:
            return np.ones((len(cloud), 1))
        return np.asarray(cloud.features)

    def fit(self, X, y=None):
        cloud = check_cloud(X)
        m = self._features(cloud).shape[1]
        self.config_ = ConvLayerConfig(m, self.out_channels, self.mode, self.radius_fraction,
                                       self.sigma_fraction, self.density, self.hidden, self.kernel_outputs)
        self.kernels_ = self.config_.init_kernels(as_rng(self.random_state), tag="estimator")
        self.n_features_in_ = m
        return self

    def transform(self, X):
        check_is_fitted(self, "kernels_")
        cloud = check_cloud(X)
        f = check_features(self._features(cloud), len(cloud), self.n_features_in_)
        table = conv_table(cloud, cloud, self.config_)
        return mc_conv_forward(self.config_, self.kernels_, cloud, f, cloud, table)


class NormalEstimator(RegressorMixin, BaseEstimator):
    """Per-point normal regression with the encoder-decoder network.

    ``fit`` takes a list of clouds with normals; ``predict`` returns unit
    normals for one cloud. ``score`` is ``1 - mean cosine distance``.
    """

    def __init__(self, conv="mc", regimen="uniform", epochs=60, batch_size=16, lr=0.005, width=8,
                 radii=(0.1, 0.4), level0_radius=None, dropout=0.0, random_state=None):
        self.conv = conv
        self.regimen = regimen
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.width = width
        self.radii = radii
        self.level0_radius = level0_radius
        self.dropout = dropout
        self.random_state = random_state

    def fit(self, X, y=None):
        clouds = check_cloud_list(X, require_normals=True)
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, conv=self.conv,
                          regimen=self.regimen, seed=as_rng(self.random_state).seed, width=self.width,
                          radii=tuple(self.radii), level0_radius=self.level0_radius, dropout=self.dropout,
                          val_every=0, eval_seeds=1)
        result = train_normal_estimation(cfg, train=clouds, test=clouds[:1])
        self.spec_ = result.spec
        self.params_ = result.state.params
        self.metrics_ = result.metrics
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        cloud = normalize_cloud(check_cloud(X))
        pred, _ = forward(self.spec_, self.params_, cloud, conv=self.conv, rng=as_rng(self.random_state))
        norm = np.linalg.norm(pred, axis=1, keepdims=True)
        return np.divide(pred, norm, out=np.zeros_like(pred), where=norm > 0)

    def score(self, X, y=None, sample_weight=None):
        cloud = check_cloud(X, require_normals=y is None)
        target = cloud.normals if y is None else np.asarray(y, dtype=np.float64)
        return 1.0 - cosine_loss(self.predict(cloud), target)
