"""scikit-learn style estimators around the training loops.

``X`` is a list of per-sequence coordinate arrays shaped (T, J, C) and
``y`` a list of per-frame label arrays.  ``predict`` returns a list of
label arrays in the original label space; ``transform`` returns the
last-layer per-frame features.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .data import DatasetSplit, SkeletonSequence, SkeletonTopology, default_topology
from .losses import LossConfig
from .metrics import MetricsReport, evaluate_streams
from .models import ModelConfig, TransformerConfig, extract_features
from .training import TrainConfig, predict_labels, train_fusion, train_model

_RATE = 1.0  # arrays carry no rate; a constant one makes resampling a no-op


def check_sequences(X, y=None, joints: int | None = None, channels: int | None = None):
    """Validate ragged sequence input; returns float32 arrays (and int labels)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = [X]
    X = [np.asarray(x, dtype=np.float32) for x in X]
    if not X:
        raise ValueError("X holds no sequences")
    for i, x in enumerate(X):
        if x.ndim != 3 or x.shape[0] < 1:
            raise ValueError(f"sequence {i} must be shaped (T, J, C), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"sequence {i} contains NaN or infinity")
        if joints is not None and x.shape[1:] != (joints, channels):
            raise ValueError(f"sequence {i} has (J, C) = {x.shape[1:]}, estimator was fitted on {(joints, channels)}")
    if len({x.shape[1:] for x in X}) != 1:
        raise ValueError("all sequences must share joint and channel counts")
    if y is None:
        return X
    y = [np.asarray(v) for v in y]
    if len(y) != len(X):
        raise ValueError(f"{len(X)} sequences but {len(y)} label arrays")
    for i, (x, v) in enumerate(zip(X, y)):
        if v.shape != (x.shape[0],):
            raise ValueError(f"sequence {i}: {v.shape} labels for {x.shape[0]} frames")
    return X, y


class _SegmenterBase(BaseEstimator, ClassifierMixin, TransformerMixin):
    _kind = ""

    def _model_config(self, num_classes: int, channels: int) -> ModelConfig:
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            target_hz=_RATE,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            lr=self.lr,
            loss=LossConfig(self.sigma, self.tau, self.mse_mode),
        )

    def fit(self, X, y):
        X, y = check_sequences(X, y)
        self.classes_ = np.unique(np.concatenate(y))
        if self.classes_.size < 2:
            raise ValueError("need at least two classes in y")
        topology = self.topology if self.topology is not None else default_topology()
        if isinstance(topology, dict):
            topology = SkeletonTopology.from_json(topology)
        self.n_joints_, self.n_channels_ = X[0].shape[1:]
        seqs = [
            SkeletonSequence(f"fit{i}", _RATE, x, np.searchsorted(self.classes_, v))
            for i, (x, v) in enumerate(zip(X, y))
        ]
        config = self._model_config(self.classes_.size, self.n_channels_)
        self.model_, self.train_log_ = train_model(
            self._kind, DatasetSplit(seqs, []), self._train_config(), config, topology
        )
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        return check_sequences(X, joints=self.n_joints_, channels=self.n_channels_)

    def predict(self, X):
        return [self.classes_[predict_labels(self.model_, x)] for x in self._check(X)]

    def predict_proba(self, X):
        out = []
        with ad.no_grad():
            for x in self._check(X):
                logits, _ = self.model_.forward(x)
                out.append(ad.softmax(logits[-1], axis=1).data.copy())
        return out

    def transform(self, X):
        return [b.features for b in extract_features(self.model_, self._check(X))]

    def report(self, X, y) -> MetricsReport:
        X, y = check_sequences(X, y)
        return evaluate_streams(zip(self.predict(X), y))

    def score(self, X, y, sample_weight=None):
        """Corpus frame accuracy."""
        return self.report(X, y).accuracy


class POGCNSegmenter(_SegmenterBase):
    """Multi-stage graph convolutional frame labeler."""

    _kind = "pogcn"

    def __init__(
        self,
        stages=4,
        gcn_channels=(32, 32, 32, 32),
        temporal_kernel=5,
        topology=None,
        epochs=100,
        batch_size=4,
        lr=1e-3,
        sigma=0.15,
        tau=4.0,
        mse_mode="smoothing",
        seed=0,
    ):
        self.stages = stages
        self.gcn_channels = gcn_channels
        self.temporal_kernel = temporal_kernel
        self.topology = topology
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sigma = sigma
        self.tau = tau
        self.mse_mode = mse_mode
        self.seed = seed

    def _model_config(self, num_classes, channels):
        return ModelConfig(
            num_classes=num_classes,
            in_channels=channels,
            stages=self.stages,
            gcn_channels=tuple(self.gcn_channels),
            temporal_kernel=self.temporal_kernel,
        )


class TransformerSegmenter(_SegmenterBase):
    """Transformer-encoder frame labeler."""

    _kind = "transformer"

    def __init__(
        self,
        depth=2,
        model_dim=32,
        heads=4,
        ff_dim=64,
        max_T=1024,
        topology=None,
        epochs=100,
        batch_size=4,
        lr=1e-3,
        sigma=0.15,
        tau=4.0,
        mse_mode="smoothing",
        seed=0,
    ):
        self.depth = depth
        self.model_dim = model_dim
        self.heads = heads
        self.ff_dim = ff_dim
        self.max_T = max_T
        self.topology = topology
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sigma = sigma
        self.tau = tau
        self.mse_mode = mse_mode
        self.seed = seed

    def _model_config(self, num_classes, channels):
        return ModelConfig(
            num_classes=num_classes,
            in_channels=channels,
            transformer=TransformerConfig(self.depth, self.model_dim, self.heads, self.ff_dim, self.max_T),
        )


class FusionSegmenter(BaseEstimator, ClassifierMixin):
    """Per-frame classifier on concatenated features of two fitted segmenters.

    The base estimators must already be fitted on the same label set;
    their parameters are never modified.
    """

    def __init__(
        self,
        pogcn=None,
        transformer=None,
        hidden=64,
        epochs=100,
        batch_size=4,
        lr=1e-3,
        sigma=0.15,
        tau=4.0,
        mse_mode="smoothing",
        seed=0,
    ):
        self.pogcn = pogcn
        self.transformer = transformer
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.sigma = sigma
        self.tau = tau
        self.mse_mode = mse_mode
        self.seed = seed

    def fit(self, X, y):
        if self.pogcn is None or self.transformer is None:
            raise ValueError("FusionSegmenter needs fitted pogcn and transformer estimators")
        check_is_fitted(self.pogcn, "model_")
        check_is_fitted(self.transformer, "model_")
        if not np.array_equal(self.pogcn.classes_, self.transformer.classes_):
            raise ValueError("base estimators were fitted on different label sets")
        X, y = check_sequences(X, y, self.pogcn.n_joints_, self.pogcn.n_channels_)
        self.classes_ = self.pogcn.classes_
        seqs = [
            SkeletonSequence(f"fit{i}", _RATE, x, np.searchsorted(self.classes_, v))
            for i, (x, v) in enumerate(zip(X, y))
        ]
        cfg = TrainConfig(
            target_hz=_RATE, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            lr=self.lr, loss=LossConfig(self.sigma, self.tau, self.mse_mode),
        )
        self.model_, self.train_log_ = train_fusion(
            self.pogcn.model_, self.transformer.model_, DatasetSplit(seqs, []), cfg, hidden=self.hidden
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, joints=self.pogcn.n_joints_, channels=self.pogcn.n_channels_)
        return [self.classes_[predict_labels(self.model_, x)] for x in X]

    def score(self, X, y, sample_weight=None):
        X, y = check_sequences(X, y)
        return evaluate_streams(zip(self.predict(X), y)).accuracy
