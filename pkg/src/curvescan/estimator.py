"""Scikit-learn style wrappers: a shape classifier and a curve-order
transformer.

The classifier trains the full network on lists of coordinate arrays; the
transformer reorders clouds along a space-filling curve.  Both follow the
usual conventions: bare ``__init__`` assignments, validation in ``fit``,
fitted state on trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .model import ModelConfig, StageConfig, build_model, draw_plan, forward, prepare_cloud
from .ops import softmax
from .autodiff import Tensor, no_grad
from .pointio import PointCloud, normalize_unit_sphere
from .spacefill import CurveVariant, serialize
from .train import TrainConfig, train_toy, restore_weights
from .validation import as_cloud_list, as_labels


class CurveScanClassifier(ClassifierMixin, BaseEstimator):
    """Point-cloud shape classifier over curve-serialized scan blocks.

    X is a sequence of (n_i, 3) coordinate arrays (or an (N, n, 3) stack);
    y is one label per cloud.  Clouds are centered and scaled to the unit
    sphere before embedding.  Training history (per-epoch metrics) lands
    in ``history_``.
    """

    def __init__(
        self,
        num_stages=2,
        num_blocks=2,
        model_dim=48,
        num_heads=6,
        state_dim=8,
        conv_kernel=7,
        conv_kind="depthwise",
        bits=10,
        serialization="shuffle",
        downsample="fps:2",
        epochs=20,
        batch_size=16,
        lr=1e-3,
        weight_decay=0.01,
        target_acc=None,
        chunk=64,
        random_state=0,
    ):
        self.num_stages = num_stages
        self.num_blocks = num_blocks
        self.model_dim = model_dim
        self.num_heads = num_heads
        self.state_dim = state_dim
        self.conv_kernel = conv_kernel
        self.conv_kind = conv_kind
        self.bits = bits
        self.serialization = serialization
        self.downsample = downsample
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.target_acc = target_acc
        self.chunk = chunk
        self.random_state = random_state

    def _model_config(self, num_classes: int) -> ModelConfig:
        stages = tuple(
            StageConfig(
                num_blocks=self.num_blocks,
                model_dim=self.model_dim,
                num_heads=self.num_heads,
                down=None if i == 0 else self.downsample,
            )
            for i in range(self.num_stages)
        )
        return ModelConfig(
            stages=stages,
            task="recognition",
            num_classes=num_classes,
            state_dim=self.state_dim,
            conv_kernel=self.conv_kernel,
            conv_kind=self.conv_kind,
            bits=self.bits,
            serialization=self.serialization,
            shuffle_seed=self.random_state,
        )

    def _clouds(self, X, class_ids=None) -> list[PointCloud]:
        arrays = as_cloud_list(X)
        out = []
        for i, arr in enumerate(arrays):
            cid = None if class_ids is None else int(class_ids[i])
            out.append(normalize_unit_sphere(PointCloud(coords=arr, class_id=cid)))
        return out

    def fit(self, X, y):
        clouds = as_cloud_list(X)
        y = as_labels(y, len(clouds))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least 2 classes to fit")
        cfg = self._model_config(len(self.classes_))
        train_clouds = self._clouds(X, y_idx)
        weights = build_model(cfg, np.random.default_rng(self.random_state))
        tcfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            seed=self.random_state,
            target_acc=self.target_acc,
            chunk=self.chunk,
        )
        # No held-out split at this scale: history's test column tracks the
        # training set under the fixed eval plan.
        history, best = train_toy(weights, train_clouds, train_clouds, tcfg)
        restore_weights(weights, best)
        self.weights_ = weights
        self.history_ = history
        self.n_features_in_ = 3
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        clouds = self._clouds(X)
        plan = draw_plan(self.weights_.config)
        rows = []
        with no_grad():
            for pc in clouds:
                prep = prepare_cloud(pc, self.weights_.config)
                rows.append(forward(prep, self.weights_, plan=plan, chunk=self.chunk).data)
        return np.stack(rows)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        return softmax(Tensor(logits), axis=-1).data

    def predict(self, X):
        idx = np.argmax(self.decision_function(X), axis=1)
        return self.classes_[idx]


class CurveSerializer(TransformerMixin, BaseEstimator):
    """Reorders each cloud along a space-filling curve.

    ``transform`` returns the reordered coordinate arrays; ``permutations``
    returns the index orders themselves.
    """

    def __init__(self, curve="hilbert", axis_priority="xyz", bits=10):
        self.curve = curve
        self.axis_priority = axis_priority
        self.bits = bits

    def fit(self, X, y=None):
        as_cloud_list(X)  # only validates
        self.variant_ = CurveVariant(curve=self.curve, axis_priority=self.axis_priority)
        return self

    def permutations(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "variant_")
        return [
            serialize(PointCloud(coords=arr), self.variant_, bits=self.bits).perm
            for arr in as_cloud_list(X)
        ]

    def transform(self, X) -> list[np.ndarray]:
        clouds = as_cloud_list(X)
        return [arr[perm] for arr, perm in zip(clouds, self.permutations(clouds))]
