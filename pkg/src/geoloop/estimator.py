"""Scikit-learn style wrapper around GPS-supervised Siamese training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluate import GroundTruthRule, ranked_auc
from .network import EmbeddingModel, TrainConfig, train
from .supervision import (KernelParams, LabelThresholds, PairSet, attach_distance_weights,
                          label_pairs, self_similarity)
from .validation import check_descriptors, check_fixes, check_training_inputs


class SiameseEmbedding(TransformerMixin, BaseEstimator):
    """Learn a descriptor embedding where distance tracks GPS proximity.

    ``fit(X, y)`` takes descriptors ``X`` (N, n) and fixes ``y`` (N, 3) of x,
    y, bearing. Pairs are labeled by the GPS similarity kernel inside each
    session (``groups``); the network is then trained with the contrastive
    loss. ``transform`` maps descriptors into the learned space.
    """

    def __init__(self, hidden_layer_sizes=(96, 64), n_components=32, margin=1.0,
                 activation="relu", epochs=200, batches_per_epoch=20, batch_positives=8,
                 neg_ratio=10, learning_rate=0.2, lr_decay=0.99, pos_class_weight=10.0,
                 clip_norm=0.341, gamma_t=0.005, gamma_R=KernelParams().gamma_R,
                 tau_p=0.9, tau_n=0.4, temporal_guard=10, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_components = n_components
        self.margin = margin
        self.activation = activation
        self.epochs = epochs
        self.batches_per_epoch = batches_per_epoch
        self.batch_positives = batch_positives
        self.neg_ratio = neg_ratio
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.pos_class_weight = pos_class_weight
        self.clip_norm = clip_norm
        self.gamma_t = gamma_t
        self.gamma_R = gamma_R
        self.tau_p = tau_p
        self.tau_n = tau_n
        self.temporal_guard = temporal_guard
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batches_per_epoch=self.batches_per_epoch,
            batch_positives=self.batch_positives, neg_ratio=self.neg_ratio,
            learning_rate=self.learning_rate, lr_decay=self.lr_decay,
            pos_class_weight=self.pos_class_weight, seed=self.random_state or 0,
            clip_norm=self.clip_norm,
        )

    def build_pairs(self, X, y, groups=None) -> PairSet:
        """Label and weight pairs within each session, in stacked indexing."""
        X, Z, g = check_training_inputs(X, y, groups)
        kp = KernelParams(self.gamma_t, self.gamma_R)
        th = LabelThresholds(self.tau_p, self.tau_n)
        starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
        ends = np.r_[starts[1:], len(g)]
        sets = []
        for a, b in zip(starts, ends):
            ps = label_pairs(self_similarity(Z[a:b], kp), th, self.temporal_guard)
            sets.append(attach_distance_weights(ps, X[a:b]).shifted(int(a)))
        return PairSet.concatenate(sets)

    def fit(self, X, y, groups=None):
        X = check_descriptors(X)
        pairs = self.build_pairs(X, y, groups)
        dims = [X.shape[1], *self.hidden_layer_sizes, self.n_components]
        model = EmbeddingModel.initialize(dims, self.margin, self.activation, self.random_state)
        self.model_, self.loss_curve_ = train(model, pairs, X, self._train_config())
        self.pairs_ = pairs
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_descriptors(X, self.n_features_in_)
        return self.model_.forward(X)

    def score(self, X, y, dist_thresh=20.0) -> float:
        """Area under the precision-recall curve of embedded-distance retrieval."""
        E = self.transform(X)
        return ranked_auc(check_fixes(y), E, GroundTruthRule(dist_thresh), self.temporal_guard)
