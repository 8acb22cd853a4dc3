"""scikit-learn style wrappers around the feature, few-shot and federation engines."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image_batch, check_labels, check_waveforms
from .data import partition_indices
from .dsp import AudioClip, MfccConfig, extract_mfcc
from .federated import Federation, FederationConfig
from .fewshot import (
    EpisodeSpec,
    LabeledPool,
    classify_embeddings,
    compute_prototypes,
    embed,
    run_local_training,
)
from .nn.models import build_model
from .seeding import int_seed, rng_for


class MfccTransformer(TransformerMixin, BaseEstimator):
    """Waveforms -> MFCC images of shape (n, n_mfcc, frames). Stateless."""

    def __init__(self, sample_rate=16000, n_mfcc=40, n_mels=40, window_ms=128.0, hop_ms=64.0,
                 preemphasis=0.97):
        self.sample_rate = sample_rate
        self.n_mfcc = n_mfcc
        self.n_mels = n_mels
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.preemphasis = preemphasis

    def _config(self):
        return MfccConfig(n_mfcc=self.n_mfcc, n_mels=self.n_mels, window_ms=self.window_ms,
                          hop_ms=self.hop_ms, preemphasis=self.preemphasis)

    def fit(self, X, y=None):
        check_waveforms(X)
        self.config_ = self._config()
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or self._config()
        images = [extract_mfcc(AudioClip(x, self.sample_rate), cfg).as_image()
                  for x in check_waveforms(X)]
        shapes = {im.shape for im in images}
        if len(shapes) > 1:
            raise ValueError(f"clips give differing frame counts {sorted(shapes)}; trim or pad first")
        return np.stack(images)


class _PrototypeClassifierBase(ClassifierMixin, BaseEstimator):
    def _spec(self):
        return EpisodeSpec(self.n_way, self.k_shot, self.v_query)

    def _factory(self, input_shape):
        seed = int_seed(self.random_state, "init")
        width = "channels" if self.architecture == "proto_conv_small" else "width"
        return lambda: build_model(self.architecture, input_shape, self.embed_dim, seed=seed,
                                   attention=self.attention, **{width: self.channels})

    def _set_support(self, X, y):
        self.bank_ = compute_prototypes(self.model_, X, y)
        self.classes_ = np.asarray(self.bank_.classes, dtype=object)

    def set_support(self, X, y):
        """Replace the prototypes with ones built from a (possibly novel) support set."""
        check_is_fitted(self, "model_")
        X = check_image_batch(X)
        self._set_support(X, check_labels(y, len(X)))
        return self

    def transform(self, X):
        """Embeddings, shape (n, embed_dim)."""
        check_is_fitted(self, "model_")
        return embed(self.model_, check_image_batch(X))

    def predict_proba(self, X):
        check_is_fitted(self, "bank_")
        _, probs = classify_embeddings(self.transform(X), self.bank_, self.distance)
        return probs

    def predict(self, X):
        check_is_fitted(self, "bank_")
        labels, _ = classify_embeddings(self.transform(X), self.bank_, self.distance)
        return np.asarray(labels, dtype=object)


class PrototypicalNetworkClassifier(_PrototypeClassifierBase):
    """Episodic prototypical network trained on one pool.

    After ``fit`` the prototypes are the class means of the training data; call
    :meth:`set_support` to classify unseen classes from a few labelled examples.
    """

    def __init__(self, architecture="proto_conv_small", embed_dim=64, channels=16, attention=True,
                 n_way=2, k_shot=2, v_query=5, episodes=100, lr=1e-3,
                 distance="squared_euclidean", random_state=0):
        self.architecture = architecture
        self.embed_dim = embed_dim
        self.channels = channels
        self.attention = attention
        self.n_way = n_way
        self.k_shot = k_shot
        self.v_query = v_query
        self.episodes = episodes
        self.lr = lr
        self.distance = distance
        self.random_state = random_state

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_labels(y, len(X))
        self.model_ = self._factory((1,) + X.shape[1:])()
        _, self.stats_ = run_local_training(
            self.model_, LabeledPool(X, y), self._spec(), self.episodes, self.lr,
            rng_for(self.random_state, "episodes", 0), distance=self.distance,
        )
        self.model_.eval()
        self._set_support(X, y)
        return self


class FederatedPrototypicalClassifier(_PrototypeClassifierBase):
    """The same network trained with FedAvg over an IID split of ``X`` into clients."""

    def __init__(self, num_clients=5, rounds=10, episodes_per_round=25,
                 architecture="proto_conv_small", embed_dim=64, channels=16, attention=True,
                 n_way=2, k_shot=2, v_query=5, lr=1e-3, distance="squared_euclidean",
                 transport="inprocess", random_state=0):
        self.num_clients = num_clients
        self.rounds = rounds
        self.episodes_per_round = episodes_per_round
        self.architecture = architecture
        self.embed_dim = embed_dim
        self.channels = channels
        self.attention = attention
        self.n_way = n_way
        self.k_shot = k_shot
        self.v_query = v_query
        self.lr = lr
        self.distance = distance
        self.transport = transport
        self.random_state = random_state

    def fit(self, X, y):
        X = check_image_batch(X)
        y = check_labels(y, len(X))
        spec = self._spec()
        parts = partition_indices(y, self.num_clients, self.random_state, spec.per_class)
        pools = [LabeledPool(X[idx], y[idx]) for idx in parts]
        cfg = FederationConfig(self.num_clients, self.rounds, self.episodes_per_round, spec,
                               self.lr, self.random_state, self.transport, distance=self.distance)
        fed = Federation(cfg, self._factory((1,) + X.shape[1:]), pools)
        self.reports_ = fed.run()
        self.model_ = fed.global_model
        self.model_.eval()
        self._set_support(X, y)
        return self
