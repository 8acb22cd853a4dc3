"""Episodic few-shot machinery: sampling, prototypes, distance softmax, loss,
local training and novel-class evaluation."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, functional as F, make_optimizer, no_grad
from .errors import (
    ConfigError,
    DataError,
    EmbedDimMismatch,
    EmptyClass,
    InsufficientClasses,
    InsufficientSamplesPerClass,
)
from .metrics import ConfusionMatrix, f1_per_class, summarize

DISTANCES = ("squared_euclidean", "euclidean")


@dataclass(frozen=True)
class LabelSpace:
    base_labels: frozenset
    novel_labels: frozenset

    def __post_init__(self):
        object.__setattr__(self, "base_labels", frozenset(self.base_labels))
        object.__setattr__(self, "novel_labels", frozenset(self.novel_labels))
        if not self.base_labels or not self.novel_labels:
            raise DataError("base and novel label sets must both be non-empty")
        overlap = self.base_labels & self.novel_labels
        if overlap:
            raise DataError(f"labels {sorted(overlap)} are both base and novel")


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int = 2
    k_shot: int = 2
    v_query: int = 5

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.v_query < 1:
            raise ConfigError(f"invalid episode spec {self}: need N >= 2, K >= 1, V >= 1")

    @property
    def per_class(self):
        return self.k_shot + self.v_query

    def describe(self):
        return f"{self.n_way}-way {self.k_shot}-shot"


class LabeledPool:
    """Stack of MFCC images ``X`` (n, coeffs, frames) with labels and sample ids."""

    def __init__(self, X, y, ids=None):
        self.X = np.asarray(X, dtype=np.float32)
        self.y = np.asarray(y, dtype=object)
        if self.X.ndim != 3:
            raise DataError(f"pool features must be (n, coeffs, frames), got {self.X.shape}")
        if len(self.y) != len(self.X):
            raise DataError(f"{len(self.X)} feature rows but {len(self.y)} labels")
        if ids is None:
            ids = [f"s{i}" for i in range(len(self.X))]
        self.ids = np.asarray(ids, dtype=object)

    @classmethod
    def from_matrices(cls, matrices, labels=None):
        matrices = list(matrices)
        if labels is None:
            labels = [m.label for m in matrices]
        X = np.stack([m.as_image() for m in matrices]) if matrices else np.zeros((0, 1, 1))
        return cls(X, labels, [m.source_id for m in matrices])

    def __len__(self):
        return len(self.y)

    def classes(self):
        return sorted(set(self.y.tolist()))

    def indices_of(self, label):
        return np.flatnonzero(self.y == label)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledPool(self.X[idx], self.y[idx], self.ids[idx])

    def restrict(self, labels):
        labels = set(labels)
        return self.subset([i for i, lab in enumerate(self.y) if lab in labels])

    @staticmethod
    def concat(pools):
        pools = [p for p in pools if len(p)]
        return LabeledPool(
            np.concatenate([p.X for p in pools]),
            np.concatenate([p.y for p in pools]),
            np.concatenate([p.ids for p in pools]),
        )


@dataclass
class Episode:
    spec: EpisodeSpec
    classes: tuple  # ascending label order; also the logit column order
    support_idx: np.ndarray
    query_idx: np.ndarray
    pool: LabeledPool = field(repr=False)

    @property
    def support_X(self):
        return self.pool.X[self.support_idx]

    @property
    def query_X(self):
        return self.pool.X[self.query_idx]

    @property
    def support_y(self):
        return self.pool.y[self.support_idx]

    @property
    def query_y(self):
        return self.pool.y[self.query_idx]

    @property
    def support(self):
        return list(zip(self.support_X, self.support_y))

    @property
    def query(self):
        return list(zip(self.query_X, self.query_y))


def sample_episode(pool, spec, rng_seed):
    """Draw N classes, then K support and V query samples per class, all without replacement.

    ``rng_seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    rng = np.random.default_rng(rng_seed)
    classes = pool.classes()
    if len(classes) < spec.n_way:
        raise InsufficientClasses(f"pool has {len(classes)} classes, episode needs {spec.n_way}")
    members = {c: pool.indices_of(c) for c in classes}
    eligible = [c for c in classes if len(members[c]) >= spec.per_class]
    if len(eligible) < spec.n_way:
        short = next(c for c in classes if len(members[c]) < spec.per_class)
        raise InsufficientSamplesPerClass(short, len(members[short]), spec.per_class)
    chosen_pos = rng.choice(len(classes), size=spec.n_way, replace=False)
    chosen = sorted(classes[i] for i in chosen_pos)
    for c in chosen:
        if len(members[c]) < spec.per_class:
            raise InsufficientSamplesPerClass(c, len(members[c]), spec.per_class)
    support, query = [], []
    for c in chosen:
        picked = rng.choice(members[c], size=spec.per_class, replace=False)
        support.extend(picked[: spec.k_shot])
        query.extend(picked[spec.k_shot :])
    return Episode(spec, tuple(chosen), np.asarray(support), np.asarray(query), pool)


# ---------------------------------------------------------------- prototypes

@dataclass
class PrototypeBank:
    classes: tuple
    vectors: np.ndarray  # (N, embed_dim)

    @property
    def embed_dim(self):
        return self.vectors.shape[1]

    @property
    def prototypes(self):
        return {c: self.vectors[i] for i, c in enumerate(self.classes)}


def averaging_matrix(labels, classes, dtype=np.float32):
    """(N, n) matrix whose row c averages the samples labelled ``classes[c]``."""
    labels = np.asarray(labels, dtype=object)
    rows = []
    for c in classes:
        hit = labels == c
        count = int(hit.sum())
        if count == 0:
            raise EmptyClass(f"class {c!r} has no support samples")
        rows.append(hit / count)
    return np.asarray(rows, dtype=dtype)


def class_prototypes(embeddings, labels, classes):
    """Differentiable class means of ``embeddings`` (Tensor, (n, D))."""
    avg = averaging_matrix(labels, classes, dtype=embeddings.dtype)
    return F.matmul(Tensor(avg, dtype=embeddings.dtype), embeddings)


def embed(model, X):
    """Embeddings as an ndarray, without recording a tape."""
    with no_grad():
        out = model(X)
    return out.data if isinstance(out, Tensor) else np.asarray(out)


def compute_prototypes(model, support_X, support_y, classes=None):
    if len(support_y) == 0:
        raise EmptyClass("empty support set")
    classes = tuple(classes or sorted(set(np.asarray(support_y, dtype=object).tolist())))
    emb = embed(model, support_X)
    avg = averaging_matrix(support_y, classes, dtype=np.float64)
    return PrototypeBank(classes, (avg @ emb.astype(np.float64)).astype(emb.dtype))


def pairwise_sq_distances(queries, protos):
    """(Q, N) squared Euclidean distances; both inputs are Tensors."""
    q, d = queries.shape
    n = protos.shape[0]
    diff = F.reshape(queries, (q, 1, d)) - F.reshape(protos, (1, n, d))
    return F.sum(F.square(diff), axis=2)


def distance_logits(queries, protos, distance="squared_euclidean"):
    d2 = pairwise_sq_distances(queries, protos)
    if distance == "squared_euclidean":
        return F.neg(d2)
    if distance == "euclidean":
        return F.neg(F.sqrt(d2 + 1e-12))
    raise ConfigError(f"unknown distance {distance!r}; choose from {DISTANCES}")


def classify_embeddings(query_emb, bank, distance="squared_euclidean"):
    """Labels and (Q, N) probabilities for precomputed query embeddings."""
    query_emb = np.atleast_2d(np.asarray(query_emb))
    if query_emb.shape[1] != bank.embed_dim:
        raise EmbedDimMismatch(
            f"query embeddings have dim {query_emb.shape[1]}, prototypes {bank.embed_dim}"
        )
    with no_grad():
        logits = distance_logits(
            Tensor(query_emb, dtype=np.float64), Tensor(bank.vectors, dtype=np.float64), distance
        )
        probs = F.softmax(logits, axis=1).data
    # np.argmax keeps the first maximum, i.e. the smallest label on ties
    winners = np.argmax(logits.data, axis=1)
    labels = [bank.classes[i] for i in winners]
    return labels, probs


def classify_query(model, bank, query, distance="squared_euclidean"):
    """(label, {label: probability}) for one MFCC image."""
    labels, probs = classify_embeddings(embed(model, np.asarray(query)[None]), bank, distance)
    return labels[0], dict(zip(bank.classes, probs[0].tolist()))


# ---------------------------------------------------------------------- loss

def _episode_logits(model, episode, distance):
    n_support = len(episode.support_idx)
    X = np.concatenate([episode.support_X, episode.query_X])
    emb = model(X)
    protos = class_prototypes(emb[:n_support], episode.support_y, episode.classes)
    return distance_logits(emb[n_support:], protos, distance)


def _targets(episode):
    pos = {c: i for i, c in enumerate(episode.classes)}
    return np.asarray([pos[y] for y in episode.query_y])


def episode_loss(model, episode, distance="squared_euclidean"):
    """Summed negative log-likelihood of the true query labels (a scalar Tensor)."""
    loss, _ = _episode_loss_and_logits(model, episode, distance)
    return loss


def _episode_loss_and_logits(model, episode, distance):
    logits = _episode_logits(model, episode, distance)
    logp = F.log_softmax(logits, axis=1)
    target = _targets(episode)
    picked = logp[np.arange(len(target)), target]
    return F.neg(F.sum(picked)), logits


@dataclass
class LocalStats:
    beta: int = 0  # few-shot tasks executed
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)

    @property
    def mean_loss(self):
        return float(np.mean(self.losses)) if self.losses else 0.0

    @property
    def mean_accuracy(self):
        return float(np.mean(self.accuracies)) if self.accuracies else 0.0


def run_local_training(model, base_pool, spec, episodes, lr=1e-3, rng_seed=0, optimizer=None,
                       distance="squared_euclidean", optimizer_name="adam", on_episode=None):
    """``episodes`` iterations of sample -> loss -> backward -> optimizer step.

    Pass a persistent ``optimizer`` (and a Generator as ``rng_seed``) to carry
    state across calls, as federated clients do between rounds.
    """
    rng = np.random.default_rng(rng_seed)
    if optimizer is None:
        optimizer = make_optimizer(optimizer_name, model.parameters(), lr)
    model.train()
    stats = LocalStats()
    for e in range(episodes):
        episode = sample_episode(base_pool, spec, rng)
        model.zero_grad()
        loss, logits = _episode_loss_and_logits(model, episode, distance)
        loss.backward()
        optimizer.step()
        acc = float(np.mean(np.argmax(logits.data, axis=1) == _targets(episode)))
        stats.beta += 1
        stats.losses.append(loss.item())
        stats.accuracies.append(acc)
        if on_episode is not None:
            on_episode(e, loss.item(), acc)
    return model.parameter_set(), stats


def evaluate_novel(model, novel_pool, spec, n_eval_episodes=200, rng_seed=0,
                   distance="squared_euclidean", fold=""):
    """Per-class F1 mean +- population std over sampled novel-class episodes."""
    rng = np.random.default_rng(rng_seed)
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    per_episode = []
    try:
        for _ in range(n_eval_episodes):
            ep = sample_episode(novel_pool, spec, rng)
            bank = compute_prototypes(model, ep.support_X, ep.support_y, ep.classes)
            predicted, _ = classify_embeddings(embed(model, ep.query_X), bank, distance)
            cm = ConfusionMatrix.from_predictions(ep.query_y.tolist(), predicted, ep.classes)
            per_episode.append(f1_per_class(cm))
    finally:
        if was_training and hasattr(model, "train"):
            model.train()
    return summarize(per_episode, setting=spec.describe(), fold=fold)
