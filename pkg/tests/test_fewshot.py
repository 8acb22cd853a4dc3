import math
from collections import Counter

import numpy as np
import pytest

from fedfewshot.autodiff import Tensor, default_dtype
from fedfewshot.errors import (
    ConfigError,
    DataError,
    EmbedDimMismatch,
    EmptyClass,
    InsufficientClasses,
    InsufficientSamplesPerClass,
)
from fedfewshot.fewshot import (
    EpisodeSpec,
    LabeledPool,
    LabelSpace,
    PrototypeBank,
    classify_embeddings,
    classify_query,
    compute_prototypes,
    episode_loss,
    evaluate_novel,
    run_local_training,
    sample_episode,
)
from fedfewshot.nn import ProtoConvSmall
from oracles import brute_force_classify


class Lookup:
    """Stand-in embedding model: row ``i`` of the pool maps to ``table[i]``.

    Inputs are (n, 1, 1) images whose single value is the row index.
    """

    training = False

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, X):
        idx = np.asarray(X).reshape(len(X)).astype(int)
        return Tensor(self.table[idx], dtype=np.float64)

    def eval(self):
        return self

    def train(self, mode=True):
        return self


def index_pool(labels):
    return LabeledPool(np.arange(len(labels), dtype=np.float32).reshape(-1, 1, 1), labels)


def test_spec_validation():
    with pytest.raises(ConfigError):
        EpisodeSpec(1, 2, 3)
    with pytest.raises(ConfigError):
        EpisodeSpec(2, 0, 3)
    assert EpisodeSpec(2, 2, 3).describe() == "2-way 2-shot"


def test_label_space_disjoint():
    with pytest.raises(DataError):
        LabelSpace({"a", "b"}, {"b"})
    with pytest.raises(DataError):
        LabelSpace(set(), {"b"})


def test_episode_counts(blob_pool):
    ep = sample_episode(blob_pool, EpisodeSpec(2, 2, 3), 0)
    assert len(ep.support) == 4 and len(ep.query) == 6
    assert set(ep.query_y) <= set(ep.support_y) == set(ep.classes)


def test_forced_partition_uses_every_sample():
    pool = index_pool(["a"] * 5 + ["b"] * 5)
    ep = sample_episode(pool, EpisodeSpec(2, 2, 3), 4)
    assert sorted(np.r_[ep.support_idx, ep.query_idx].tolist()) == list(range(10))


def test_support_query_never_overlap(blob_pool):
    rng = np.random.default_rng(0)
    spec = EpisodeSpec(3, 2, 4)
    for _ in range(1000):
        ep = sample_episode(blob_pool, spec, rng)
        ids = set(blob_pool.ids[ep.support_idx]) | set(blob_pool.ids[ep.query_idx])
        assert len(ids) == spec.n_way * spec.per_class


def test_class_frequency_is_uniform():
    pool = index_pool([c for c in "abcdef" for _ in range(5)])
    rng = np.random.default_rng(11)
    counts = Counter()
    for _ in range(10_000):
        counts.update(sample_episode(pool, EpisodeSpec(2, 1, 1), rng).classes)
    for c in "abcdef":
        assert abs(counts[c] / 10_000 - 1 / 3) <= 0.02


def test_sampling_is_seed_deterministic(blob_pool):
    a = sample_episode(blob_pool, EpisodeSpec(2, 2, 3), 5)
    b = sample_episode(blob_pool, EpisodeSpec(2, 2, 3), 5)
    assert a.support_idx.tolist() == b.support_idx.tolist()
    assert a.query_idx.tolist() == b.query_idx.tolist()


def test_sampling_errors():
    with pytest.raises(InsufficientClasses):
        sample_episode(index_pool(["a"] * 10), EpisodeSpec(2, 1, 1), 0)
    with pytest.raises(InsufficientSamplesPerClass, match="'b'"):
        sample_episode(index_pool(["a"] * 10 + ["b"] * 2), EpisodeSpec(2, 2, 1), 0)


def test_prototype_examples():
    model = Lookup([[1.0, 0.0], [0.0, 1.0], [3.0, 3.0], [3.0, 3.0]])
    bank = compute_prototypes(model, np.arange(4.0).reshape(-1, 1, 1), ["a", "a", "b", "b"])
    np.testing.assert_array_equal(bank.prototypes["a"], [0.5, 0.5])
    np.testing.assert_array_equal(bank.prototypes["b"], [3.0, 3.0])
    single = compute_prototypes(model, np.array([[[2.0]]]), ["z"])
    np.testing.assert_array_equal(single.prototypes["z"], [3.0, 3.0])
    with pytest.raises(EmptyClass):
        compute_prototypes(model, np.zeros((0, 1, 1)), [])


def test_softmax_example():
    bank = PrototypeBank(("A", "B"), np.array([[1.0, 0.0], [np.sqrt(2.0), 0.0]]))
    labels, probs = classify_embeddings([[0.0, 0.0]], bank)
    assert labels == ["A"]
    assert probs[0, 0] == pytest.approx(1 / (1 + math.exp(-1)), rel=1e-9)


def test_query_on_prototype_wins():
    bank = PrototypeBank(("A", "B"), np.array([[0.0, 0.0], [1.0, 1.0]]))
    model = Lookup([[0.0, 0.0]])
    label, probs = classify_query(model, bank, np.zeros((1, 1)))
    assert label == "A" and probs["A"] > 0.5


def test_equidistant_tie_goes_to_smallest_label():
    bank = PrototypeBank(("A", "B", "C"), np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]))
    labels, probs = classify_embeddings([[0.0, 0.0]], bank)
    assert labels == ["A"]
    np.testing.assert_allclose(probs[0], 1 / 3)


def test_embed_dim_mismatch():
    bank = PrototypeBank(("A", "B"), np.zeros((2, 3)))
    with pytest.raises(EmbedDimMismatch):
        classify_embeddings(np.zeros((1, 2)), bank)


def test_brute_force_agreement_and_euclidean_argmax():
    rng = np.random.default_rng(2)
    for trial in range(50):
        d, n, k = rng.integers(1, 4), rng.integers(2, 4), rng.integers(1, 4)
        support = rng.normal(size=(n * k, d))
        labels = [f"c{i}" for i in range(n) for _ in range(k)]
        queries = rng.normal(size=(5, d))
        bank = PrototypeBank(tuple(sorted(set(labels))), np.stack(
            [support[[j for j, l in enumerate(labels) if l == c]].mean(0) for c in sorted(set(labels))]))
        got, probs = classify_embeddings(queries, bank)
        got_euclid, _ = classify_embeddings(queries, bank, distance="euclidean")
        ref = brute_force_classify(queries.tolist(), support.tolist(), labels)
        assert got == [r[0] for r in ref] == got_euclid
        for row, (_, p) in zip(probs, ref):
            np.testing.assert_allclose(row, [p[c] for c in bank.classes], rtol=1e-9)


def test_translation_leaves_predictions():
    rng = np.random.default_rng(3)
    table = rng.normal(size=(12, 3))
    labels = ["a"] * 6 + ["b"] * 6
    pool = index_pool(labels)
    ep = sample_episode(pool, EpisodeSpec(2, 2, 4), 1)
    preds = []
    for shift in (0.0, 7.5):
        model = Lookup(table + shift)
        bank = compute_prototypes(model, ep.support_X, ep.support_y, ep.classes)
        np.testing.assert_allclose(
            bank.vectors - shift, compute_prototypes(Lookup(table), ep.support_X, ep.support_y).vectors,
            atol=1e-12)
        preds.append(classify_embeddings(model(ep.query_X).data, bank)[0])
    assert preds[0] == preds[1]


def _embedding_episode_loss(table, ep):
    class Live(Lookup):
        def __call__(self, X):
            idx = np.asarray(X).reshape(len(X)).astype(int)
            return Tensor(self.table[idx], requires_grad=True, dtype=np.float64)

    with default_dtype(np.float64):
        return episode_loss(Live(table), ep)


def test_loss_examples():
    pool = index_pool(["a"] * 5 + ["b"] * 5 + ["c"] * 5)
    ep = sample_episode(pool, EpisodeSpec(3, 2, 3), 0)
    const = _embedding_episode_loss(np.ones((15, 2)), ep).item()
    assert const == pytest.approx(9 * math.log(3))
    sep = np.repeat(np.eye(3) * 20, 5, axis=0)
    assert 0 <= _embedding_episode_loss(sep, ep).item() <= 0.01 * 9


def test_loss_equals_product_of_true_probabilities():
    rng = np.random.default_rng(6)
    labels = ["a"] * 5 + ["b"] * 5
    pool = index_pool(labels)
    table = rng.normal(size=(10, 3))
    ep = sample_episode(pool, EpisodeSpec(2, 2, 3), 2)
    loss = _embedding_episode_loss(table, ep).item()
    model = Lookup(table)
    bank = compute_prototypes(model, ep.support_X, ep.support_y, ep.classes)
    _, probs = classify_embeddings(model(ep.query_X).data, bank)
    true = [probs[i, list(ep.classes).index(y)] for i, y in enumerate(ep.query_y)]
    assert math.exp(-loss) == pytest.approx(np.prod(true), rel=1e-5)


def test_local_training_zero_episodes_is_noop(blob_pool):
    model = ProtoConvSmall((1, 8, 6), channels=4, n_blocks=3, seed=0)
    before = model.parameter_set()
    params, stats = run_local_training(model, blob_pool, EpisodeSpec(2, 2, 3), 0)
    assert stats.beta == 0 and params.bit_equal(before)


def test_local_training_is_deterministic(blob_pool):
    out = []
    for _ in range(2):
        model = ProtoConvSmall((1, 8, 6), channels=4, n_blocks=3, seed=0)
        params, stats = run_local_training(model, blob_pool, EpisodeSpec(2, 2, 3), 5, rng_seed=3)
        out.append(params)
    assert stats.beta == 5 and len(stats.losses) == 5
    assert out[0].bit_equal(out[1])


def test_local_training_learns_separable_data(blob_pool):
    model = ProtoConvSmall((1, 8, 6), channels=8, n_blocks=3, seed=0)
    _, stats = run_local_training(model, blob_pool, EpisodeSpec(2, 2, 3), 200, lr=1e-3, rng_seed=1)
    assert np.mean(stats.accuracies[-20:]) >= 0.95


def test_evaluate_always_a_gives_two_thirds():
    # every embedding collapses to one point -> ties -> smallest label wins
    pool = index_pool(["A"] * 6 + ["B"] * 6)
    summary = evaluate_novel(Lookup(np.zeros((12, 2))), pool, EpisodeSpec(2, 2, 3), 20, rng_seed=0)
    assert summary.scores["A"].mean == pytest.approx(2 / 3)
    assert summary.scores["B"].mean == 0.0


def test_evaluate_perfect_classifier():
    pool = index_pool(["A"] * 6 + ["B"] * 6)
    table = np.repeat([[0.0], [5.0]], 6, axis=0)
    summary = evaluate_novel(Lookup(table), pool, EpisodeSpec(2, 2, 3), 20, rng_seed=0)
    for score in summary.scores.values():
        assert (score.mean, score.std) == (1.0, 0.0)
    assert summary.setting == "2-way 2-shot"
