import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from fedfewshot.dsp import MfccConfig, extract_mfcc
from fedfewshot.estimators import (
    FederatedPrototypicalClassifier,
    MfccTransformer,
    PrototypicalNetworkClassifier,
)


def waveforms(ds):
    return np.stack([c.samples for c in ds.clips]), np.array([c.label for c in ds.clips], dtype=object)


def test_transformer_matches_extract(synthetic_small):
    ds, _ = synthetic_small
    X, _ = waveforms(ds)
    out = MfccTransformer().fit(X[:3]).transform(X[:3])
    assert out.shape == (3, 40, 14)
    np.testing.assert_array_equal(out[1], extract_mfcc(ds.clips[1], MfccConfig()).as_image())


def test_transformer_rejects_bad_input():
    with pytest.raises(ValueError):
        MfccTransformer().fit_transform(np.zeros((2, 3, 4)))
    with pytest.raises(ValueError):
        MfccTransformer().fit_transform([np.zeros(16000), np.full(16000, np.nan)])


def test_params_and_clone():
    est = PrototypicalNetworkClassifier(channels=8, episodes=3)
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    assert twin.set_params(k_shot=3).k_shot == 3


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        PrototypicalNetworkClassifier().predict(np.zeros((1, 40, 14)))


def test_pipeline_fit_predict(synthetic_small):
    ds, _ = synthetic_small
    X, y = waveforms(ds)
    pipe = make_pipeline(MfccTransformer(),
                         PrototypicalNetworkClassifier(channels=8, embed_dim=16, episodes=30))
    pipe.fit(X, y)
    proba = pipe.predict_proba(X)
    assert proba.shape == (len(X), 4)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    assert pipe.score(X, y) >= 0.9
    assert list(pipe.classes_) == sorted(set(y))


def test_set_support_for_novel_classes(synthetic_small):
    _, pool = synthetic_small
    base = pool.restrict(pool.classes()[:2])
    novel = pool.restrict(pool.classes()[2:])
    clf = PrototypicalNetworkClassifier(channels=8, embed_dim=16, episodes=20).fit(base.X, base.y)
    support = np.concatenate([np.flatnonzero(novel.y == c)[:2] for c in novel.classes()])
    query = np.setdiff1d(np.arange(len(novel)), support)
    clf.set_support(novel.X[support], novel.y[support])
    assert set(clf.classes_) == set(novel.classes())
    assert set(clf.predict(novel.X[query])) <= set(novel.classes())
    assert clf.transform(novel.X[:2]).shape == (2, 16)


def test_fit_is_deterministic(synthetic_small):
    _, pool = synthetic_small
    a = PrototypicalNetworkClassifier(channels=8, episodes=4, random_state=2).fit(pool.X, pool.y)
    b = PrototypicalNetworkClassifier(channels=8, episodes=4, random_state=2).fit(pool.X, pool.y)
    assert a.model_.parameter_set().bit_equal(b.model_.parameter_set())


def test_federated_classifier(synthetic_small):
    _, pool = synthetic_small
    clf = FederatedPrototypicalClassifier(num_clients=2, rounds=2, episodes_per_round=3,
                                          channels=8, embed_dim=16, v_query=3)
    clf.fit(pool.X, pool.y)
    assert len(clf.reports_) == 2
    assert all(r.betas == {0: 3, 1: 3} for r in clf.reports_)
    assert clf.predict(pool.X[:5]).shape == (5,)
