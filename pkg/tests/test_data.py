import numpy as np
import pytest

from fedfewshot.data import (
    COUGH_LABELS,
    FOLD_PRESETS,
    DatasetManifest,
    FeatureCache,
    ManifestEntry,
    SyntheticClassSpec,
    build_pool,
    check_separation,
    default_class_specs,
    generate_synthetic,
    make_fold,
    partition_clients,
    partition_indices,
    synthesize_clip,
)
from fedfewshot.dsp import MfccConfig, read_wav
from fedfewshot.errors import (
    DataError,
    InsufficientSamplesForSplit,
    PairNotDistinct,
    SpecOverlap,
    UnknownLabel,
)
from fedfewshot.fewshot import EpisodeSpec, LabeledPool, LabelSpace


def test_partition_is_set_partition():
    labels = np.repeat(list("abcdef"), 23)
    parts = partition_indices(labels, 5, seed=1)
    sets = [set(p.tolist()) for p in parts]
    assert set().union(*sets) == set(range(len(labels)))
    for i in range(5):
        for j in range(i + 1, 5):
            assert not sets[i] & sets[j]
    for p in parts:
        counts = {lab: int(np.sum(labels[p] == lab)) for lab in "abcdef"}
        assert set(counts.values()) <= {4, 5}


def test_partition_even_counts():
    labels = np.repeat(["x", "y"], 100)
    for p in partition_indices(labels, 5, seed=0):
        assert np.sum(labels[p] == "x") == 20 and np.sum(labels[p] == "y") == 20


def test_single_client_holds_everything():
    labels = np.repeat(["x", "y", "z"], 7)
    (only,) = partition_indices(labels, 1, seed=0)
    assert only.tolist() == list(range(21))


def test_partition_deterministic_and_seed_sensitive():
    labels = np.repeat(["x", "y"], 30)
    a = partition_indices(labels, 3, seed=4)
    b = partition_indices(labels, 3, seed=4)
    c = partition_indices(labels, 3, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_partition_too_few_samples():
    with pytest.raises(InsufficientSamplesForSplit):
        partition_indices(np.repeat(["x"], 9), 5, seed=0, min_per_label=2)


def test_dirichlet_split_still_partitions():
    labels = np.repeat(list("abc"), 40)
    parts = partition_indices(labels, 4, seed=2, min_per_label=3, dirichlet_alpha=0.3)
    flat = np.concatenate(parts)
    assert sorted(flat.tolist()) == list(range(120))
    for p in parts:
        for lab in "abc":
            assert np.sum(labels[p] == lab) >= 3


def test_partition_clients_separates_base_and_novel():
    labels = np.repeat(list("abcd"), 10)
    pool = LabeledPool(np.zeros((40, 2, 2), np.float32), labels)
    space = make_fold(list("abcd"), ("a", "b"))
    clients = partition_clients(pool, space, 2, seed=0, spec=EpisodeSpec(2, 1, 1))
    for c in clients:
        assert set(c.base_pool.classes()) == {"c", "d"}
        assert set(c.novel_pool.classes()) == {"a", "b"}
    ids = [set(c.base_pool.ids.tolist()) | set(c.novel_pool.ids.tolist()) for c in clients]
    assert not ids[0] & ids[1]
    assert ids[0] | ids[1] == set(pool.ids.tolist())


def test_fold_presets():
    seen = []
    for name, pair in FOLD_PRESETS.items():
        space = make_fold(COUGH_LABELS, name)
        assert space.novel_labels == set(pair)
        assert len(space.base_labels) == 6
        assert not space.base_labels & space.novel_labels
        seen.extend(pair)
    assert sorted(seen) == sorted(COUGH_LABELS)


def test_fold_errors():
    with pytest.raises(UnknownLabel):
        make_fold(["a", "b", "c"], ("a", "q"))
    with pytest.raises(PairNotDistinct):
        make_fold(["a", "b", "c"], ("a", "a"))
    with pytest.raises(UnknownLabel):
        make_fold(["a", "b"], "fold9")


def test_spec_overlap():
    with pytest.raises(SpecOverlap):
        check_separation([SyntheticClassSpec("a", 200.0), SyntheticClassSpec("b", 220.0)])
    check_separation([SyntheticClassSpec("a", 200.0), SyntheticClassSpec("b", 230.0)])
    with pytest.raises(SpecOverlap):
        generate_synthetic([SyntheticClassSpec("a", 300.0), SyntheticClassSpec("b", 310.0)], per_class=1)


def test_default_preset_has_eight_classes():
    specs = default_class_specs()
    assert [s.label for s in specs] == list(COUGH_LABELS)
    check_separation(specs)


def test_generation_is_deterministic():
    specs = default_class_specs(3)
    a = generate_synthetic(specs, per_class=3, seed=7)
    b = generate_synthetic(specs, per_class=3, seed=7)
    c = generate_synthetic(specs, per_class=3, seed=8)
    assert all(x.samples.tobytes() == y.samples.tobytes() for x, y in zip(a.clips, b.clips))
    assert any(x.samples.tobytes() != y.samples.tobytes() for x, y in zip(a.clips, c.clips))
    assert all(np.max(np.abs(x.samples)) <= 0.9 + 1e-12 for x in a.clips)


@pytest.mark.parametrize("f0", [180.0, 281.25, 439.45])
def test_clean_clip_peaks_at_fundamental(f0):
    spec = SyntheticClassSpec("tone", f0, noise_floor=0.0)
    for i in range(5):
        clip = synthesize_clip(spec, 1.0, 16000, np.random.default_rng(i))
        mag = np.abs(np.fft.rfft(clip.samples))
        peak_hz = np.argmax(mag) * clip.sample_rate / len(clip.samples)
        tol = f0 * spec.f0_jitter + clip.sample_rate / len(clip.samples)
        assert abs(peak_hz - f0) <= tol


def test_nearest_centroid_separability():
    ds = generate_synthetic(per_class=30, seed=11)
    pool = build_pool(ds.clips)
    vecs = pool.X.mean(axis=2).astype(np.float64)  # mean MFCC vector per clip
    train = np.concatenate([np.flatnonzero(pool.y == c)[:15] for c in pool.classes()])
    test = np.setdiff1d(np.arange(len(pool)), train)
    cents = {c: vecs[train][pool.y[train] == c].mean(axis=0) for c in pool.classes()}
    pred = [min(cents, key=lambda c: np.sum((vecs[i] - cents[c]) ** 2)) for i in test]
    assert np.mean(np.asarray(pred) == pool.y[test]) >= 0.95


def test_manifest_round_trip(tmp_path):
    m = DatasetManifest([ManifestEntry("a.wav", "Barking cough", 1000, 16000),
                         ManifestEntry("sub/b.wav", "Night wet cough", 1500.5, 44100)])
    path = tmp_path / "m.tsv"
    m.write(path)
    back = DatasetManifest.read(path)
    assert back.entries == m.entries
    assert back.fingerprint == m.fingerprint


def test_manifest_rejects_bad_rows(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("a.wav\tx\t1000\n")
    with pytest.raises(DataError):
        DatasetManifest.read(path)
    path.write_text("a.wav\tx\t-5\t16000\n")
    with pytest.raises(DataError):
        DatasetManifest.read(path)


def test_manifest_label_space_must_cover():
    m = DatasetManifest([ManifestEntry("a.wav", "x", 1000, 16000), ManifestEntry("b.wav", "y", 1000, 16000)])
    with pytest.raises(DataError):
        m.with_label_space(LabelSpace({"q"}, {"y"}))
    assert m.with_label_space(make_fold(["x", "y", "z"], ("y", "z"))).label_space is not None


def test_written_clips_reload(tmp_path):
    ds = generate_synthetic(default_class_specs(2), per_class=2, seed=1, out_dir=tmp_path)
    m = DatasetManifest.read(tmp_path / "manifest.tsv")
    clips = m.load_clips(tmp_path)
    assert [c.label for c in clips] == [c.label for c in ds.clips]
    np.testing.assert_allclose(clips[0].samples, ds.clips[0].samples, atol=1e-6)
    assert read_wav(tmp_path / m.entries[0].path).sample_rate == 16000


def test_feature_cache_idempotent(tmp_path):
    ds = generate_synthetic(default_class_specs(2), per_class=3, seed=2)
    cache = FeatureCache(tmp_path / "cache")
    first = build_pool(ds.clips, cache=cache)
    assert (cache.hits, cache.misses) == (0, 6)
    second = build_pool(ds.clips, cache=cache)
    assert (cache.hits, cache.misses) == (6, 6)
    assert first.X.tobytes() == second.X.tobytes()
    other = MfccConfig(n_mfcc=20)
    build_pool(ds.clips, cfg=other, cache=cache)
    assert cache.misses == 12
