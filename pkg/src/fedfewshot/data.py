"""Manifests, feature caching, client partitioning, folds and a synthetic
cough-like dataset."""

import csv
import hashlib
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import AudioClip, MfccConfig, extract_mfcc, load_mfcc, mix_noise, read_wav, save_mfcc, write_wav
from .errors import (
    ConfigError,
    DataError,
    InsufficientSamplesForSplit,
    PairNotDistinct,
    SpecOverlap,
    UnknownLabel,
)
from .fewshot import LabeledPool, LabelSpace
from .seeding import rng_for

COUGH_LABELS = (
    "Heavy cold and sore throat coughing",
    "Night wet cough",
    "Dry afternoon cough",
    "Gaggy wet cough",
    "Spring allergy coughing",
    "Coughing up crap again",
    "Chesty and wet cough",
    "Barking cough",
)

FOLD_PRESETS = {
    "fold1": ("Heavy cold and sore throat coughing", "Night wet cough"),
    "fold2": ("Dry afternoon cough", "Gaggy wet cough"),
    "fold3": ("Spring allergy coughing", "Coughing up crap again"),
    "fold4": ("Chesty and wet cough", "Barking cough"),
}

MIN_F0_SEPARATION = 0.15


# ------------------------------------------------------------------ manifest

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    duration_ms: float
    sample_rate: int

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise DataError(f"{self.path}: duration must be positive")
        if self.sample_rate <= 0:
            raise DataError(f"{self.path}: sample rate must be positive")

    @property
    def clip_id(self):
        return Path(self.path).stem if "://" not in self.path else self.path.split("://", 1)[1]


@dataclass
class DatasetManifest:
    entries: list
    label_space: LabelSpace = None

    def __post_init__(self):
        if self.label_space is not None:
            self.with_label_space(self.label_space)

    def __len__(self):
        return len(self.entries)

    def labels(self):
        return sorted({e.label for e in self.entries})

    def with_label_space(self, space):
        labels = set(self.labels())
        covered = space.base_labels | space.novel_labels
        if labels - covered:
            raise DataError(f"labels {sorted(labels - covered)} are in neither base nor novel set")
        self.label_space = space
        return self

    @property
    def fingerprint(self):
        h = hashlib.sha256()
        for e in self.entries:
            h.update(f"{e.path}\t{e.label}\t{e.duration_ms:g}\t{e.sample_rate}\n".encode())
        return h.hexdigest()[:16]

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            for e in self.entries:
                writer.writerow([e.path, e.label, f"{e.duration_ms:g}", e.sample_rate])

    @classmethod
    def read(cls, path):
        entries = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
                if not row or row[0].startswith("#"):
                    continue
                if len(row) != 4:
                    raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(row)}")
                try:
                    entries.append(ManifestEntry(row[0], row[1], float(row[2]), int(row[3])))
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from exc
        return cls(entries)

    def resolve(self, entry, root=None):
        p = Path(entry.path)
        if not p.is_absolute() and root is not None:
            p = Path(root) / p
        return p

    def load_clips(self, root=None):
        return [
            read_wav(self.resolve(e, root), label=e.label, source_id=e.clip_id) for e in self.entries
        ]


# --------------------------------------------------------------- feature cache

class FeatureCache:
    """MFCC blocks on disk, keyed by clip id and extraction-config fingerprint."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def path_for(self, clip_id, cfg):
        safe = re.sub(r"[^A-Za-z0-9._-]+", "_", clip_id)
        return self.directory / f"{safe}.{cfg.fingerprint()}.mfcc"

    def get_or_compute(self, clip, cfg):
        path = self.path_for(clip.source_id, cfg)
        if path.exists():
            self.hits += 1
            matrix = load_mfcc(path, cfg.fingerprint(), clip.source_id)
            matrix.label = clip.label
            return matrix
        self.misses += 1
        matrix = extract_mfcc(clip, cfg)
        tmp = path.with_suffix(".tmp")
        save_mfcc(tmp, matrix)
        os.replace(tmp, path)
        return matrix


def extract_features(clips, cfg=None, cache=None):
    cfg = cfg or MfccConfig()
    if cache is None:
        return [extract_mfcc(c, cfg) for c in clips]
    return [cache.get_or_compute(c, cfg) for c in clips]


def augment_with_noise(clips, noise_clips, ratio, seed):
    """One noisy copy of each clip, mixing a seeded choice of noise source."""
    rng = rng_for(seed, "augment")
    out = []
    for clip in clips:
        noise = noise_clips[int(rng.integers(len(noise_clips)))]
        mixed = mix_noise(clip, noise, ratio, int(rng.integers(2**31)))
        mixed.source_id = f"{clip.source_id}+noise"
        out.append(mixed)
    return out


# --------------------------------------------------------------- partitioning

@dataclass
class ClientDataset:
    client_id: int
    base_pool: LabeledPool
    novel_pool: LabeledPool


def partition_indices(labels, num_clients, seed, min_per_label=0, dirichlet_alpha=None):
    """Split sample indices into ``num_clients`` disjoint sets covering everything.

    Default is IID: each label's indices are shuffled and dealt round-robin.
    ``dirichlet_alpha`` skews per-label shares across clients instead.
    """
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")
    labels = np.asarray(labels, dtype=object)
    rng = rng_for(seed, "split")
    parts = [[] for _ in range(num_clients)]
    for label in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == label)
        need = num_clients * min_per_label
        if idx.size < need:
            raise InsufficientSamplesForSplit(
                f"label {label!r} has {idx.size} samples, {num_clients} clients need {need}"
            )
        idx = rng.permutation(idx)
        if dirichlet_alpha is None:
            for i, sample in enumerate(idx):
                parts[i % num_clients].append(int(sample))
            continue
        share = rng.dirichlet(np.full(num_clients, float(dirichlet_alpha)))
        spare = idx.size - need
        counts = np.full(num_clients, min_per_label) + np.floor(share * spare).astype(int)
        for i in range(idx.size - counts.sum()):
            counts[i % num_clients] += 1
        start = 0
        for u, n in enumerate(counts):
            parts[u].extend(int(s) for s in idx[start : start + n])
            start += n
    return [np.asarray(sorted(p), dtype=np.int64) for p in parts]


def partition_clients(pool, label_space, num_clients, seed, spec=None, dirichlet_alpha=None):
    """Per-client base (training labels) and novel (evaluation labels) pools."""
    per_label = spec.per_class if spec is not None else 0
    unknown = set(pool.classes()) - (label_space.base_labels | label_space.novel_labels)
    if unknown:
        raise UnknownLabel(f"labels {sorted(unknown)} are not in the label space")
    parts = partition_indices(pool.y, num_clients, seed, per_label, dirichlet_alpha)
    out = []
    for u, idx in enumerate(parts):
        local = pool.subset(idx)
        out.append(ClientDataset(u, local.restrict(label_space.base_labels),
                                 local.restrict(label_space.novel_labels)))
    return out


def make_fold(labels, novel_pair):
    """Novel = the pair, base = every other label."""
    if isinstance(novel_pair, str):
        if novel_pair not in FOLD_PRESETS:
            raise UnknownLabel(f"unknown fold preset {novel_pair!r}; choose from {sorted(FOLD_PRESETS)}")
        novel_pair = FOLD_PRESETS[novel_pair]
    if isinstance(labels, DatasetManifest):
        labels = labels.labels()
    labels = set(labels)
    a, b = novel_pair
    if a == b:
        raise PairNotDistinct(f"novel pair repeats {a!r}")
    for lab in (a, b):
        if lab not in labels:
            raise UnknownLabel(f"novel label {lab!r} is not in the dataset")
    return LabelSpace(labels - {a, b}, {a, b})


# ------------------------------------------------------------------ synthetic

@dataclass(frozen=True)
class SyntheticClassSpec:
    label: str
    f0_hz: float
    harmonics: int = 6
    attack_ms: float = 15.0
    decay_ms: float = 90.0
    noise_floor: float = 0.05
    f0_jitter: float = 0.03  # relative, uniform +-
    timing_jitter_ms: float = 40.0
    amplitude_jitter: float = 0.2
    bursts: int = 2

    def __post_init__(self):
        for name in ("f0_hz", "attack_ms", "decay_ms"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{self.label}: {name} must be positive")
        if self.harmonics < 1 or self.bursts < 1:
            raise ConfigError(f"{self.label}: harmonics and bursts must be >= 1")
        for name in ("noise_floor", "f0_jitter", "timing_jitter_ms", "amplitude_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{self.label}: {name} must be non-negative")


def default_class_specs(n_classes=8, base_f0=180.0, step=1.25, labels=COUGH_LABELS):
    if n_classes > len(labels):
        labels = tuple(labels) + tuple(f"class_{i}" for i in range(len(labels), n_classes))
    return [SyntheticClassSpec(labels[k], base_f0 * step**k) for k in range(n_classes)]


def check_separation(specs):
    ordered = sorted(specs, key=lambda s: s.f0_hz)
    for lo, hi in zip(ordered, ordered[1:]):
        if hi.f0_hz < lo.f0_hz * (1 + MIN_F0_SEPARATION):
            raise SpecOverlap(
                f"{lo.label!r} ({lo.f0_hz:g} Hz) and {hi.label!r} ({hi.f0_hz:g} Hz) "
                f"are closer than {MIN_F0_SEPARATION:.0%}"
            )


def synthesize_clip(spec, duration_s, sample_rate, rng, source_id=""):
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = spec.f0_hz * (1 + rng.uniform(-spec.f0_jitter, spec.f0_jitter))
    nyquist = sample_rate / 2
    signal = np.zeros(n)
    slot = duration_s / spec.bursts
    for b in range(spec.bursts):
        onset = b * slot + slot * 0.2 + rng.uniform(-1, 1) * spec.timing_jitter_ms / 1000
        onset = min(max(onset, 0.0), duration_s)
        local = t - onset
        attack, decay = spec.attack_ms / 1000, spec.decay_ms / 1000
        env = np.where(local < 0, 0.0,
                       np.where(local < attack, local / attack, np.exp(-(local - attack) / decay)))
        amp = 1 + rng.uniform(-spec.amplitude_jitter, spec.amplitude_jitter)
        tone = np.zeros(n)
        for h in range(1, spec.harmonics + 1):
            if h * f0 >= nyquist:
                break
            tone += np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h
        signal += amp * env * tone
    peak = np.max(np.abs(signal))
    if spec.noise_floor > 0:
        signal = signal + spec.noise_floor * peak * rng.standard_normal(n)
    signal *= 0.9 / np.max(np.abs(signal))
    return AudioClip(signal, sample_rate, label=spec.label, source_id=source_id)


@dataclass
class SyntheticDataset:
    manifest: DatasetManifest
    clips: list = field(repr=False)
    specs: list = field(repr=False)


def generate_synthetic(specs=None, per_class=60, duration_s=1.0, sample_rate=16000, seed=0,
                       out_dir=None):
    """Seeded harmonic-burst clips, one stream per (class, clip index).

    With ``out_dir`` the clips are also written as WAV next to a manifest.tsv.
    """
    specs = list(specs) if specs is not None else default_class_specs()
    if len(specs) < 2:
        raise ConfigError("need at least two synthetic classes")
    if len({s.label for s in specs}) != len(specs):
        raise ConfigError("synthetic class labels must be unique")
    check_separation(specs)
    clips, entries = [], []
    for ci, spec in enumerate(specs):
        for i in range(per_class):
            clip_id = f"c{ci}_{i:04d}"
            rng = rng_for(seed, "synthetic", spec.label, i)
            clip = synthesize_clip(spec, duration_s, sample_rate, rng, source_id=clip_id)
            clips.append(clip)
            path = f"synthetic://{clip_id}"
            if out_dir is not None:
                path = f"{clip_id}.wav"
                write_wav(Path(out_dir) / path, clip)
            entries.append(ManifestEntry(path, spec.label, duration_s * 1000, sample_rate))
    manifest = DatasetManifest(entries)
    if out_dir is not None:
        manifest.write(Path(out_dir) / "manifest.tsv")
    return SyntheticDataset(manifest, clips, specs)


def build_pool(clips, cfg=None, cache=None):
    return LabeledPool.from_matrices(extract_features(clips, cfg, cache))
