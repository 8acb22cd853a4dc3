"""Audio clips, MFCC extraction, noise mixing and the on-disk feature block.

Pipeline: pre-emphasis -> framing -> periodic Hann window -> real FFT ->
power spectrum -> HTK-mel triangular filterbank (0 Hz .. Nyquist) -> log
with a floor clamp -> orthonormal DCT-II -> first ``n_mfcc`` coefficients.
"""

import dataclasses
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft
import scipy.io.wavfile

from .errors import (
    BadFeatureBlock,
    ClipTooShort,
    ConfigError,
    DataError,
    NoiseTooShort,
    NonFiniteInput,
    RateMismatch,
)


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    label: Optional[str] = None
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        self.sample_rate = int(self.sample_rate)
        if self.samples.size == 0:
            raise DataError(f"clip {self.source_id!r} has no samples")
        if self.sample_rate <= 0:
            raise DataError(f"clip {self.source_id!r}: sample_rate must be positive")

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate

    def check_finite(self):
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteInput(f"clip {self.source_id!r} contains NaN or Inf samples")


@dataclass(frozen=True)
class MfccConfig:
    n_mfcc: int = 40
    window_ms: float = 128.0
    hop_ms: float = 64.0
    n_mels: int = 40
    fft_size: Optional[int] = None  # None -> next power of two >= window
    preemphasis: float = 0.97
    log_floor: float = 1e-10
    normalize: bool = False  # per-clip mean/variance normalization

    def __post_init__(self):
        if self.n_mfcc < 1 or self.n_mels < 1:
            raise ConfigError("n_mfcc and n_mels must be positive")
        if self.n_mfcc > self.n_mels:
            raise ConfigError(f"n_mfcc={self.n_mfcc} exceeds n_mels={self.n_mels}")
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window_ms and hop_ms must be positive")
        if not 0 <= self.preemphasis < 1:
            raise ConfigError("preemphasis must lie in [0, 1)")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.fft_size is not None and (self.fft_size < 1 or self.fft_size & (self.fft_size - 1)):
            raise ConfigError(f"fft_size={self.fft_size} is not a power of two")

    def window_samples(self, sample_rate):
        return int(np.floor(self.window_ms * sample_rate / 1000))

    def hop_samples(self, sample_rate):
        return int(np.floor(self.hop_ms * sample_rate / 1000))

    def resolved_fft_size(self, sample_rate):
        win = self.window_samples(sample_rate)
        if self.fft_size is None:
            return 1 << max(0, (win - 1).bit_length())
        if self.fft_size < win:
            raise ConfigError(f"fft_size={self.fft_size} shorter than the {win}-sample window")
        return self.fft_size

    def fingerprint(self):
        canon = repr(sorted(dataclasses.asdict(self).items()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class MfccMatrix:
    values: np.ndarray  # (frames, n_mfcc) float32
    config_fingerprint: str = ""
    source_id: str = ""
    label: Optional[str] = field(default=None, compare=False)

    @property
    def frame_count(self):
        return self.values.shape[0]

    @property
    def n_coeffs(self):
        return self.values.shape[1]

    def as_image(self):
        """(coeffs, frames) layout the embedding networks consume."""
        return self.values.T


def frame_count(n_samples, win, hop):
    return (n_samples - win) // hop + 1


# ---------------------------------------------------------------- filterbank

def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, fft_size, sample_rate):
    """(n_mels, fft_size//2 + 1) triangular weights, peak 1 at each centre."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_frequencies(n_mels, sample_rate):
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    return edges[1:-1]


# ------------------------------------------------------------------ pipeline

def frame_signal(samples, win, hop):
    n = frame_count(samples.size, win, hop)
    view = np.lib.stride_tricks.sliding_window_view(samples, win)
    return view[: (n - 1) * hop + 1 : hop]


def preemphasize(samples, coeff):
    if coeff == 0:
        return samples.copy()
    out = np.empty_like(samples)
    out[0] = samples[0]
    out[1:] = samples[1:] - coeff * samples[:-1]
    return out


def power_spectrum(frames, fft_size):
    """|rfft(frame, fft_size)|^2 for each row of ``frames``."""
    spec = scipy.fft.rfft(frames, n=fft_size, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def hann(win):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(win) / win)


def frame_power_spectra(clip, cfg):
    """Windowed power spectra ``(frames, fft_size//2 + 1)`` before the mel stage."""
    sr = clip.sample_rate
    win, hop = cfg.window_samples(sr), cfg.hop_samples(sr)
    if win < 1 or hop < 1:
        raise ConfigError(f"window/hop shorter than one sample at {sr} Hz")
    clip.check_finite()
    if clip.samples.size < win:
        raise ClipTooShort(
            f"clip {clip.source_id!r} has {clip.samples.size} samples, window needs {win}"
        )
    emphasized = preemphasize(clip.samples, cfg.preemphasis)
    frames = frame_signal(emphasized, win, hop) * hann(win)
    return power_spectrum(frames, cfg.resolved_fft_size(sr))


def log_mel_energies(clip, cfg):
    spectra = frame_power_spectra(clip, cfg)
    fft_size = cfg.resolved_fft_size(clip.sample_rate)
    fb = mel_filterbank(cfg.n_mels, fft_size, clip.sample_rate)
    return np.log(np.maximum(spectra @ fb.T, cfg.log_floor))


def extract_mfcc(clip, cfg=None):
    """MFCC matrix of shape ``(frames, n_mfcc)`` for one clip."""
    cfg = cfg or MfccConfig()
    logmel = log_mel_energies(clip, cfg)
    ceps = scipy.fft.dct(logmel, type=2, norm="ortho", axis=-1)[:, : cfg.n_mfcc]
    if cfg.normalize:
        ceps = (ceps - ceps.mean(axis=0)) / (ceps.std(axis=0) + 1e-8)
    return MfccMatrix(
        values=np.ascontiguousarray(ceps, dtype=np.float32),
        config_fingerprint=cfg.fingerprint(),
        source_id=clip.source_id,
        label=clip.label,
    )


# --------------------------------------------------------------- augmentation

def mix_noise(clip, noise, ratio, seed):
    """``clip + ratio * noise[offset : offset + len(clip)]`` clamped to [-1, 1]."""
    if clip.sample_rate != noise.sample_rate:
        raise RateMismatch(f"clip at {clip.sample_rate} Hz, noise at {noise.sample_rate} Hz")
    if noise.samples.size < clip.samples.size:
        raise NoiseTooShort(
            f"noise has {noise.samples.size} samples, clip needs {clip.samples.size}"
        )
    if not 0 < ratio <= 1:
        raise DataError(f"noise ratio must lie in (0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, noise.samples.size - clip.samples.size + 1))
    segment = noise.samples[offset : offset + clip.samples.size]
    mixed = np.clip(clip.samples + ratio * segment, -1.0, 1.0)
    return AudioClip(mixed, clip.sample_rate, label=clip.label, source_id=clip.source_id)


# ---------------------------------------------------------------------- WAV

def read_wav(path, label=None, source_id=None):
    """Load 16-bit PCM or 32-bit float WAV; stereo is averaged to mono."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, rate, label=label, source_id=source_id or str(path))


def write_wav(path, clip, pcm16=False):
    if pcm16:
        data = np.round(np.clip(clip.samples, -1, 1) * 32767).astype(np.int16)
    else:
        data = clip.samples.astype(np.float32)
    scipy.io.wavfile.write(path, clip.sample_rate, data)


# ------------------------------------------------------------ feature blocks

BLOCK_MAGIC = b"MFCC"
BLOCK_VERSION = 1
_BLOCK_HEADER = struct.Struct("<4sH2xII")  # magic, version, pad, frames, coeffs = 16 bytes


def mfcc_to_bytes(matrix):
    frames, coeffs = matrix.values.shape
    body = np.ascontiguousarray(matrix.values, dtype="<f4").tobytes()
    return _BLOCK_HEADER.pack(BLOCK_MAGIC, BLOCK_VERSION, frames, coeffs) + body


def mfcc_from_bytes(blob, config_fingerprint="", source_id=""):
    if len(blob) < _BLOCK_HEADER.size:
        raise BadFeatureBlock("feature block shorter than its header")
    magic, version, frames, coeffs = _BLOCK_HEADER.unpack_from(blob)
    if magic != BLOCK_MAGIC:
        raise BadFeatureBlock(f"bad feature-block magic {magic!r}")
    if version != BLOCK_VERSION:
        raise BadFeatureBlock(f"unsupported feature-block version {version}")
    expected = _BLOCK_HEADER.size + 4 * frames * coeffs
    if len(blob) != expected:
        raise BadFeatureBlock(f"feature block is {len(blob)} bytes, header implies {expected}")
    values = np.frombuffer(blob, dtype="<f4", offset=_BLOCK_HEADER.size).reshape(frames, coeffs)
    return MfccMatrix(values.astype(np.float32), config_fingerprint, source_id)


def save_mfcc(path, matrix):
    with open(path, "wb") as fh:
        fh.write(mfcc_to_bytes(matrix))


def load_mfcc(path, config_fingerprint="", source_id=""):
    with open(path, "rb") as fh:
        return mfcc_from_bytes(fh.read(), config_fingerprint, source_id)
