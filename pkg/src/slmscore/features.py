"""Continuous frame features for the quantizer.

The built-in encoder is a 40-bin log-mel filterbank over Hann-windowed STFT
power, hopping every 20 ms so one frame maps to one token downstream.
Externally extracted features (any dimension) can be imported through the
``SLMF`` binary format; both paths produce the same FeatureSequence type and
neither applies mean/variance normalization (the quantizer owns optional
standardization).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import Waveform
from .errors import BadMagic, DimensionMismatch, InvariantViolation, TooShort, TruncatedFile

FEATURE_MAGIC = b"SLMF"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class FeatureSequence:
    """T x D matrix of frame features with hop size and provenance tag."""

    frames: np.ndarray
    frame_hop: float = 0.020
    source_tag: str = "logmel40"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise InvariantViolation("frames must be a T x D matrix with T, D >= 1")
        if not np.all(np.isfinite(frames)):
            raise InvariantViolation("frames contain non-finite values")
        if self.frame_hop <= 0:
            raise InvariantViolation("frame_hop must be > 0")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class LogMelConfig:
    n_mels: int = 40
    window: float = 0.025
    hop: float = 0.020
    fft_size: int = 512
    mel_low: float = 20.0
    mel_high: float = 7600.0
    floor: float = 1e-10

    def __post_init__(self):
        if self.n_mels < 1:
            raise InvariantViolation("n_mels must be >= 1")
        if not (0 < self.mel_low < self.mel_high):
            raise InvariantViolation("need 0 < mel_low < mel_high")
        if self.hop > self.window:
            raise InvariantViolation("hop must be <= window")
        if self.floor <= 0:
            raise InvariantViolation("floor must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: LogMelConfig) -> np.ndarray:
    """Center frequency in Hz of each triangular mel filter."""
    edges = np.linspace(hz_to_mel(cfg.mel_low), hz_to_mel(cfg.mel_high), cfg.n_mels + 2)
    return mel_to_hz(edges)[1:-1]


def _mel_filterbank(cfg: LogMelConfig, sample_rate: int) -> np.ndarray:
    """(n_mels, fft_size//2 + 1) triangular filters sampled at FFT bin centers."""
    if cfg.mel_high > sample_rate / 2:
        raise InvariantViolation(
            f"mel_high {cfg.mel_high} Hz exceeds Nyquist {sample_rate / 2} Hz"
        )
    mel_pts = np.linspace(hz_to_mel(cfg.mel_low), hz_to_mel(cfg.mel_high), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bin_freqs = np.fft.rfftfreq(cfg.fft_size, d=1.0 / sample_rate)
    fb = np.zeros((cfg.n_mels, bin_freqs.size))
    for m in range(cfg.n_mels):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def extract_logmel(w: Waveform, cfg: LogMelConfig = LogMelConfig()) -> FeatureSequence:
    """Log mel-filterbank energies of Hann-windowed STFT frames.

    Frames lie fully inside the signal: T = 1 + floor((t - win) / hop) with
    win/hop in samples. Output values are log(energy + floor), so a silent
    input gives log(floor) in every bin.
    """
    win = int(round(cfg.window * w.sample_rate))
    hop = int(round(cfg.hop * w.sample_rate))
    if w.samples.size < win:
        raise TooShort(
            f"waveform of {w.samples.size} samples is shorter than one "
            f"{win}-sample window"
        )
    if cfg.fft_size < win:
        raise InvariantViolation(f"fft_size {cfg.fft_size} < window of {win} samples")

    n_frames = 1 + (w.samples.size - win) // hop
    starts = np.arange(n_frames) * hop
    segments = w.samples[starts[:, None] + np.arange(win)[None, :]]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)  # periodic
    spectrum = np.fft.rfft(segments * hann, n=cfg.fft_size, axis=1)
    power = np.abs(spectrum) ** 2
    energies = power @ _mel_filterbank(cfg, w.sample_rate).T
    return FeatureSequence(
        frames=np.log(energies + cfg.floor),
        frame_hop=cfg.hop,
        source_tag=f"logmel{cfg.n_mels}",
    )


def write_features(fs: FeatureSequence, path) -> None:
    """Serialize frames as SLMF: magic, u32 version, u32 T, u32 D, T*D float32 LE."""
    header = struct.pack("<4sIII", FEATURE_MAGIC, FEATURE_VERSION, fs.num_frames, fs.dim)
    Path(path).write_bytes(header + fs.frames.astype("<f4").tobytes())


def read_features(fs_path, frame_hop: float = 0.020, source_tag: str | None = None) -> FeatureSequence:
    """Read an SLMF file back into a FeatureSequence (frames bit-exact at f32).

    Hop and provenance are not stored in the file; callers importing external
    features can override the defaults.
    """
    path = Path(fs_path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != FEATURE_MAGIC:
        raise BadMagic(f"{path}: expected magic {FEATURE_MAGIC!r}")
    if len(raw) < 16:
        raise TruncatedFile(f"{path}: header truncated")
    version, n_frames, dim = struct.unpack_from("<III", raw, 4)
    if version != FEATURE_VERSION:
        raise BadMagic(f"{path}: unsupported SLMF version {version}")
    expected = 16 + 4 * n_frames * dim
    if len(raw) < expected:
        raise TruncatedFile(
            f"{path}: header declares {n_frames}x{dim} floats but payload has "
            f"only {(len(raw) - 16) // 4}"
        )
    if len(raw) > expected:
        raise DimensionMismatch(
            f"{path}: {len(raw) - expected} trailing bytes beyond declared {n_frames}x{dim}"
        )
    frames = np.frombuffer(raw, dtype="<f4", count=n_frames * dim, offset=16)
    return FeatureSequence(
        frames=frames.reshape(n_frames, dim),
        frame_hop=frame_hop,
        source_tag=source_tag if source_tag is not None else f"external:{path.name}",
    )
