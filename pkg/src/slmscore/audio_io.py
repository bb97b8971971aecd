"""Load, validate and resample RIFF/WAVE audio.

Only uncompressed containers are supported: PCM 16-bit and IEEE float-32.
Everything downstream works on mono float waveforms in [-1, 1]; multichannel
input is downmixed by per-sample arithmetic mean. Amplitude is never
renormalized on load (peak normalization is an explicit opt-in) and no
silence trimming is performed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyAudio, InvariantViolation, UnsupportedFormat

CANONICAL_RATE = 16000

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples in [-1, 1] plus sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size == 0:
            raise InvariantViolation("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise InvariantViolation("waveform contains non-finite samples")
        peak = float(np.max(np.abs(samples)))
        if peak > 1.0:
            raise InvariantViolation(
                f"waveform amplitude {peak:.6g} exceeds [-1, 1]; "
                "peak-normalize upstream or pass peak_normalize=True on load"
            )
        if int(self.sample_rate) <= 0:
            raise InvariantViolation("sample_rate must be > 0")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


def _read_chunks(raw: bytes, path: Path):
    """Yield (chunk_id, payload) for every top-level RIFF chunk."""
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormat(f"{path}: not a RIFF/WAVE container")
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        payload = raw[pos + 8 : pos + 8 + size]
        yield cid, payload
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def load_wav(path, peak_normalize: bool = False) -> Waveform:
    """Load a PCM16 or float32 WAV file as a mono Waveform.

    16-bit samples are scaled by 1/32768; multichannel audio is downmixed by
    the per-sample mean of channels. Raises UnsupportedFormat for any other
    codec (e.g. mu-law) and EmptyAudio for zero-frame files.
    """
    path = Path(path)
    raw = path.read_bytes()  # FileNotFoundError propagates as-is

    fmt = None
    data = None
    for cid, payload in _read_chunks(raw, path):
        if cid == b"fmt " and fmt is None:
            if len(payload) < 16:
                raise UnsupportedFormat(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", payload, 0)
        elif cid == b"data" and data is None:
            data = payload
    if fmt is None or data is None:
        raise UnsupportedFormat(f"{path}: missing fmt or data chunk")

    format_code, n_channels, sample_rate, _, _, bits = fmt
    if n_channels < 1:
        raise UnsupportedFormat(f"{path}: invalid channel count {n_channels}")

    if format_code == _WAVE_FORMAT_PCM and bits == 16:
        n = len(data) // (2 * n_channels)
        if n == 0:
            raise EmptyAudio(f"{path}: zero audio frames")
        ints = np.frombuffer(data[: n * 2 * n_channels], dtype="<i2")
        frames = ints.reshape(n, n_channels).astype(np.int64)
        # integer channel sum keeps the downmix exact before the single divide
        samples = frames.sum(axis=1) / (32768.0 * n_channels)
    elif format_code == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        n = len(data) // (4 * n_channels)
        if n == 0:
            raise EmptyAudio(f"{path}: zero audio frames")
        floats = np.frombuffer(data[: n * 4 * n_channels], dtype="<f4")
        frames = floats.reshape(n, n_channels).astype(np.float64)
        samples = frames.sum(axis=1) / n_channels
    else:
        raise UnsupportedFormat(
            f"{path}: unsupported format code {format_code} / {bits}-bit "
            "(only PCM16 and IEEE float32 are handled)"
        )

    if peak_normalize:
        peak = float(np.max(np.abs(samples)))
        if peak > 0:
            samples = samples / peak
    return Waveform(samples=samples, sample_rate=sample_rate)


def write_wav(path, w: Waveform, fmt: str = "pcm16") -> None:
    """Write a mono Waveform as PCM16 or float32 WAV (plumbing for demos/tests)."""
    if fmt == "pcm16":
        ints = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        code, bits = _WAVE_FORMAT_PCM, 16
    elif fmt == "float32":
        payload = w.samples.astype("<f4").tobytes()
        code, bits = _WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown wav format {fmt!r}")
    block = bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        code,
        1,
        w.sample_rate,
        w.sample_rate * block,
        block,
        bits,
        b"data",
        len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample_linear(w: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling with last-sample hold past the end.

    Output length is round(len * target/source). Identical rates return the
    input unchanged (bit-exact).
    """
    if target_rate <= 0:
        raise InvariantViolation("target_rate must be > 0")
    if target_rate == w.sample_rate:
        return w
    n_out = int(round(w.samples.size * target_rate / w.sample_rate))
    if n_out < 1:
        n_out = 1
    positions = np.arange(n_out) * (w.sample_rate / target_rate)
    resampled = np.interp(positions, np.arange(w.samples.size), w.samples)
    return Waveform(samples=resampled, sample_rate=target_rate)
