"""K-means codebook training and nearest-centroid assignment.

The codebook is the quantizer half of the tokenizer: V centroids over frame
features, squared Euclidean distance, ties broken toward the lowest centroid
index. Training is Lloyd's algorithm with k-means++ seeding, deterministic
for a given seed, with empty clusters repaired by moving them onto the point
currently farthest from its assigned centroid (so the vocabulary size never
shrinks).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    InvariantViolation,
    NotEnoughPoints,
    TruncatedFile,
)
from .features import FeatureSequence

CODEBOOK_MAGIC = b"SLMC"
CODEBOOK_VERSION = 1

# frames handled per chunk in assign(); keeps the T x V x D buffer modest
_ASSIGN_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class Codebook:
    """V x D float32 centroids, optionally with per-dimension standardization.

    ``standardize`` is a (means, stds) pair applied to frames before distance
    computation; it is stored inside the codebook so scoring-time behavior is
    self-describing.
    """

    centroids: np.ndarray
    standardize: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        centroids = np.ascontiguousarray(self.centroids, dtype=np.float32)
        object.__setattr__(self, "centroids", centroids)
        if centroids.ndim != 2 or centroids.shape[0] < 1 or centroids.shape[1] < 1:
            raise InvariantViolation("centroids must be a V x D matrix with V >= 1")
        if not np.all(np.isfinite(centroids)):
            raise InvariantViolation("centroids contain non-finite values")
        if self.standardize is not None:
            means = np.ascontiguousarray(self.standardize[0], dtype=np.float32)
            stds = np.ascontiguousarray(self.standardize[1], dtype=np.float32)
            if means.shape != (self.dim,) or stds.shape != (self.dim,):
                raise DimensionMismatch("standardize vectors must have length D")
            if np.any(stds <= 0):
                raise InvariantViolation("standardize stds must be > 0")
            object.__setattr__(self, "standardize", (means, stds))

    @property
    def vocab_size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass(frozen=True)
class KMeansConfig:
    max_iters: int = 100
    rel_tol: float = 1e-6
    seed: int = 0
    n_init: int = 3

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvariantViolation("max_iters must be >= 1")
        if self.rel_tol < 0:
            raise InvariantViolation("rel_tol must be >= 0")
        if self.n_init < 1:
            raise InvariantViolation("n_init must be >= 1")


def _pool_frames(corpus: Sequence[FeatureSequence]) -> np.ndarray:
    if not corpus:
        raise NotEnoughPoints("empty feature corpus")
    dim = corpus[0].dim
    for fs in corpus:
        if fs.dim != dim:
            raise DimensionMismatch(f"feature dims disagree: {fs.dim} vs {dim}")
    return np.concatenate([fs.frames for fs in corpus], axis=0)


def _nearest(points: np.ndarray, centroids: np.ndarray):
    """Labels and squared distances to the nearest centroid, chunked.

    Distances are explicit sums of squared differences in float64 so results
    match a brute-force scan bit-for-bit (ties resolve to the lowest index).
    """
    n, dim = points.shape
    chunk = max(1, _ASSIGN_CHUNK_ELEMS // max(1, centroids.shape[0] * dim))
    labels = np.empty(n, dtype=np.int64)
    dists = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        block = points[start : start + chunk]
        d2 = np.sum((block[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        labels[start : start + chunk] = np.argmin(d2, axis=1)
        dists[start : start + chunk] = d2[np.arange(block.shape[0]), labels[start : start + chunk]]
    return labels, dists


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared-distance weighting."""
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all mass on chosen points already
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, k: int, cfg: KMeansConfig, rng: np.random.Generator):
    centroids = _kmeanspp_init(points, k, rng)
    trace = []
    prev = None
    for _ in range(cfg.max_iters):
        labels, d2 = _nearest(points, centroids)
        inertia = float(d2.sum())
        trace.append(inertia)
        if prev is not None and (prev - inertia) < cfg.rel_tol * max(prev, 1e-300):
            break
        prev = inertia

        sums = np.zeros((k, points.shape[1]), dtype=np.float64)
        np.add.at(sums, labels, points)
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        nonempty = counts > 0
        centroids = centroids.copy()
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if empty.size:
            # pull each empty cluster onto the currently worst-served point
            order = np.argsort(-d2, kind="stable")
            taken = 0
            for cluster in empty:
                centroids[cluster] = points[order[taken]]
                taken += 1
    return centroids, trace


def fit_kmeans(
    corpus: Sequence[FeatureSequence],
    vocab_size: int,
    cfg: KMeansConfig = KMeansConfig(),
    standardize: bool = False,
    max_frames: Optional[int] = None,
) -> tuple[Codebook, list[float]]:
    """Train a codebook on the pooled frames of a feature corpus.

    Runs ``cfg.n_init`` restarts (restart r uses seed ``cfg.seed + r``) and
    keeps the one with the lowest final inertia. Returns the codebook and the
    winning run's per-iteration inertia trace, which is monotonically
    non-increasing by the Lloyd property.

    ``max_frames`` caps the pooled training set by seeded subsampling without
    replacement (original frame order preserved).
    """
    if vocab_size < 1:
        raise InvariantViolation("vocab_size must be >= 1")
    points = _pool_frames(corpus).astype(np.float64)

    if max_frames is not None and points.shape[0] > max_frames:
        picker = np.random.default_rng(cfg.seed)
        keep = np.sort(picker.choice(points.shape[0], size=max_frames, replace=False))
        points = points[keep]

    if points.shape[0] < vocab_size:
        raise NotEnoughPoints(
            f"{points.shape[0]} frames < requested vocabulary {vocab_size}"
        )

    stand = None
    if standardize:
        means = points.mean(axis=0)
        stds = points.std(axis=0)
        stds[stds <= 0] = 1.0  # constant dimensions carry no information
        points = (points - means) / stds
        stand = (means, stds)

    best = None
    for restart in range(cfg.n_init):
        rng = np.random.default_rng(cfg.seed + restart)
        centroids, trace = _lloyd(points, vocab_size, cfg, rng)
        if best is None or trace[-1] < best[1][-1]:
            best = (centroids, trace)

    centroids, trace = best
    return Codebook(centroids=centroids, standardize=stand), trace


def assign(fs: FeatureSequence, cb: Codebook) -> np.ndarray:
    """Token ids of each frame: argmin over squared Euclidean distance.

    Returns an int array of length T. Ties go to the lowest centroid index.
    """
    if fs.dim != cb.dim:
        raise DimensionMismatch(f"features have D={fs.dim}, codebook D={cb.dim}")
    frames = fs.frames
    if cb.standardize is not None:
        means, stds = cb.standardize
        frames = (frames - means.astype(np.float64)) / stds.astype(np.float64)
    labels, _ = _nearest(frames, cb.centroids.astype(np.float64))
    return labels


def save_codebook(cb: Codebook, path) -> None:
    """SLMC format: magic, u32 version, u32 V, u32 D, u8 has_standardize,
    [D f32 means, D f32 stds,] then V*D f32 centroids row-major."""
    parts = [
        struct.pack(
            "<4sIIIB",
            CODEBOOK_MAGIC,
            CODEBOOK_VERSION,
            cb.vocab_size,
            cb.dim,
            1 if cb.standardize is not None else 0,
        )
    ]
    if cb.standardize is not None:
        means, stds = cb.standardize
        parts.append(means.astype("<f4").tobytes())
        parts.append(stds.astype("<f4").tobytes())
    parts.append(cb.centroids.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_codebook(path) -> Codebook:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != CODEBOOK_MAGIC:
        raise BadMagic(f"{path}: expected magic {CODEBOOK_MAGIC!r}")
    if len(raw) < 17:
        raise TruncatedFile(f"{path}: header truncated")
    version, vocab_size, dim, has_standardize = struct.unpack_from("<IIIB", raw, 4)
    if version != CODEBOOK_VERSION:
        raise BadMagic(f"{path}: unsupported SLMC version {version}")
    if vocab_size < 1 or dim < 1:
        raise InvariantViolation(f"{path}: header declares V={vocab_size}, D={dim}")
    offset = 17
    stand = None
    if has_standardize:
        if len(raw) < offset + 8 * dim:
            raise TruncatedFile(f"{path}: standardize vectors truncated")
        means = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset)
        stds = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset + 4 * dim)
        stand = (means, stds)
        offset += 8 * dim
    need = offset + 4 * vocab_size * dim
    if len(raw) < need:
        raise TruncatedFile(f"{path}: centroid payload truncated")
    centroids = np.frombuffer(raw, dtype="<f4", count=vocab_size * dim, offset=offset)
    return Codebook(centroids=centroids.reshape(vocab_size, dim), standardize=stand)
