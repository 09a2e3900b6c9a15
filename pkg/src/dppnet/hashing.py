"""Deterministic hashes that address the shared candidate weight vector.

A dynamic layer of shape ``out_dim x in_dim`` never stores its weight matrix.
Each position ``(m, n)`` is mapped to one of ``num_candidates`` buckets by a
bucket hash, and to a sign in ``{+1, -1}`` by an independent sign hash.  Both
are built on the SplitMix64 finalizer so that every run, thread, and platform
produces bit-identical assignments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Shipped defaults; recorded in every checkpoint because the weight
# assignment is meaningless without them.
DEFAULT_SEED_BUCKET = 0x5EED0001
DEFAULT_SEED_SIGN = 0x5EED0002


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer of a 64-bit unsigned int; wraps modulo 2**64."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


_U = np.uint64


def _splitmix64_vec(x: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps like the scalar path masks
    x = x + _U(_GOLDEN)
    x = (x ^ (x >> _U(30))) * _U(_MIX1)
    x = (x ^ (x >> _U(27))) * _U(_MIX2)
    return x ^ (x >> _U(31))


@dataclass(frozen=True)
class HashSpec:
    """Dimensions and seeds that define an implicit dynamic weight matrix."""

    out_dim: int
    in_dim: int
    num_candidates: int
    seed_bucket: int = DEFAULT_SEED_BUCKET
    seed_sign: int = DEFAULT_SEED_SIGN

    def __post_init__(self):
        if min(self.out_dim, self.in_dim, self.num_candidates) < 1:
            raise ConfigError(
                f"hash dims must be >= 1, got out={self.out_dim} "
                f"in={self.in_dim} candidates={self.num_candidates}"
            )
        if not (0 <= self.seed_bucket <= _MASK64 and 0 <= self.seed_sign <= _MASK64):
            raise ConfigError("hash seeds must be unsigned 64-bit integers")
        if self.seed_bucket == self.seed_sign:
            raise ConfigError("bucket and sign seeds must differ")
        if self.out_dim >= 1 << 32 or self.in_dim >= 1 << 32:
            raise ConfigError("hash dims must fit in 32 bits")

    def _check(self, m: int, n: int):
        if not (0 <= m < self.out_dim and 0 <= n < self.in_dim):
            raise ConfigError(
                f"position ({m}, {n}) outside {self.out_dim} x {self.in_dim} grid"
            )


def bucket(m: int, n: int, spec: HashSpec) -> int:
    """Candidate index in [0, num_candidates) for weight position (m, n)."""
    spec._check(m, n)
    return splitmix64(((m << 32) | n) ^ spec.seed_bucket) % spec.num_candidates


def sign(m: int, n: int, spec: HashSpec) -> int:
    """Sign +1/-1 for weight position (m, n); independent of the bucket seed."""
    spec._check(m, n)
    return 1 if splitmix64(((m << 32) | n) ^ spec.seed_sign) & 1 == 0 else -1


def _keys_row(m: int, spec: HashSpec) -> np.ndarray:
    cols = np.arange(spec.in_dim, dtype=np.uint64)
    return (_U(m) << _U(32)) | cols


def bucket_row(m: int, spec: HashSpec) -> np.ndarray:
    """Vector of candidate indices for all positions (m, 0..in_dim)."""
    spec._check(m, 0)
    h = _splitmix64_vec(_keys_row(m, spec) ^ _U(spec.seed_bucket))
    return (h % _U(spec.num_candidates)).astype(np.int64)


def sign_row(m: int, spec: HashSpec) -> np.ndarray:
    """Vector of +1/-1 signs for all positions (m, 0..in_dim)."""
    spec._check(m, 0)
    h = _splitmix64_vec(_keys_row(m, spec) ^ _U(spec.seed_sign))
    return np.where(h & _U(1) == 0, 1, -1).astype(np.int8)


def bucket_grid(spec: HashSpec) -> np.ndarray:
    """Full out_dim x in_dim grid of candidate indices (diagnostics/oracles)."""
    return np.stack([bucket_row(m, spec) for m in range(spec.out_dim)])


def sign_grid(spec: HashSpec) -> np.ndarray:
    """Full out_dim x in_dim grid of signs (diagnostics/oracles)."""
    return np.stack([sign_row(m, spec) for m in range(spec.out_dim)])


def hash_stats(spec: HashSpec) -> dict:
    """Distribution report over the full position grid.

    Returns the exact bucket histogram, a chi-square statistic against the
    uniform expectation grid_size / num_candidates, and the mean sign.
    """
    loads = np.bincount(bucket_grid(spec).ravel(), minlength=spec.num_candidates)
    grid_size = spec.out_dim * spec.in_dim
    expected = grid_size / spec.num_candidates
    chi_square = float(((loads - expected) ** 2 / expected).sum())
    sign_mean = float(sign_grid(spec).astype(np.float64).mean())
    return {
        "out_dim": spec.out_dim,
        "in_dim": spec.in_dim,
        "num_candidates": spec.num_candidates,
        "seed_bucket": spec.seed_bucket,
        "seed_sign": spec.seed_sign,
        "grid_size": grid_size,
        "expected_load": expected,
        "bucket_loads": loads.tolist(),
        "min_load": int(loads.min()),
        "max_load": int(loads.max()),
        "empty_buckets": int((loads == 0).sum()),
        "chi_square": chi_square,
        "dof": spec.num_candidates - 1,
        "sign_mean": sign_mean,
    }
