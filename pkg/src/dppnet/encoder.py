"""Question encoder: word embedding, GRU recurrence, candidate projection.

The GRU follows the classic reset/update-gate form with no bias terms by
default; imported pre-trained encoders may carry biases.  Sequences are always
processed at their true length, batches hold equal-length questions only.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .errors import CheckpointError, ShapeError
from .tensor import ParamStore, activation, matmul

# Tests flip this on to assert gates stay strictly inside their open ranges;
# the closed-range sanity check below always runs.
STRICT_GATES = False


@dataclass
class GruParams:
    """The six GRU coefficient matrices (input H x E, recurrent H x H)."""

    w_r: np.ndarray
    w_z: np.ndarray
    w_h: np.ndarray
    u_r: np.ndarray
    u_z: np.ndarray
    u_h: np.ndarray
    b_r: np.ndarray | None = None
    b_z: np.ndarray | None = None
    b_h: np.ndarray | None = None

    def __post_init__(self):
        h, e = self.w_r.shape
        for name in ("w_z", "w_h"):
            if getattr(self, name).shape != (h, e):
                raise ShapeError(f"gru {name} shape {getattr(self, name).shape} != ({h}, {e})")
        for name in ("u_r", "u_z", "u_h"):
            if getattr(self, name).shape != (h, h):
                raise ShapeError(f"gru {name} shape {getattr(self, name).shape} != ({h}, {h})")
        biases = [self.b_r, self.b_z, self.b_h]
        if any(b is not None for b in biases):
            if not all(b is not None and b.shape == (h,) for b in biases):
                raise ShapeError("gru biases must be all present with shape (H,) or all absent")

    @property
    def hidden_dim(self) -> int:
        return self.w_r.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_r.shape[1]

    @property
    def has_bias(self) -> bool:
        return self.b_r is not None

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str = "gru") -> "GruParams":
        get = lambda k: store[f"{prefix}.{k}"]
        bias = f"{prefix}.b_r" in store
        return cls(
            w_r=get("w_r"), w_z=get("w_z"), w_h=get("w_h"),
            u_r=get("u_r"), u_z=get("u_z"), u_h=get("u_h"),
            b_r=get("b_r") if bias else None,
            b_z=get("b_z") if bias else None,
            b_h=get("b_h") if bias else None,
        )


@dataclass
class GruStepCache:
    """Per-step values needed by backward."""

    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    h_bar: np.ndarray


def embed(tokens: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Look up embedding rows for a batch of equal-length token id sequences."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] < 1:
        raise ShapeError(f"token batch must be B x T with T >= 1, got {tokens.shape}")
    if tokens.min() < 0 or tokens.max() >= table.shape[0]:
        raise ShapeError(
            f"token id out of range for vocabulary of {table.shape[0]} "
            f"(ids span {tokens.min()}..{tokens.max()})"
        )
    return table[tokens]


def embed_backward(tokens: np.ndarray, d_vectors: np.ndarray, vocab_size: int) -> np.ndarray:
    """Scatter sequence gradients back into the rows that were looked up."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    d_table = np.zeros((vocab_size, d_vectors.shape[-1]), dtype=d_vectors.dtype)
    np.add.at(d_table, tokens.ravel(), d_vectors.reshape(-1, d_vectors.shape[-1]))
    return d_table


def _check_gates(r, z, h_bar):
    if not (np.all(r >= 0.0) and np.all(r <= 1.0) and np.all(z >= 0.0) and np.all(z <= 1.0)):
        raise FloatingPointError("gru gate left [0, 1]; inputs were non-finite")
    if not (np.all(h_bar >= -1.0) and np.all(h_bar <= 1.0)):
        raise FloatingPointError("gru candidate activation left [-1, 1]")
    if STRICT_GATES:
        assert np.all(r > 0.0) and np.all(r < 1.0), "reset gate saturated"
        assert np.all(z > 0.0) and np.all(z < 1.0), "update gate saturated"
        assert np.all(np.abs(h_bar) < 1.0), "candidate activation saturated"


def gru_step(x_t: np.ndarray, h_prev: np.ndarray, params: GruParams):
    """One recurrence step; returns (h_t, cache).

    Reset and update gates are sigmoids of affine maps of (x_t, h_prev); the
    candidate activation tanh-mixes x_t with the reset-scaled previous state;
    the new state is the update-gated convex combination.
    """
    if x_t.shape[1] != params.input_dim:
        raise ShapeError(f"gru input dim {x_t.shape[1]} != {params.input_dim}")
    if h_prev.shape != (x_t.shape[0], params.hidden_dim):
        raise ShapeError(f"gru state shape {h_prev.shape} != ({x_t.shape[0]}, {params.hidden_dim})")
    a_r = matmul(x_t, params.w_r.T) + matmul(h_prev, params.u_r.T)
    a_z = matmul(x_t, params.w_z.T) + matmul(h_prev, params.u_z.T)
    if params.has_bias:
        a_r = a_r + params.b_r
        a_z = a_z + params.b_z
    r = activation("sigmoid", a_r)
    z = activation("sigmoid", a_z)
    a_h = matmul(x_t, params.w_h.T) + matmul(r * h_prev, params.u_h.T)
    if params.has_bias:
        a_h = a_h + params.b_h
    h_bar = activation("tanh", a_h)
    _check_gates(r, z, h_bar)
    h_t = (1.0 - z) * h_prev + z * h_bar
    return h_t, GruStepCache(x=x_t, h_prev=h_prev, r=r, z=z, h_bar=h_bar)


def gru_step_backward(cache: GruStepCache, params: GruParams, dh: np.ndarray, acc: dict):
    """Backward through one step; accumulates parameter grads into acc.

    Returns (dx_t, dh_prev).
    """
    x, h_prev, r, z, h_bar = cache.x, cache.h_prev, cache.r, cache.z, cache.h_bar
    dz = dh * (h_bar - h_prev)
    dh_bar = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dh_bar * (1.0 - h_bar * h_bar)
    rh = r * h_prev
    acc["w_h"] += matmul(da_h.T, x)
    acc["u_h"] += matmul(da_h.T, rh)
    dx = matmul(da_h, params.w_h)
    drh = matmul(da_h, params.u_h)
    dr = drh * h_prev
    dh_prev += drh * r

    da_r = dr * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    acc["w_r"] += matmul(da_r.T, x)
    acc["u_r"] += matmul(da_r.T, h_prev)
    acc["w_z"] += matmul(da_z.T, x)
    acc["u_z"] += matmul(da_z.T, h_prev)
    dx += matmul(da_r, params.w_r) + matmul(da_z, params.w_z)
    dh_prev += matmul(da_r, params.u_r) + matmul(da_z, params.u_z)
    if params.has_bias:
        acc["b_r"] += da_r.sum(axis=0)
        acc["b_z"] += da_z.sum(axis=0)
        acc["b_h"] += da_h.sum(axis=0)
    return dx, dh_prev


def gru_encode(x_seq: np.ndarray, params: GruParams, h0: np.ndarray | None = None):
    """Fold gru_step over a B x T x E sequence; returns (h_last, caches)."""
    if x_seq.ndim != 3 or x_seq.shape[1] < 1:
        raise ShapeError(f"sequence must be B x T x E with T >= 1, got {x_seq.shape}")
    b = x_seq.shape[0]
    h = np.zeros((b, params.hidden_dim), dtype=x_seq.dtype) if h0 is None else h0
    caches = []
    for t in range(x_seq.shape[1]):
        h, cache = gru_step(x_seq[:, t, :], h, params)
        caches.append(cache)
    return h, caches


def gru_encode_backward(caches, params: GruParams, dh_last: np.ndarray):
    """Backward through time; returns (dx_seq, param grads dict)."""
    acc = {k: np.zeros_like(getattr(params, k)) for k in ("w_r", "w_z", "w_h", "u_r", "u_z", "u_h")}
    if params.has_bias:
        for k in ("b_r", "b_z", "b_h"):
            acc[k] = np.zeros_like(getattr(params, k))
    dh = dh_last
    dx_seq = np.empty(
        (dh_last.shape[0], len(caches), params.input_dim), dtype=dh_last.dtype
    )
    for t in range(len(caches) - 1, -1, -1):
        dx_seq[:, t, :], dh = gru_step_backward(caches[t], params, dh, acc)
    return dx_seq, acc


def predict_candidates(h_last: np.ndarray, w_proj: np.ndarray) -> np.ndarray:
    """Project the question embedding to the candidate weight vector (no bias)."""
    return matmul(h_last, w_proj.T)


def predict_candidates_backward(h_last: np.ndarray, w_proj: np.ndarray, d_candidates: np.ndarray):
    """Returns (dh_last, dw_proj)."""
    return matmul(d_candidates, w_proj), matmul(d_candidates.T, h_last)


ENCODER_PARAM_NAMES = ("embed.table", "gru.w_r", "gru.w_z", "gru.w_h", "gru.u_r", "gru.u_z", "gru.u_h")


def load_pretrained(directory, required: bool = False):
    """Import embedding + GRU weights from a params checkpoint directory.

    Returns (embedding table, GruParams, vocab dict or None).  Dimensions are
    adopted from the file; internal inconsistencies are rejected with
    specifics.
    """
    directory = Path(directory)
    if not (directory / checkpoint.MANIFEST_NAME).exists():
        if required:
            raise CheckpointError(f"pretrained encoder required but not found at {directory}")
        raise CheckpointError(f"no encoder checkpoint at {directory}")
    store = checkpoint.load_params(directory)
    missing = [n for n in ENCODER_PARAM_NAMES if n not in store]
    if missing:
        raise CheckpointError(f"encoder checkpoint {directory} missing tensors: {missing}")
    table = store["embed.table"]
    params = GruParams.from_store(store, "gru")
    if params.input_dim != table.shape[1]:
        raise CheckpointError(
            f"encoder checkpoint inconsistent: embedding dim {table.shape[1]} "
            f"but gru input dim {params.input_dim}"
        )
    vocab = None
    vocab_path = directory / "vocab.json"
    if vocab_path.exists():
        import json

        vocab = json.loads(vocab_path.read_text())
    return table, params, vocab
