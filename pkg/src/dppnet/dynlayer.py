"""The dynamic parameter layer.

Forward maps input features through a weight matrix that is never stored:
entry (m, n) is candidates[bucket(m, n)] * sign(m, n), where the candidate
vector comes from the question encoder.  Forward and backward stream over
output rows, so peak memory stays O(batch * (in + candidates)) no matter how
large out_dim * in_dim grows.  materialize_weights exists only as a test and
diagnostic oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .hashing import HashSpec, bucket_row, sign_row

MATERIALIZE_LIMIT = 1 << 20


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ShapeError(f"{what} must be a vector or batch, got shape {x.shape}")
    if x.shape[1] != width:
        raise ShapeError(f"{what} width {x.shape[1]} does not match layer width {width}")
    return x, single


def dyn_forward(features, candidates, bias: np.ndarray, spec: HashSpec) -> np.ndarray:
    """Apply the question-conditioned affine map: hashed weights, static bias."""
    x, single_x = _as_batch(features, spec.in_dim, "input features")
    p, single_p = _as_batch(candidates, spec.num_candidates, "candidate vector")
    if x.shape[0] != p.shape[0]:
        raise ShapeError(
            f"batch mismatch: {x.shape[0]} feature rows vs {p.shape[0]} candidate rows"
        )
    if bias.shape != (spec.out_dim,):
        raise ShapeError(f"bias shape {bias.shape} != ({spec.out_dim},)")
    out = np.empty((x.shape[0], spec.out_dim), dtype=x.dtype)
    for m in range(spec.out_dim):
        idx = bucket_row(m, spec)
        sg = sign_row(m, spec)
        out[:, m] = ((p[:, idx] * sg) * x).sum(axis=1) + bias[m]
    return out[0] if (single_x and single_p) else out


def dyn_backward(features, candidates, d_out, spec: HashSpec):
    """Gradients of the hashed affine map: (d_features, d_candidates, d_bias).

    Every weight position feeding bucket k contributes sign * input * delta to
    d_candidates[k]; accumulation runs row-major over (m, n) so results are
    bit-reproducible.
    """
    x, single_x = _as_batch(features, spec.in_dim, "input features")
    p, single_p = _as_batch(candidates, spec.num_candidates, "candidate vector")
    d, single_d = _as_batch(d_out, spec.out_dim, "output gradient")
    b = x.shape[0]
    if p.shape[0] != b or d.shape[0] != b:
        raise ShapeError(
            f"batch mismatch: features {b}, candidates {p.shape[0]}, output grad {d.shape[0]}"
        )
    dx = np.zeros_like(x)
    dp = np.zeros_like(p)
    rows = np.arange(b)[:, None]
    for m in range(spec.out_dim):
        idx = bucket_row(m, spec)
        sg = sign_row(m, spec)
        dm = d[:, m : m + 1]
        dx += (p[:, idx] * sg) * dm
        np.add.at(dp, (rows, idx[None, :]), (x * dm) * sg)
    db = d.sum(axis=0)
    if single_x and single_p and single_d:
        return dx[0], dp[0], db
    return dx, dp, db


def materialize_weights(candidates: np.ndarray, spec: HashSpec) -> np.ndarray:
    """Explicit out_dim x in_dim weight matrix for one candidate vector.

    Guarded test/diagnostic oracle; the layer itself never builds this.
    """
    if spec.out_dim * spec.in_dim > MATERIALIZE_LIMIT:
        raise ShapeError(
            f"materialize_weights guard: {spec.out_dim} x {spec.in_dim} exceeds "
            f"{MATERIALIZE_LIMIT} entries"
        )
    p = np.asarray(candidates)
    if p.shape != (spec.num_candidates,):
        raise ShapeError(f"candidate shape {p.shape} != ({spec.num_candidates},)")
    w = np.empty((spec.out_dim, spec.in_dim), dtype=p.dtype)
    for m in range(spec.out_dim):
        w[m] = p[bucket_row(m, spec)] * sign_row(m, spec)
    return w
