"""Central finite-difference gradient checking over a parameter store.

The loss callable must return (loss, grads) where grads maps parameter names
to analytic gradients.  The checker perturbs one scalar at a time, so it only
ever sees the loss value; the analytic path is never reused as its own oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import ParamStore


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    passed: bool
    note: str = ""


@dataclass
class GradCheckReport:
    tolerance: float
    tensors: list[TensorCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def max_rel_err(self) -> float:
        return max((t.max_rel_err for t in self.tensors), default=0.0)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_rel_err": self.max_rel_err,
            "tensors": [
                {"name": t.name, "max_rel_err": t.max_rel_err, "passed": t.passed, "note": t.note}
                for t in self.tensors
            ],
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """|a - n| over max(|a|, |n|, floor).

    The floor turns the criterion into an absolute one for near-zero
    gradients, where finite differences carry irreducible rounding noise.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    loss_fn,
    store: ParamStore,
    *,
    eps: float = 1e-5,
    tolerance: float = 1e-5,
    floor: float = 1e-3,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Check analytic gradients of loss_fn against central differences.

    Requires 64-bit parameters; finite differences are unreliable at 32 bits.
    A non-finite loss is reported as a failing tensor, never raised.
    """
    if store.precision != "f64":
        raise ConfigError("grad_check requires f64 precision")
    report = GradCheckReport(tolerance=tolerance)
    try:
        base_loss, grads = loss_fn(store)
    except FloatingPointError as e:
        report.tensors.append(TensorCheck("<loss>", math.inf, False, f"loss raised: {e}"))
        return report
    if not math.isfinite(base_loss):
        report.tensors.append(TensorCheck("<loss>", math.inf, False, "non-finite loss"))
        return report

    if names is None:
        names = [n for n in store.names() if store.is_trainable(n)]
    for name in names:
        analytic = grads.get(name)
        if analytic is None:
            report.tensors.append(TensorCheck(name, math.inf, False, "no analytic gradient"))
            continue
        w = store[name]
        worst = 0.0
        note = ""
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up, _ = loss_fn(store)
            w[idx] = orig - eps
            down, _ = loss_fn(store)
            w[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                worst = math.inf
                note = f"non-finite loss at {name}{list(idx)}"
                break
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(float(analytic[idx]), numeric, floor)
            if err > worst:
                worst = err
        report.tensors.append(TensorCheck(name, worst, worst <= tolerance, note))
    return report
