"""Finite-difference oracle suite over every differentiable operation.

Each entry builds a tiny random instance, wires the operation into a scalar
loss, and checks the hand-written backward against central differences.  The
full composed models are checked last at the standard toy dimensions.
"""

from __future__ import annotations

import numpy as np

from . import encoder as enc
from . import model as mdl
from .config import ModelConfig
from .dynlayer import dyn_backward, dyn_forward
from .gradcheck import GradCheckReport, grad_check
from .hashing import HashSpec
from .tensor import (
    BatchNormState,
    ParamStore,
    activation,
    activation_backward,
    batchnorm,
    batchnorm_backward,
    softmax_xent,
)

TOY = ModelConfig(
    feature_dim=24,
    adapter_hidden=16,
    adapter_out=16,
    dyn_out=12,
    num_candidates=32,
    hidden_dim=8,
    embed_dim=8,
    num_answers=6,
    vocab_size=12,
)


def _store(**arrays) -> ParamStore:
    s = ParamStore("f64")
    for k, v in arrays.items():
        s.add(k, v)
    return s


def check_activation(kind: str, rng) -> GradCheckReport:
    x = rng.normal(size=(4, 5))
    c = rng.normal(size=(4, 5))

    def loss_fn(s):
        y = activation(kind, s["x"])
        return float((c * y).sum()), {"x": activation_backward(kind, y, c)}

    return grad_check(loss_fn, _store(x=x))


def check_softmax_xent(rng) -> GradCheckReport:
    logits = rng.normal(size=(5, 7))
    targets = rng.integers(0, 7, size=5)

    def loss_fn(s):
        loss, dlogits = softmax_xent(s["logits"], targets)
        return loss, {"logits": dlogits}

    return grad_check(loss_fn, _store(logits=logits))


def check_batchnorm(rng) -> GradCheckReport:
    x = rng.normal(size=(8, 3)) * 2.0 + 1.0
    c = rng.normal(size=(8, 3))
    gamma = rng.uniform(0.5, 1.5, size=3)
    beta = rng.normal(size=3)

    def loss_fn(s):
        state = BatchNormState(
            gamma=s["gamma"], beta=s["beta"],
            running_mean=np.zeros(3), running_var=np.ones(3),
        )
        y, cache = batchnorm(s["x"], state, "train", update_running=False)
        dx, dgamma, dbeta = batchnorm_backward(cache, c)
        return float((c * y).sum()), {"x": dx, "gamma": dgamma, "beta": dbeta}

    return grad_check(loss_fn, _store(x=x, gamma=gamma, beta=beta), tolerance=1e-6)


def check_embed(rng) -> GradCheckReport:
    table = rng.normal(size=(6, 4))
    tokens = np.array([[1, 3, 1]])  # repeated token: gradients must sum
    c = rng.normal(size=(1, 3, 4))

    def loss_fn(s):
        vecs = enc.embed(tokens, s["table"])
        return float((c * vecs).sum()), {"table": enc.embed_backward(tokens, c, 6)}

    return grad_check(loss_fn, _store(table=table))


def _gru_params_from(s: ParamStore) -> enc.GruParams:
    return enc.GruParams(
        w_r=s["w_r"], w_z=s["w_z"], w_h=s["w_h"],
        u_r=s["u_r"], u_z=s["u_z"], u_h=s["u_h"],
    )


def check_gru(rng, steps: int = 4) -> GradCheckReport:
    h, e, b = 5, 4, 3
    arrays = {
        "w_r": rng.normal(size=(h, e)), "w_z": rng.normal(size=(h, e)),
        "w_h": rng.normal(size=(h, e)), "u_r": rng.normal(size=(h, h)),
        "u_z": rng.normal(size=(h, h)), "u_h": rng.normal(size=(h, h)),
        "x": rng.normal(size=(b, steps, e)),
    }
    c = rng.normal(size=(b, h))

    def loss_fn(s):
        h_last, caches = enc.gru_encode(s["x"], _gru_params_from(s))
        dx, grads = enc.gru_encode_backward(caches, _gru_params_from(s), c)
        grads["x"] = dx
        return float((c * h_last).sum()), grads

    return grad_check(loss_fn, _store(**arrays))


def check_dyn_layer(rng) -> GradCheckReport:
    spec = HashSpec(out_dim=6, in_dim=9, num_candidates=4)
    arrays = {
        "x": rng.normal(size=(3, 9)),
        "p": rng.normal(size=(3, 4)),
        "b": rng.normal(size=6),
    }
    c = rng.normal(size=(3, 6))

    def loss_fn(s):
        y = dyn_forward(s["x"], s["p"], s["b"], spec)
        dx, dp, db = dyn_backward(s["x"], s["p"], c, spec)
        return float((c * y).sum()), {"x": dx, "p": dp, "b": db}

    return grad_check(loss_fn, _store(**arrays), tolerance=1e-6)


def check_projection_with_dyn(rng) -> GradCheckReport:
    spec = HashSpec(out_dim=5, in_dim=7, num_candidates=6)
    h = 4
    arrays = {
        "w_p": rng.normal(size=(6, h)),
        "hq": rng.normal(size=(2, h)),
        "x": rng.normal(size=(2, 7)),
        "b": rng.normal(size=5),
    }
    c = rng.normal(size=(2, 5))

    def loss_fn(s):
        p = enc.predict_candidates(s["hq"], s["w_p"])
        y = dyn_forward(s["x"], p, s["b"], spec)
        dx, dp, db = dyn_backward(s["x"], p, c, spec)
        dh, dw = enc.predict_candidates_backward(s["hq"], s["w_p"], dp)
        return float((c * y).sum()), {"x": dx, "b": db, "hq": dh, "w_p": dw}

    return grad_check(loss_fn, _store(**arrays))


def check_full_model(variant: str, rng, batch: int = 2) -> GradCheckReport:
    from dataclasses import replace

    cfg = replace(TOY, variant=variant)
    store = mdl.init_params(cfg, "f64", seed=int(rng.integers(1 << 30)))
    feats = rng.normal(size=(batch, cfg.feature_dim))
    tokens = rng.integers(0, cfg.vocab_size, size=(batch, 5))
    targets = rng.integers(0, cfg.num_answers, size=batch)

    def loss_fn(s):
        loss, _, grads = mdl.loss_and_grads(
            cfg, s, feats, tokens, targets, mode="train", update_running=False
        )
        return loss, grads

    return grad_check(loss_fn, store)


def run_oracle_suite(seed: int = 0) -> dict:
    """Run every oracle once; returns a JSON-ready report."""
    rng = np.random.default_rng(seed)
    checks = {
        "activation.sigmoid": lambda: check_activation("sigmoid", rng),
        "activation.tanh": lambda: check_activation("tanh", rng),
        "activation.relu": lambda: check_activation("relu", rng),
        "softmax_xent": lambda: check_softmax_xent(rng),
        "batchnorm": lambda: check_batchnorm(rng),
        "embed": lambda: check_embed(rng),
        "gru_encode": lambda: check_gru(rng),
        "dyn_layer": lambda: check_dyn_layer(rng),
        "projection+dyn_layer": lambda: check_projection_with_dyn(rng),
        "model.dppnet": lambda: check_full_model("dppnet", rng),
        "model.concat": lambda: check_full_model("concat", rng),
    }
    modules = []
    for name, fn in checks.items():
        report = fn()
        modules.append(
            {
                "module": name,
                "passed": report.passed,
                "max_rel_err": report.max_rel_err,
                "tolerance": report.tolerance,
            }
        )
    return {"passed": all(m["passed"] for m in modules), "seed": seed, "modules": modules}
