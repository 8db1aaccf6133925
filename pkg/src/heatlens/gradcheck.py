"""Central-difference gradient checks for ops, one HCO block, and the full model.

Every check builds a scalar probe ``L = sum(f(inputs) * R)`` with a fixed random
``R``, compares the tape gradient with ``(L(x + h e_i) - L(x - h e_i)) / 2h`` on
a set of coordinates, and reports ``|g_tape - g_fd| / max(|g_tape|, |g_fd|)``
measured in the 2-norm over those coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .heat import HcoParams, hco_apply, hco_block
from .spectral import dct2, idct2, make_plan
from .tensor import Tensor

STEP = 1e-3
# The full loss is piecewise linear (L1 terms, ReLU in the fusion path) over
# ~1e5 elements; a +-1e-3 step straddles many kinks and biases the difference
# quotient, so the model scope uses a step that stays inside smooth pieces.
MODEL_STEP = 1e-5
TOLERANCE = 1e-4
SCOPES = ("ops", "block", "model")


@dataclass
class CheckResult:
    name: str
    rel_error: float
    probes: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tolerance)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<24} worst rel err {self.rel_error:.3e} ({self.probes} probes)"


def _away_from_kinks(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values out of (-margin, margin) so piecewise ops stay smooth under +-h."""
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                   gen: np.random.Generator, max_probes: int = 24, h: float = STEP) -> CheckResult:
    """Compare tape and finite-difference gradients of ``sum(fn(*inputs) * R)``."""
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, dtype="f64", requires_grad=True) for a in arrays]
    out = fn(*leaves)
    weights = Tensor(gen.uniform(-1, 1, out.shape), dtype="f64")
    loss = T.tsum(T.mul(out, weights))
    grads = T.backward(loss, leaves)

    def value(vals):
        with T.no_grad():
            o = fn(*(Tensor(v, dtype="f64") for v in vals))
            return float(np.sum(o.data * weights.data))

    tape, fd = [], []
    per_input = max(1, max_probes // len(arrays))
    for idx, arr in enumerate(arrays):
        flat = arr.size
        picks = gen.choice(flat, size=min(per_input, flat), replace=False)
        for p in picks:
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[idx].reshape(-1)[p] += h
            minus[idx].reshape(-1)[p] -= h
            fd.append((value(plus) - value(minus)) / (2 * h))
            tape.append(grads[idx].reshape(-1)[p])
    return CheckResult(name, _rel(np.array(tape), np.array(fd)), len(tape))


def _op_cases(gen: np.random.Generator) -> Dict[str, tuple]:
    u = lambda *s: gen.uniform(-1, 1, s)
    pos = lambda *s: gen.uniform(0.2, 1.5, s)
    plan = make_plan(6, 5)
    return {
        "add": (T.add, [u(3, 4), u(3, 4)]),
        "add_broadcast": (T.add, [u(2, 3, 4), u(3, 4)]),
        "sub": (T.sub, [u(3, 4), u(4)]),
        "mul": (T.mul, [u(3, 4), u(3, 4)]),
        "div": (T.div, [u(3, 4), pos(3, 4)]),
        "scale": (lambda a: T.scale(a, -2.5), [u(3, 4)]),
        "exp": (T.exp, [u(3, 4)]),
        "log": (T.log, [pos(3, 4)]),
        "sqrt": (T.sqrt, [pos(3, 4)]),
        "relu": (T.relu, [_away_from_kinks(u(3, 4))]),
        "abs": (T.tabs, [_away_from_kinks(u(3, 4))]),
        "softplus": (T.softplus, [u(3, 4) * 3]),
        "gelu": (T.gelu, [u(3, 4) * 2]),
        "tanh": (T.tanh, [u(3, 4)]),
        "sum": (lambda a: T.tsum(a, axis=1, keepdims=True), [u(3, 4, 2)]),
        "mean": (lambda a: T.mean(a, axis=(0, 2)), [u(3, 4, 2)]),
        "reshape": (lambda a: T.reshape(a, (4, 6)), [u(2, 3, 4)]),
        "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [u(2, 3, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [u(2, 3), u(2, 2)]),
        "slice": (lambda a: T.take_range(a, 1, 3, axis=1), [u(2, 4, 3)]),
        "softmax": (T.softmax, [u(3, 5) * 2]),
        "matmul": (T.matmul, [u(3, 4), u(4, 2)]),
        "matmul_batched": (T.matmul, [u(2, 3, 4), u(2, 4, 5)]),
        "conv2d": (lambda x, w: T.conv2d(x, w, padding=1), [u(2, 5, 5), u(3, 2, 3, 3)]),
        "conv2d_strided": (lambda x, w: T.conv2d(x, w, stride=2), [u(2, 2, 6, 6), u(3, 2, 2, 2)]),
        "conv2d_1x1": (lambda x, w: T.conv2d(x, w), [u(2, 3, 4, 4), u(5, 3, 1, 1)]),
        "pixel_shuffle": (lambda a: T.pixel_shuffle(a, 2), [u(8, 2, 3)]),
        "pixel_unshuffle": (lambda a: T.pixel_unshuffle(a, 2), [u(2, 4, 6)]),
        "upsample_nearest": (lambda a: T.upsample_nearest(a, 2), [u(2, 3, 3)]),
        "dct2": (lambda a: dct2(plan, a), [u(2, 6, 5)]),
        "idct2": (lambda a: idct2(plan, a), [u(2, 6, 5)]),
        "hco_apply": (lambda a, k: hco_apply(plan, a, T.softplus(k), 0.7), [u(3, 6, 5), u(6, 5, 3)]),
    }


def check_ops(seed: int = 0, only: Optional[Sequence[str]] = None) -> List[CheckResult]:
    gen = np.random.default_rng(seed)
    results = []
    for name, (fn, inputs) in _op_cases(gen).items():
        if only and name not in only:
            continue
        results.append(check_function(name, fn, inputs, gen))
    return results


def check_block(seed: int = 0, c: int = 4, m: int = 6, n: int = 5) -> List[CheckResult]:
    gen = np.random.default_rng(seed)
    params = HcoParams.init(c, m, n, gen, dtype="f64", t=0.8)
    names = list(HcoParams.TENSOR_FIELDS)
    base = {k: v.data * 10 if k in ("fve_raw", "sce") else v.data for k, v in params.tensors().items()}
    z = gen.uniform(-1, 1, (2, c, m, n))

    def fn(z_t, *fields):
        p = HcoParams.from_tensors(dict(zip(names, fields)), t=params.t, activation=params.activation)
        return hco_block(p, z_t)

    results = [check_function("hco_block", fn, [z] + [base[k] for k in names], gen, max_probes=60)]
    for i, k in enumerate(names):
        def only_field(t_field, i=i):
            fields = [Tensor(base[n_], dtype="f64") for n_ in names]
            fields[i] = t_field
            return fn(Tensor(z, dtype="f64"), *fields)
        results.append(check_function(f"hco_block.{k}", only_field, [base[k]], gen, max_probes=8))
    return results


def check_model(seed: int = 0, probes: int = 10, batch: int = 2, cfg=None,
                h: float = MODEL_STEP) -> List[CheckResult]:
    """Full desk-scale loss vs central differences on ``probes`` random parameter entries."""
    from .model import ModelConfig, forward, init_params, loss_total, targets_from_batch
    from .train import make_batch

    cfg = cfg or ModelConfig(dtype="f64")
    params = init_params(cfg, seed)
    comps, originals = make_batch(cfg, seed, 0, batch)
    targets = targets_from_batch(comps, originals)

    def loss_of(p):
        out = forward(cfg, p, targets.components)
        return loss_total(out, targets, cfg.toggles)[0]

    grads = T.backward(loss_of(params), params)
    gen = np.random.default_rng(seed)
    names = sorted(params)
    tape, fd = [], []
    for name in gen.choice(names, size=probes, replace=True):
        arr = params[name].data
        p = int(gen.integers(arr.size))
        vals = []
        for sign in (1, -1):
            pert = arr.copy()
            pert.reshape(-1)[p] += sign * h
            trial = dict(params)
            trial[name] = Tensor(pert, dtype="f64")
            with T.no_grad():
                vals.append(float(loss_of(trial).data))
        fd.append((vals[0] - vals[1]) / (2 * h))
        tape.append(grads[name].reshape(-1)[p])
    return [CheckResult("model", _rel(np.array(tape), np.array(fd)), probes)]


def check_model_parts(seed: int = 0) -> List[CheckResult]:
    """Embedding, frequency decoder and fusion decoder, each w.r.t. inputs and weights."""
    from .model import ModelConfig, decode_frequency, embed, fuse_and_decode_spatial, init_params

    cfg = ModelConfig(image_size=(32, 32), stage_widths=(4, 6, 8, 10), dtype="f64")
    params = init_params(cfg, seed)
    gen = np.random.default_rng(seed)
    u = lambda *s: gen.uniform(-1, 1, s)

    def with_params(prefixes, fn):
        keys = [k for k in sorted(params) if any(k.startswith(p) for p in prefixes)]

        def wrapped(*tensors):
            n_in = len(tensors) - len(keys)
            trial = dict(params)
            trial.update(zip(keys, tensors[n_in:]))
            return fn(trial, *tensors[:n_in])

        return wrapped, [params[k].data for k in keys]

    results = []
    fn, ws = with_params(["embed.opt."], lambda p, x: embed(cfg, p, x, "opt"))
    results.append(check_function("embed", fn, [u(1, 3, 32, 32)] + ws, gen, max_probes=30))
    fn, ws = with_params(["fdec.sar."], lambda p, f: decode_frequency(cfg, p, f, "sar"))
    results.append(check_function("decode_frequency", fn, [u(1, 10, 1, 1)] + ws, gen, max_probes=30))
    fn, ws = with_params(["fuse.opt.", "merge.opt.", "sdec.opt."],
                         lambda p, a, b, c, d: fuse_and_decode_spatial(cfg, p, a, b, c, d, "opt"))
    feats = [u(1, 8, 2, 2), u(1, 8, 2, 2), u(1, 10, 1, 1), u(1, 10, 1, 1)]
    results.append(check_function("fuse_and_decode_spatial", fn, feats + ws, gen, max_probes=60,
                                  h=MODEL_STEP))
    return results


def run(scope: str, seed: int = 0) -> List[CheckResult]:
    if scope == "ops":
        return check_ops(seed)
    if scope == "block":
        return check_block(seed)
    if scope == "model":
        return check_model_parts(seed) + check_model(seed)
    raise ValueError(f"unknown scope {scope!r}; expected one of {SCOPES}")
