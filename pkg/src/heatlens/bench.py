"""Complexity model, throughput scan and the finite-difference heat oracle.

Flop convention: one multiply plus one add is 2 flops; every other
elementwise arithmetic op is 1 flop per element.  ``exp``/``tanh`` count 1,
GELU (tanh form) counts ``GELU_FLOPS`` per element, softmax ``SOFTMAX_FLOPS``.
"""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .heat import ContractError
from .model import ModelConfig, Params, _conv, _w, _zeros, embed, encode_tokens, init_params
from .rng import Xoshiro256pp
from .spectral import make_plan
from .tensor import Tensor

FLOP_CONVENTION = "1 multiply-add = 2 flops"
GELU_FLOPS = 8
SOFTMAX_FLOPS = 5
FILTER_FLOPS = 4  # k*w^2, *t, exp, coefficient multiply


@dataclass
class FlopsReport:
    side: int
    tokens: int
    channels: int
    depth: int
    components: Dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.components.values())

    def add(self, name: str, count: int) -> None:
        self.components[name] = self.components.get(name, 0) + int(count)


def _mlp_flops(rep: FlopsReport, n_tok: int, c: int, mlp_ratio: int) -> None:
    h = mlp_ratio * c
    rep.add("mlp", (2 * c * h + 2 * h * c) * n_tok + (h + c) * n_tok)
    rep.add("activation", GELU_FLOPS * h * n_tok)
    rep.add("residual", 2 * c * n_tok)


def flops_hco_stage(side: int, channels: int, depth: int = 1, mlp_ratio: int = 4,
                    transforms_only: bool = False) -> FlopsReport:
    """Analytic flops of ``depth`` HCO blocks on a ``side x side`` token grid (matmul DCT)."""
    n_tok = side * side
    c = channels
    rep = FlopsReport(side, n_tok, c, depth)
    transform = 2 * c * (side ** 3 + side ** 3)  # matmul DCT: rows then columns
    for _ in range(depth):
        rep.add("dct", transform)
        rep.add("idct", transform)
        if transforms_only:
            continue
        rep.add("filter", FILTER_FLOPS * c * n_tok)
        rep.add("correction", (1 + GELU_FLOPS) * c * n_tok)
        rep.add("projections", 2 * (2 * c * c + c) * n_tok)
        _mlp_flops(rep, n_tok, c, mlp_ratio)
    return rep


def flops_attention_stage(side: int, channels: int, depth: int = 1, mlp_ratio: int = 4) -> FlopsReport:
    """Analytic flops of ``depth`` global single-head self-attention blocks over ``side^2`` tokens."""
    n_tok = side * side
    c = channels
    rep = FlopsReport(side, n_tok, c, depth)
    for _ in range(depth):
        rep.add("attention_qkv", 3 * n_tok * c * c * 2)
        rep.add("attention_scores", 2 * n_tok * n_tok * c * 2)
        rep.add("attention_softmax", SOFTMAX_FLOPS * n_tok * n_tok)
        rep.add("attention_out", n_tok * c * c * 2)
        _mlp_flops(rep, n_tok, c, mlp_ratio)
    return rep


def fit_exponent(tokens: Sequence[float], flops: Sequence[float]) -> float:
    """Least-squares slope of log(flops) against log(tokens)."""
    slope, _ = np.polyfit(np.log(np.asarray(tokens, float)), np.log(np.asarray(flops, float)), 1)
    return float(slope)


def scaling_fit(kind: str, sides: Sequence[int], channels: int, depth: int = 1) -> float:
    fn = flops_hco_stage if kind == "hco" else flops_attention_stage
    reps = [fn(s, channels, depth) for s in sides]
    return fit_exponent([r.tokens for r in reps], [r.total for r in reps])


def crossover_side(channels: int, depth: int = 1, max_side: int = 8192) -> Optional[int]:
    """Smallest side at which HCO flops fall below attention flops (and stay below)."""
    last_not_below = 0
    for s in range(1, max_side + 1):
        if flops_hco_stage(s, channels, depth).total >= flops_attention_stage(s, channels, depth).total:
            last_not_below = s
    return last_not_below + 1 if last_not_below < max_side else None


def flops_table(sides: Sequence[int], channels: int, depth: int = 1) -> List[Dict[str, object]]:
    rows = []
    for s in sides:
        h = flops_hco_stage(s, channels, depth)
        a = flops_attention_stage(s, channels, depth)
        rows.append({"side": s, "tokens": s * s, "hco_flops": h.total, "attention_flops": a.total,
                     "hco_transform_flops": h.components["dct"] + h.components["idct"],
                     "attention_score_flops": a.components["attention_scores"]})
    return rows


# ---------------------------------------------------------------------------
# attention baseline encoder (complexity foil)
# ---------------------------------------------------------------------------


def init_attention_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Embeddings and downsamplers like the HCO trunk; blocks are global attention."""
    gen = Xoshiro256pp(seed).numpy_generator()
    dt = cfg.dtype
    ps, widths = cfg.patch_size, cfg.stage_widths
    p: Params = {}
    for mod, cin in (("opt", 3), ("sar", 1)):
        p[f"embed.{mod}.w"] = _w(gen, (widths[0], cin, ps, ps), cin * ps * ps, dt)
        p[f"embed.{mod}.b"] = _zeros((widths[0], 1, 1), dt)
    for s, (depth, c) in enumerate(zip(cfg.stage_depths, widths)):
        h = cfg.mlp_ratio * c
        for j in range(depth):
            pre = f"stage{s}.block{j}."
            p[pre + "qkv.w"] = _w(gen, (3 * c, c, 1, 1), c, dt)
            p[pre + "qkv.b"] = _zeros((3 * c, 1, 1), dt)
            p[pre + "proj.w"] = _w(gen, (c, c, 1, 1), c, dt, 0.5)
            p[pre + "proj.b"] = _zeros((c, 1, 1), dt)
            p[pre + "mlp1.w"] = _w(gen, (h, c, 1, 1), c, dt)
            p[pre + "mlp1.b"] = _zeros((h, 1, 1), dt)
            p[pre + "mlp2.w"] = _w(gen, (c, h, 1, 1), h, dt, 0.5)
            p[pre + "mlp2.b"] = _zeros((c, 1, 1), dt)
        if s + 1 < len(widths):
            p[f"down{s}.w"] = _w(gen, (widths[s + 1], c, 2, 2), c * 4, dt)
            p[f"down{s}.b"] = _zeros((widths[s + 1], 1, 1), dt)
    return p


def attention_block(params: Params, pre: str, x: Tensor) -> Tensor:
    B, c, hh, ww = x.shape
    n_tok = hh * ww
    qkv = T.reshape(_conv(x, params, pre + "qkv"), (B, 3, c, n_tok))
    q = T.transpose(T.reshape(T.take_range(qkv, 0, 1, axis=1), (B, c, n_tok)), (0, 2, 1))
    k = T.reshape(T.take_range(qkv, 1, 2, axis=1), (B, c, n_tok))
    v = T.transpose(T.reshape(T.take_range(qkv, 2, 3, axis=1), (B, c, n_tok)), (0, 2, 1))
    attn = T.softmax(T.scale(T.matmul(q, k), 1.0 / math.sqrt(c)))
    out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1)), (B, c, hh, ww))
    x = T.add(x, _conv(out, params, pre + "proj"))
    hid = T.gelu(_conv(x, params, pre + "mlp1"))
    return T.add(x, _conv(hid, params, pre + "mlp2"))


def encode_attention(cfg: ModelConfig, params: Params, image: Tensor, modality: str = "opt") -> List[Tensor]:
    z = embed(cfg, params, image, modality)
    if z.ndim == 3:
        z = T.reshape(z, (1,) + z.shape)
    stages = []
    for s, depth in enumerate(cfg.stage_depths):
        for j in range(depth):
            z = attention_block(params, f"stage{s}.block{j}.", z)
        stages.append(z)
        if s + 1 < len(cfg.stage_depths):
            z = _conv(z, params, f"down{s}", stride=2)
    return stages


def encoder_flops(cfg: ModelConfig, kind: str) -> int:
    """Analytic trunk flops for one image (embedding + stages + downsamplers)."""
    ps, widths = cfg.patch_size, cfg.stage_widths
    total = 0
    g0 = cfg.stage_grid(0)
    total += g0[0] * g0[1] * widths[0] * 3 * ps * ps * 2
    fn = flops_hco_stage if kind == "hco" else flops_attention_stage
    for s, (depth, c) in enumerate(zip(cfg.stage_depths, widths)):
        side = cfg.stage_grid(s)[0]
        total += fn(side, c, depth, cfg.mlp_ratio).total
        if s + 1 < len(widths):
            nxt = cfg.stage_grid(s + 1)
            total += nxt[0] * nxt[1] * widths[s + 1] * c * 4 * 2
    return total


# ---------------------------------------------------------------------------
# throughput
# ---------------------------------------------------------------------------


def _single_thread():
    return threadpool_limits(limits=1)


@dataclass
class ThroughputRow:
    side: int
    model: str
    images_per_sec: Optional[float]
    flops: int
    median_seconds: Optional[float]


def time_forward(fn, runs: int = 5, warmup: int = 1) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def throughput_scan(sides: Sequence[int], cfg: Optional[ModelConfig] = None, batch: int = 8,
                    runs: int = 5, seed: int = 0, memory_budget: float = 3e9) -> List[ThroughputRow]:
    """Single-threaded forward throughput of the HCO trunk and the attention trunk.

    Sides whose attention matrix would exceed ``memory_budget`` bytes, or
    that raise ``MemoryError``, are reported with ``images_per_sec=None``.
    """
    base = cfg or ModelConfig()
    rows: List[ThroughputRow] = []
    for side in sides:
        c = ModelConfig(**{**base.__dict__, "image_size": (side, side)})
        img = Tensor(Xoshiro256pp(seed + side).numpy_generator().uniform(0, 1, (batch, 3, side, side)),
                     dtype=c.dtype)
        hp = init_params(c, seed)
        ap = init_attention_params(c, seed)
        g = c.stage_grid(0)
        attn_bytes = batch * (g[0] * g[1]) ** 2 * np.dtype(c.dtype.replace("f", "float")).itemsize * 3
        runners = {
            "hco": lambda: encode_tokens(c, hp, embed(c, hp, img, "opt")),
            "attention": lambda: encode_attention(c, ap, img, "opt"),
        }
        for model, fn in runners.items():
            flops = encoder_flops(c, model) * batch
            if model == "attention" and attn_bytes > memory_budget:
                rows.append(ThroughputRow(side, model, None, flops, None))
                continue
            try:
                with T.no_grad(), _single_thread():
                    med = time_forward(fn, runs=runs)
                rows.append(ThroughputRow(side, model, batch / med, flops, med))
            except MemoryError:
                rows.append(ThroughputRow(side, model, None, flops, None))
    return rows


def throughput_ratios(rows: Iterable[ThroughputRow]) -> Dict[int, Optional[float]]:
    by = {}
    for r in rows:
        by.setdefault(r.side, {})[r.model] = r.images_per_sec
    out = {}
    for side, d in sorted(by.items()):
        h, a = d.get("hco"), d.get("attention")
        out[side] = h / a if h and a else None
    return out


def rows_to_csv(rows: Sequence[dict], fh=None, missing: str = "") -> str:
    """Write dict rows as CSV; ``None`` cells become ``missing``.  Returns text if no handle given."""
    buf = fh or io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (missing if v is None else v) for k, v in r.items()})
    return buf.getvalue() if fh is None else ""


# ---------------------------------------------------------------------------
# finite-difference heat oracle
# ---------------------------------------------------------------------------


def heat_fd_oracle(u0, k: float, t_total: float, dt: float) -> np.ndarray:
    """Explicit Euler for ``u_t = k (u_xx + u_yy)`` on a unit grid.

    5-point Laplacian with mirror (zero-flux) boundaries: the ghost cell
    outside each edge equals the edge cell.  Requires ``dt <= 1 / (4k)``.
    """
    u = np.array(getattr(u0, "data", u0), dtype=np.float64)
    if k < 0 or dt <= 0 or t_total < 0:
        raise ContractError("need k >= 0, dt > 0, t_total >= 0")
    if k > 0 and dt > 1.0 / (4.0 * k):
        raise ContractError(f"unstable step: dt={dt} exceeds 1/(4k)={1.0 / (4.0 * k)}")
    steps = int(round(t_total / dt))
    if not math.isclose(steps * dt, t_total, rel_tol=1e-9, abs_tol=1e-15):
        raise ContractError(f"t_total={t_total} is not a whole number of steps of dt={dt}")
    if k == 0 or steps == 0:
        return u
    c = k * dt
    for _ in range(steps):
        p = np.pad(u, ((0, 0),) * (u.ndim - 2) + ((1, 1), (1, 1)), mode="edge")
        lap = p[..., :-2, 1:-1] + p[..., 2:, 1:-1] + p[..., 1:-1, :-2] + p[..., 1:-1, 2:] - 4.0 * u
        u = u + c * lap
    return u


def oracle_discrepancy(u0: np.ndarray, k: float, t: float, dt: float, omega: str = "discrete") -> float:
    """Relative L2 distance between the spectral solution and the Euler oracle."""
    from .heat import hco_apply

    m, n = u0.shape[-2:]
    plan = make_plan(m, n, "matmul", omega)
    spectral = hco_apply(plan, Tensor(u0[None], dtype="f64"), k, t).data[0]
    fd = heat_fd_oracle(u0, k, t, dt)
    return float(np.linalg.norm(spectral - fd) / np.linalg.norm(fd))
