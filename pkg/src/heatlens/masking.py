"""Frequency-domain hierarchical masking.

An image is transformed with the 2-D DCT, its coefficient grid is split by a
quarter-disc ("sector") anchored at the DC corner, and each part is inverted
back to the spatial domain.  Coefficients with ``sqrt(u^2 + v^2) < r`` form
the low-frequency part; everything else (including ties) is high-frequency.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .rng import Xoshiro256pp, derive_seed
from .spectral import SpectralPlan, dct2, dct2_array, idct2, idct2_array, make_plan
from .tensor import ShapeError, Tensor

RATE_RANGE = (0.20, 0.30)


@dataclass(frozen=True)
class MaskSpec:
    m: int
    n: int
    target_rate: float
    realized_radius: int
    realized_rate: float
    seed: int
    counted: str = "high"

    def low_mask(self) -> np.ndarray:
        return _dist2(self.m, self.n) < self.realized_radius ** 2

    def high_mask(self) -> np.ndarray:
        return ~self.low_mask()

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


@functools.lru_cache(maxsize=32)
def _dist2(m: int, n: int) -> np.ndarray:
    u = np.arange(m)[:, None]
    v = np.arange(n)[None, :]
    d2 = u * u + v * v
    d2.flags.writeable = False
    return d2


@functools.lru_cache(maxsize=32)
def _sorted_dist2(m: int, n: int) -> np.ndarray:
    return np.sort(_dist2(m, n), axis=None)


def masked_fraction(m: int, n: int, radius: int, counted: str = "high") -> float:
    """Fraction of coefficients on the ``counted`` side for an integer radius."""
    low = int(np.searchsorted(_sorted_dist2(m, n), radius * radius, side="left"))
    total = m * n
    return (total - low) / total if counted == "high" else low / total


def radius_for_rate(m: int, n: int, rate: float, counted: str = "high") -> int:
    """Integer radius whose realized fraction is closest to ``rate``.

    Binary search on the monotone map radius -> fraction; on a tie the
    smaller radius wins.
    """
    if counted not in ("high", "low"):
        raise ValueError(f"counted must be 'high' or 'low', got {counted!r}")
    r_max = int(np.ceil(np.sqrt((m - 1) ** 2 + (n - 1) ** 2))) + 1

    def high_frac(r):
        return masked_fraction(m, n, r, "high")

    target_high = rate if counted == "high" else 1.0 - rate
    # smallest r with high_frac(r) <= target_high (high_frac is non-increasing)
    lo, hi = 0, r_max
    while lo < hi:
        mid = (lo + hi) // 2
        if high_frac(mid) <= target_high:
            hi = mid
        else:
            lo = mid + 1
    best = lo
    if lo > 0 and abs(high_frac(lo - 1) - target_high) <= abs(high_frac(lo) - target_high):
        best = lo - 1
    return best


def sample_mask(m: int, n: int, seed: int, rate: Optional[float] = None,
                counted: str = "high", rate_range: Tuple[float, float] = RATE_RANGE) -> MaskSpec:
    """Draw a masking rate uniformly from ``rate_range`` and realize it as a radius.

    ``rate`` overrides the draw (used by tests and the CLI).
    """
    if m < 2 or n < 2:
        raise ValueError(f"mask extents must be at least 2x2, got {m}x{n}")
    rng = Xoshiro256pp(seed)
    target = rng.uniform(*rate_range) if rate is None else float(rate)
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"masking rate must lie in [0, 1], got {target}")
    r = radius_for_rate(m, n, target, counted)
    return MaskSpec(m=m, n=n, target_rate=target, realized_radius=r,
                    realized_rate=masked_fraction(m, n, r, counted), seed=seed, counted=counted)


def split_frequency(plan: SpectralPlan, x: Tensor, mask: MaskSpec) -> Tuple[Tensor, Tensor]:
    """Return ``(low, high)`` spatial components; ``low + high == x``."""
    if (mask.m, mask.n) != (plan.m, plan.n):
        raise ShapeError(f"mask {mask.m}x{mask.n} does not match plan {plan.m}x{plan.n}")
    coeffs = dct2(plan, x)
    low_m = mask.low_mask().astype(x.dtype)
    low = idct2(plan, coeffs * Tensor._wrap(low_m, None))
    high = idct2(plan, coeffs * Tensor._wrap(1 - low_m, None))
    return low, high


def split_array(plan: SpectralPlan, x: np.ndarray, mask: MaskSpec) -> Tuple[np.ndarray, np.ndarray]:
    coeffs = dct2_array(plan, x)
    low_m = mask.low_mask()
    return idct2_array(plan, coeffs * low_m), idct2_array(plan, coeffs * ~low_m)


@dataclass
class ComponentBatch:
    """Masked components of a batch of paired optical [3,H,W] / SAR [1,H,W] images."""

    opt_low: Tensor
    opt_high: Tensor
    sar_low: Tensor
    sar_high: Tensor
    opt_masks: List[MaskSpec]
    sar_masks: List[MaskSpec]

    def __len__(self) -> int:
        return self.opt_low.shape[0]

    def components(self) -> List[Tensor]:
        return [self.opt_low, self.opt_high, self.sar_low, self.sar_high]


def mask_batch(plan: SpectralPlan, pairs: Sequence[Tuple[Tensor, Tensor]], seed: int,
               counted: str = "high") -> ComponentBatch:
    """Independent masks per image; item ``i`` draws from sub-stream ``(seed, i)``."""
    parts = {"ol": [], "oh": [], "sl": [], "sh": []}
    opt_masks, sar_masks = [], []
    for i, (opt, sar) in enumerate(pairs):
        item_seed = derive_seed(seed, i)
        mo = sample_mask(plan.m, plan.n, derive_seed(item_seed, 0), counted=counted)
        ms = sample_mask(plan.m, plan.n, derive_seed(item_seed, 1), counted=counted)
        lo, hi = split_array(plan, _arr(opt), mo)
        parts["ol"].append(lo)
        parts["oh"].append(hi)
        lo, hi = split_array(plan, _arr(sar), ms)
        parts["sl"].append(lo)
        parts["sh"].append(hi)
        opt_masks.append(mo)
        sar_masks.append(ms)
    stack = {k: Tensor._wrap(np.stack(v), None) for k, v in parts.items()}
    return ComponentBatch(stack["ol"], stack["oh"], stack["sl"], stack["sh"], opt_masks, sar_masks)


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def patch_mask(x: np.ndarray, patch: int, rate: float, seed: int) -> np.ndarray:
    """Ablation stub: zero a random ``rate`` fraction of ``patch x patch`` tiles."""
    *_, H, W = x.shape
    gh, gw = H // patch, W // patch
    rng = Xoshiro256pp(seed)
    count = int(round(rate * gh * gw))
    order = list(range(gh * gw))
    for i in range(len(order) - 1, 0, -1):
        j = rng.integers(0, i + 1)
        order[i], order[j] = order[j], order[i]
    out = np.array(x, copy=True)
    for idx in order[:count]:
        r, c = divmod(idx, gw)
        out[..., r * patch:(r + 1) * patch, c * patch:(c + 1) * patch] = 0
    return out
