"""Heat Conduction Operator and the residual block built around it."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Optional, Union

import numpy as np

from . import tensor as T
from .spectral import SpectralPlan, dct2, idct2, make_plan
from .tensor import ShapeError, Tensor


class ContractError(ValueError):
    """A documented precondition does not hold."""


def hco_filter(plan: SpectralPlan, k: Union[Tensor, float], t: float, dtype=np.float64):
    """Gain ``exp(-k * (wx^2 + wy^2) * t)``; a Tensor [c,m,n] if ``k`` is a field."""
    fsq = plan.freq_sq()
    if isinstance(k, Tensor):
        if k.ndim != 3 or k.shape[:2] != (plan.m, plan.n):
            raise ShapeError(f"diffusivity field must be [m,n,c] = [{plan.m},{plan.n},c], got {k.shape}")
        kt = T.transpose(k, (2, 0, 1))
        return T.exp(T.scale(T.mul(kt, Tensor(fsq, dtype=k.dtype)), -t))
    return np.exp(-float(k) * fsq * t).astype(dtype)


def hco_apply(plan: SpectralPlan, u0: Tensor, k: Union[Tensor, float], t: float) -> Tensor:
    """Diffuse ``u0`` [..., c, m, n] for time ``t`` with diffusivity ``k``.

    ``k`` is a scalar or a per-frequency, per-channel field of shape [m, n, c].
    The DC gain is exactly 1, so channel means are preserved.
    """
    if t < 0:
        raise ContractError(f"diffusion time must be non-negative, got {t}")
    kd = k.data if isinstance(k, Tensor) else np.asarray(k)
    if np.any(kd < 0):
        raise ContractError("diffusivity must be non-negative")
    filt = hco_filter(plan, k, t, dtype=u0.dtype)
    if isinstance(filt, Tensor):
        if u0.shape[-3] != filt.shape[0]:
            raise ShapeError(f"diffusivity has {filt.shape[0]} channels, signal has {u0.shape[-3]}")
    else:
        filt = Tensor._wrap(filt, None)
    return idct2(plan, T.mul(dct2(plan, u0), filt))


def derive_k(fve_raw: Tensor) -> Tensor:
    """Diffusivity ``softplus(fve_raw)``; strictly positive."""
    return T.softplus(fve_raw)


ACTIVATIONS = {"gelu": T.gelu, "relu": T.relu, "identity": lambda x: x}


def correction_learn(z: Tensor, sce: Tensor, activation: str = "gelu") -> Tensor:
    """Add the spatial correction field [m,n,c] to ``z`` [..., c, m, n], then activate."""
    c, m, n = z.shape[-3:]
    if sce.shape != (m, n, c):
        raise ShapeError(f"correction field {sce.shape} does not match features (m,n,c)=({m},{n},{c})")
    return ACTIVATIONS[activation](T.add(z, T.transpose(sce, (2, 0, 1))))


@dataclass
class HcoParams:
    """Learnable state of one HCO block (channels ``c`` on an ``m x n`` grid)."""

    fve_raw: Tensor
    sce: Tensor
    proj_in_w: Tensor
    proj_in_b: Tensor
    proj_out_w: Tensor
    proj_out_b: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    t: float = 1.0
    activation: str = "gelu"

    TENSOR_FIELDS = (
        "fve_raw", "sce", "proj_in_w", "proj_in_b", "proj_out_w", "proj_out_b",
        "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
    )

    @classmethod
    def init(cls, c: int, m: int, n: int, gen: np.random.Generator, dtype="f32",
             mlp_ratio: int = 4, t: float = 1.0, activation: str = "gelu") -> "HcoParams":
        h = mlp_ratio * c

        def w(o, i, gain=1.0):
            return T.tensor(gen.normal(0.0, gain / np.sqrt(i), (o, i, 1, 1)), dtype=dtype, requires_grad=True)

        def z(*shape):
            return T.zeros(shape, dtype=dtype, requires_grad=True)

        return cls(
            fve_raw=T.tensor(gen.normal(0.0, 0.02, (m, n, c)), dtype=dtype, requires_grad=True),
            sce=T.tensor(gen.normal(0.0, 0.02, (m, n, c)), dtype=dtype, requires_grad=True),
            proj_in_w=w(c, c), proj_in_b=z(c, 1, 1),
            proj_out_w=w(c, c, 0.5), proj_out_b=z(c, 1, 1),
            mlp_w1=w(h, c), mlp_b1=z(h, 1, 1),
            mlp_w2=w(c, h, 0.5), mlp_b2=z(c, 1, 1),
            t=t, activation=activation,
        )

    @property
    def grid(self):
        m, n, c = self.fve_raw.shape
        return m, n, c

    def tensors(self) -> Dict[str, Tensor]:
        return {name: getattr(self, name) for name in self.TENSOR_FIELDS}

    @classmethod
    def from_tensors(cls, d: Dict[str, Tensor], t: float = 1.0, activation: str = "gelu") -> "HcoParams":
        return cls(**{name: d[name] for name in cls.TENSOR_FIELDS}, t=t, activation=activation)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.conv2d(x, w), b)


def hco_block(params: HcoParams, z: Tensor, path: str = "matmul", omega: str = "discrete") -> Tensor:
    """Residual HCO block on ``z`` [B, c, m, n] or [c, m, n].

    ``x = z + proj_out(HCO(proj_in(CL(z)), k=softplus(fve_raw), t))``
    then ``x + MLP(x)`` with a GELU MLP of 4x expansion.
    """
    m, n, c = params.grid
    if z.shape[-3:] != (c, m, n):
        raise ShapeError(f"hco_block expects [..., {c}, {m}, {n}], got {z.shape}")
    plan = make_plan(m, n, path, omega)
    x = correction_learn(z, params.sce, params.activation)
    x = _linear(x, params.proj_in_w, params.proj_in_b)
    x = hco_apply(plan, x, derive_k(params.fve_raw), params.t)
    x = _linear(x, params.proj_out_w, params.proj_out_b)
    x = T.add(z, x)
    h = T.gelu(_linear(x, params.mlp_w1, params.mlp_b1))
    return T.add(x, _linear(h, params.mlp_w2, params.mlp_b2))


def resize_field(field: np.ndarray, m: int, n: int) -> np.ndarray:
    """Bilinear resize of an [m0, n0, c] embedding field to [m, n, c] (align-corners)."""
    m0, n0, _ = field.shape
    if (m0, n0) == (m, n):
        return field.copy()
    ys = np.linspace(0, m0 - 1, m) if m > 1 else np.zeros(1)
    xs = np.linspace(0, n0 - 1, n) if n > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, m0 - 1)
    x1 = np.minimum(x0 + 1, n0 - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = field[y0][:, x0] * (1 - wx) + field[y0][:, x1] * wx
    bot = field[y1][:, x0] * (1 - wx) + field[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy
