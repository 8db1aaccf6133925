"""Orthonormal 2-D DCT-II / DCT-III with a matmul path and a radix-2 FFT path."""

from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .tensor import Function, ShapeError, Tensor

PATHS = ("matmul", "fft")
OMEGA_CONVENTIONS = ("discrete", "continuous")

# flops per FFT butterfly: one complex multiply (6) + two complex adds (4)
BUTTERFLY_FLOPS = 10
# per output sample of a 1-D FFT-based DCT: twiddle (3) + orthonormal scale (1)
FFT_DCT_POST_FLOPS = 4


def dct_matrix(n: int, dtype=np.float64) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``u`` holds basis function ``u``."""
    x = np.arange(n)
    u = np.arange(n)[:, None]
    mat = np.cos(np.pi * (2 * x + 1) * u / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat.astype(dtype)


def angular_frequencies(n: int, convention: str = "discrete") -> np.ndarray:
    """Frequency grid for the heat filter along one axis.

    ``continuous`` gives ``pi*u/n``.  ``discrete`` gives ``2*sin(pi*u/(2n))``,
    whose square is the exact eigenvalue of the 3-point Neumann Laplacian on
    DCT mode ``u``; the filter then solves the grid heat equation exactly.
    """
    u = np.arange(n, dtype=np.float64)
    if convention == "continuous":
        return np.pi * u / n
    if convention == "discrete":
        return 2.0 * np.sin(np.pi * u / (2 * n))
    raise ValueError(f"unknown omega convention {convention!r}")


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class SpectralPlan:
    m: int
    n: int
    path: str = "matmul"
    omega: str = "discrete"
    basis_row: np.ndarray = field(repr=False, compare=False, default=None)
    basis_col: np.ndarray = field(repr=False, compare=False, default=None)
    omega_x: np.ndarray = field(repr=False, compare=False, default=None)
    omega_y: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def effective_path(self) -> str:
        """``fft`` only when both extents are powers of two."""
        if self.path == "fft" and _is_pow2(self.m) and _is_pow2(self.n):
            return "fft"
        return "matmul"

    def freq_sq(self) -> np.ndarray:
        """``omega_x^2 + omega_y^2`` on the [m, n] coefficient grid."""
        return self.omega_x[:, None] ** 2 + self.omega_y[None, :] ** 2


@functools.lru_cache(maxsize=64)
def make_plan(m: int, n: int, path: str = "matmul", omega: str = "discrete") -> SpectralPlan:
    if m < 1 or n < 1:
        raise ValueError(f"plan extents must be positive, got {m}x{n}")
    if path not in PATHS:
        raise ValueError(f"unknown transform path {path!r}")
    arrays = {
        "basis_row": dct_matrix(m),
        "basis_col": dct_matrix(n),
        "omega_x": angular_frequencies(m, omega),
        "omega_y": angular_frequencies(n, omega),
    }
    for a in arrays.values():
        a.flags.writeable = False
    return SpectralPlan(m=m, n=n, path=path, omega=omega, **arrays)


# ---------------------------------------------------------------------------
# radix-2 FFT (instrumented)
# ---------------------------------------------------------------------------

_counter = threading.local()


class butterfly_counter:
    """Context manager counting radix-2 butterflies executed in this thread."""

    def __enter__(self):
        self.prev = getattr(_counter, "count", None)
        _counter.count = 0
        return self

    def __exit__(self, *exc):
        self.count = _counter.count
        _counter.count = self.prev
        return False


def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 DIT FFT along the last axis (power-of-two length)."""
    n = x.shape[-1]
    if not _is_pow2(n):
        raise ValueError(f"fft length must be a power of two, got {n}")
    a = np.asarray(x, dtype=np.complex128)[..., _bitrev(n)]
    lead = a.shape[:-1]
    rows = int(np.prod(lead)) if lead else 1
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * w
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        if getattr(_counter, "count", None) is not None:
            _counter.count += rows * (n // 2)
        size *= 2
    return a


def ifft(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(fft(np.conj(x))) / n


def _dct1_fft(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis via one length-n FFT."""
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    v = np.concatenate([x[..., ::2], x[..., 1::2][..., ::-1]], axis=-1)
    V = fft(v)
    k = np.arange(n)
    c = np.real(V * np.exp(-1j * np.pi * k / (2 * n)))
    scale = np.full(n, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return c * scale


def _idct1_fft(X: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_dct1_fft` (orthonormal DCT-III)."""
    n = X.shape[-1]
    if n == 1:
        return X.copy()
    scale = np.full(n, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    c = X / scale
    k = np.arange(n)
    c_rev = np.concatenate([np.zeros_like(c[..., :1]), c[..., :0:-1]], axis=-1)
    V = np.exp(1j * np.pi * k / (2 * n)) * (c - 1j * c_rev)
    V[..., 0] = c[..., 0]
    v = np.real(ifft(V))
    # undo v[k] = x[2k], v[n-1-k] = x[2k+1]
    out = np.empty_like(v)
    half = (n + 1) // 2
    out[..., ::2] = v[..., :half]
    out[..., 1::2] = v[..., half:][..., ::-1]
    return out


# ---------------------------------------------------------------------------
# 2-D transforms
# ---------------------------------------------------------------------------


def _check_extents(plan: SpectralPlan, shape) -> None:
    if len(shape) < 2 or shape[-2] != plan.m or shape[-1] != plan.n:
        raise ShapeError(f"transform extents {tuple(shape[-2:])} do not match plan {plan.m}x{plan.n}")


def dct2_array(plan: SpectralPlan, x: np.ndarray) -> np.ndarray:
    _check_extents(plan, x.shape)
    if plan.effective_path == "fft":
        y = _dct1_fft(x.astype(np.float64))
        y = np.swapaxes(_dct1_fft(np.swapaxes(y, -1, -2)), -1, -2)
        return y.astype(x.dtype)
    br = plan.basis_row.astype(x.dtype, copy=False)
    bc = plan.basis_col.astype(x.dtype, copy=False)
    return np.matmul(np.matmul(br, x), bc.T)


def idct2_array(plan: SpectralPlan, X: np.ndarray) -> np.ndarray:
    _check_extents(plan, X.shape)
    if plan.effective_path == "fft":
        y = _idct1_fft(X.astype(np.float64))
        y = np.swapaxes(_idct1_fft(np.swapaxes(y, -1, -2)), -1, -2)
        return y.astype(X.dtype)
    br = plan.basis_row.astype(X.dtype, copy=False)
    bc = plan.basis_col.astype(X.dtype, copy=False)
    return np.matmul(np.matmul(br.T, X), bc)


class Dct2(Function):
    name = "dct2"

    def forward(self, x, plan=None):
        self.saved["plan"] = plan
        return dct2_array(plan, x)

    def backward(self, g):
        # orthonormal: adjoint == inverse
        return (idct2_array(self.saved["plan"], g),)


class Idct2(Function):
    name = "idct2"

    def forward(self, X, plan=None):
        self.saved["plan"] = plan
        return idct2_array(plan, X)

    def backward(self, g):
        return (dct2_array(self.saved["plan"], g),)


def dct2(plan: SpectralPlan, x: Tensor) -> Tensor:
    """Separable orthonormal DCT-II over the last two axes."""
    return Dct2.apply(x, plan=plan)


def idct2(plan: SpectralPlan, X: Tensor) -> Tensor:
    """Orthonormal DCT-III (inverse of :func:`dct2`) over the last two axes."""
    return Idct2.apply(X, plan=plan)


def _fft_dct1_flops(n: int) -> int:
    if n == 1:
        return 0
    return BUTTERFLY_FLOPS * (n // 2) * int(math.log2(n)) + FFT_DCT_POST_FLOPS * n


def flops_dct2(plan: SpectralPlan, channels: int = 1) -> int:
    """Flop count of one 2-D transform, multiply+add counted as 2 flops.

    matmul path: ``C * 2 * (m*n*m + m*n*n)``.
    fft path: ``C * (m * f(n) + n * f(m))`` with
    ``f(L) = 10 * (L/2) * log2(L) + 4 * L``, i.e. ``5 * C*m*n*log2(m*n)``
    plus a linear term.
    """
    m, n = plan.m, plan.n
    if plan.effective_path == "fft":
        return channels * (m * _fft_dct1_flops(n) + n * _fft_dct1_flops(m))
    return channels * (m * n * m + m * n * n) * 2
