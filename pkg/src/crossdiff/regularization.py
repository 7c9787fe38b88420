"""Entropy regularization: the convex density F_eps, its derivatives, the
clamped mobility lambda_eps = 1/F_eps'' and the per-cell mean-value mobility.

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

EPS_MAX = math.exp(-2.0)
# Relative threshold under which two F' values count as equal.
FPRIME_EQUAL_RTOL = 1e-14


@dataclass(frozen=True)
class RegParam:
    eps: float

    def __post_init__(self):
        if not 0.0 < self.eps < EPS_MAX:
            raise ValueError(f"eps must lie in (0, e^-2) = (0, {EPS_MAX:.6f}), got {self.eps}")

    @property
    def inv(self) -> float:
        return 1.0 / self.eps


def default_eps(h: float) -> float:
    """``h**2``, capped at 0.1 to stay inside ``(0, e^-2)``.

    Much smaller values put the kinks of the clamp at eps right where front
    iterates oscillate, and the fixed-point iteration stalls.
    """
    return min(h * h, 0.1)


def f_eps(s, reg: RegParam):
    eps, inv = reg.eps, reg.inv
    s = np.asarray(s, dtype=float)
    low = (s * s - eps * eps) / (2 * eps) + s * (math.log(eps) - 1) + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = s * (np.log(np.clip(s, eps, inv)) - 1) + 1
    high = eps * (s * s - inv * inv) / 2 + s * (math.log(inv) - 1) + 1
    out = np.where(s <= eps, low, np.where(s <= inv, mid, high))
    return out[()] if out.ndim == 0 else out


def f_eps_prime(s, reg: RegParam):
    eps, inv = reg.eps, reg.inv
    s = np.asarray(s, dtype=float)
    low = (s - eps) / eps + math.log(eps)
    mid = np.log(np.clip(s, eps, inv))
    high = eps * (s - inv) + math.log(inv)
    out = np.where(s <= eps, low, np.where(s <= inv, mid, high))
    return out[()] if out.ndim == 0 else out


def f_eps_second(s, reg: RegParam):
    return 1.0 / lambda_eps(s, reg)


def lambda_eps(s, reg: RegParam):
    """Mobility 1/F_eps'', i.e. ``s`` clamped to ``[eps, 1/eps]``."""
    out = np.clip(np.asarray(s, dtype=float), reg.eps, reg.inv)
    return out[()] if out.ndim == 0 else out


def _fprime_increment(lo: np.ndarray, hi: np.ndarray, reg: RegParam) -> np.ndarray:
    """F'(hi) - F'(lo) for lo <= hi, integrated branch by branch.

    Avoids the cancellation of subtracting two nearly equal logarithms.
    """
    eps, inv = reg.eps, reg.inv
    below = np.clip(hi, None, eps) - np.clip(lo, None, eps)
    above = np.clip(hi, inv, None) - np.clip(lo, inv, None)
    a = np.clip(lo, eps, inv)
    b = np.clip(hi, eps, inv)
    middle = np.log1p((b - a) / a)
    return below / eps + middle + eps * above


def _lambda_matrix_cell_np(zl: np.ndarray, zr: np.ndarray, reg: RegParam) -> np.ndarray:
    # reference implementation, kept for testing the compiled kernel
    lo = np.minimum(zl, zr)
    hi = np.maximum(zl, zr)
    dF = _fprime_increment(lo, hi, reg)
    scale = np.maximum(1.0, np.maximum(np.abs(f_eps_prime(zl, reg)), np.abs(f_eps_prime(zr, reg))))
    degenerate = dF <= FPRIME_EQUAL_RTOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = np.where(degenerate, 0.0, (hi - lo) / np.where(degenerate, 1.0, dF))
    out = np.where(degenerate, lambda_eps(0.5 * (zl + zr), reg), quotient)
    return np.clip(out, reg.eps, reg.inv)


@numba.njit(cache=True)
def _fprime_scalar(s, eps, inv):
    if s <= eps:
        return (s - eps) / eps + math.log(eps)
    if s <= inv:
        return math.log(s)
    return eps * (s - inv) + math.log(inv)


@numba.njit(cache=True)
def _lambda_matrix_cell_kernel(zl, zr, eps, rtol):
    inv = 1.0 / eps
    out = np.empty(zl.shape[0])
    for k in range(zl.shape[0]):
        lo = min(zl[k], zr[k])
        hi = max(zl[k], zr[k])
        a = min(max(lo, eps), inv)
        b = min(max(hi, eps), inv)
        dF = (
            (min(hi, eps) - min(lo, eps)) / eps
            + math.log1p((b - a) / a)
            + eps * (max(hi, inv) - max(lo, inv))
        )
        scale = max(1.0, abs(_fprime_scalar(zl[k], eps, inv)), abs(_fprime_scalar(zr[k], eps, inv)))
        if dF <= rtol * scale:
            v = 0.5 * (zl[k] + zr[k])
        else:
            v = (hi - lo) / dF
        out[k] = min(max(v, eps), inv)
    return out


def lambda_matrix_cell(z_left, z_right, reg: RegParam):
    """Cell mobility L with ``L * (F'(z_right) - F'(z_left)) = z_right - z_left``.

    By the mean-value theorem L is 1/F'' at an intermediate point, hence lies
    in ``[eps, 1/eps]``.  Where the F' values coincide the mobility at the
    midpoint is used instead.
    """
    zl, zr = np.broadcast_arrays(np.asarray(z_left, dtype=float), np.asarray(z_right, dtype=float))
    out = _lambda_matrix_cell_kernel(
        np.ascontiguousarray(zl).reshape(-1),
        np.ascontiguousarray(zr).reshape(-1),
        reg.eps,
        FPRIME_EQUAL_RTOL,
    ).reshape(zl.shape)
    return out[()] if out.ndim == 0 else out


def cell_mobility(values: np.ndarray, reg: RegParam) -> np.ndarray:
    """Per-cell mobility of a nodal vector (length M+1 -> length M)."""
    return lambda_matrix_cell(values[:-1], values[1:], reg)
