"""Model data and the lagged-coefficient linearization of the three fluxes.

Fluxes (per species ``i``, ``j != i``)::

    BT:        u_i (a_i1 u_1' + a_i2 u_2')
    SKT:       (u_i (a_i1 u_1 + a_i2 u_2))'
    BT-delta:  BT + delta/2 * SKT

each plus the drift ``b_i u_i q`` and linear diffusion ``c_i u_i'``.  Every
flux is written as ``B(u_lag) grad(u)`` with a per-cell 2x2 block ``B`` so a
single banded system serves all three.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from crossdiff.errors import MeshMismatch
from crossdiff.mesh_fe import NodalField, interpolate
from crossdiff.regularization import RegParam, cell_mobility, lambda_eps

FLUX_KINDS = ("BT", "SKT", "BT_delta")


def _zero_drift(x):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Coefficients:
    """Constant model coefficients and the drift field ``q(x)``."""

    a: np.ndarray
    b: np.ndarray = field(default_factory=lambda: np.zeros(2))
    c: np.ndarray = field(default_factory=lambda: np.zeros(2))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(2))
    beta: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    q: Callable = _zero_drift

    def __post_init__(self):
        shapes = {"a": (2, 2), "b": (2,), "c": (2,), "alpha": (2,), "beta": (2, 2)}
        for name, shape in shapes.items():
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != shape:
                raise ValueError(f"coefficient {name} must have shape {shape}, got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"coefficient {name} is not finite")
            if name != "b" and np.any(v < 0):
                raise ValueError(f"coefficient {name} must be non-negative, got {v.tolist()}")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def omega(self) -> float:
        """Reaction growth bound ``max_i (2 alpha_i + beta_i1 + beta_i2)``."""
        return float(np.max(2 * self.alpha + self.beta.sum(axis=1)))

    def drift_field(self, mesh) -> NodalField:
        return interpolate(self.q, mesh)


@dataclass(frozen=True)
class FluxKind:
    name: str = "BT"
    delta: float = 0.0

    def __post_init__(self):
        if self.name not in FLUX_KINDS:
            raise ValueError(f"unknown flux kind {self.name!r}; expected one of {FLUX_KINDS}")
        if self.name == "BT_delta" and not self.delta > 0:
            raise ValueError(f"BT_delta needs delta > 0, got {self.delta}")
        if self.name != "BT_delta" and self.delta != 0:
            raise ValueError(f"delta is only meaningful for BT_delta, got {self.delta}")

    @classmethod
    def BT(cls) -> FluxKind:
        return cls("BT")

    @classmethod
    def SKT(cls) -> FluxKind:
        return cls("SKT")

    @classmethod
    def BTDelta(cls, delta: float) -> FluxKind:
        return cls("BT_delta", float(delta))

    @classmethod
    def from_delta(cls, delta: float) -> FluxKind:
        """BT for ``delta == 0``, BT-delta otherwise."""
        return cls.BT() if delta == 0 else cls.BTDelta(delta)

    def __str__(self) -> str:
        return f"BT_delta({self.delta:g})" if self.name == "BT_delta" else self.name


def ellipticity_margin(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(4 * a[0, 0] * a[1, 1] - (a[0, 1] + a[1, 0]) ** 2)


def _check_pair(u1: NodalField, u2: NodalField) -> None:
    if u1.mesh != u2.mesh:
        raise MeshMismatch("species fields live on different meshes")


def _cell_average_lambda(values: np.ndarray, reg: RegParam) -> np.ndarray:
    lam = lambda_eps(values, reg)
    return 0.5 * (lam[:-1] + lam[1:])


def _bt_blocks(cell_mob: np.ndarray, a: np.ndarray) -> np.ndarray:
    # B_ij = a_ij * Lambda_i
    return cell_mob[:, :, None] * a[None, :, :]


def _skt_blocks(cell_mob: np.ndarray, cell_lam: np.ndarray, a: np.ndarray) -> np.ndarray:
    B = _bt_blocks(cell_mob, a)
    # advective part of the product rule: (a_i1 u_1 + a_i2 u_2) grad u_i
    pressure = cell_lam @ a.T  # (M, 2): sum_k a_ik lam_k
    B[:, 0, 0] += pressure[:, 0]
    B[:, 1, 1] += pressure[:, 1]
    return B


def diffusion_blocks(
    kind: FluxKind,
    u1_lag: NodalField,
    u2_lag: NodalField,
    coeffs: Coefficients,
    reg: RegParam,
) -> np.ndarray:
    """Per-cell blocks ``B[k, i, j]`` of the linearized diffusive flux."""
    _check_pair(u1_lag, u2_lag)
    return _diffusion_blocks_arr(kind, np.stack([u1_lag.values, u2_lag.values]), coeffs, reg)


def _cell_mobilities(u_lag: np.ndarray, reg: RegParam) -> np.ndarray:
    """(M, 2) cell mobilities of both species."""
    return np.stack([cell_mobility(u_lag[0], reg), cell_mobility(u_lag[1], reg)], axis=1)


def _diffusion_blocks_arr(
    kind: FluxKind,
    u_lag: np.ndarray,
    coeffs: Coefficients,
    reg: RegParam,
    cell_mob: np.ndarray | None = None,
) -> np.ndarray:
    a = coeffs.a
    if cell_mob is None:
        cell_mob = _cell_mobilities(u_lag, reg)
    if kind.name == "BT":
        B = _bt_blocks(cell_mob, a)
    else:
        cell_lam = np.stack(
            [_cell_average_lambda(u_lag[0], reg), _cell_average_lambda(u_lag[1], reg)], axis=1
        )
        if kind.name == "SKT":
            B = _skt_blocks(cell_mob, cell_lam, a)
        else:
            B = _bt_blocks(cell_mob, a) + 0.5 * kind.delta * _skt_blocks(cell_mob, cell_lam, a)
    B[:, 0, 0] += coeffs.c[0]
    B[:, 1, 1] += coeffs.c[1]
    return B


def drift_load(
    u_lag: NodalField, species: int, coeffs: Coefficients, reg: RegParam
) -> np.ndarray:
    """Per-cell drift flux ``Lambda_i * b_i * mean(q)`` of one species."""
    q = coeffs.drift_field(u_lag.mesh).values
    return _drift_load_arr(u_lag.values, coeffs.b[species], 0.5 * (q[:-1] + q[1:]), reg)


def _drift_load_arr(u_lag: np.ndarray, b: float, q_cell: np.ndarray, reg: RegParam) -> np.ndarray:
    if b == 0:
        return np.zeros(len(u_lag) - 1)
    return cell_mobility(u_lag, reg) * b * q_cell


def _mobility_factor(kind: FluxKind) -> float:
    # coefficient of Lambda_i * a_ij in the blocks of each family
    return 1.0 + 0.5 * kind.delta if kind.name == "BT_delta" else 1.0


def _mobility_split_arr(
    kind: FluxKind,
    u_lag: np.ndarray,
    coeffs: Coefficients,
    reg: RegParam,
    q_cell: np.ndarray,
    h: float,
    cell_mob: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """First-order correction for the lagged mobility ``Lambda_i``.

    The part of the flux of species ``i`` carried by ``Lambda_i`` is
    ``Lambda_i * V_i`` with ``V_i = sum_j A_ij grad u_j + b_i q``.  Besides the
    lagged flux the iterate gets ``theta V_i (mean(u_i) - mean(u_i_lag))`` with
    ``V_i`` lagged and ``theta = 1`` on cells whose lagged values lie in
    ``[eps, 1/eps]`` (where ``Lambda`` is the identity to first order), 0
    elsewhere.  The correction vanishes at a fixed point, so the discrete
    solution is unchanged; it removes the cycling of the plain iteration where
    a steep gradient of one species meets a thin layer of the other.

    Returns ``(adv, load)``: ``adv[k, i] = theta V_i`` multiplies the implicit
    cell mean, ``load[i, k] = Lambda_i b_i q - theta V_i mean(u_i_lag)`` is the
    explicit cell flux (drift included).  ``cell_mob`` may pass precomputed
    cell mobilities, shape (M, 2).
    """
    if cell_mob is None:
        cell_mob = _cell_mobilities(u_lag, reg)
    A = _mobility_factor(kind) * coeffs.a
    return _mobility_split_kernel(u_lag, cell_mob, A, coeffs.b, q_cell, h, reg.eps, reg.inv)


@numba.njit(cache=True)
def _mobility_split_kernel(u_lag, cell_mob, A, b, q_cell, h, eps, inv):
    M = u_lag.shape[1] - 1
    adv = np.zeros((M, 2))
    load = np.zeros((2, M))
    for k in range(M):
        g0 = (u_lag[0, k + 1] - u_lag[0, k]) / h
        g1 = (u_lag[1, k + 1] - u_lag[1, k]) / h
        for i in range(2):
            v = A[i, 0] * g0 + A[i, 1] * g1 + b[i] * q_cell[k]
            lo = min(u_lag[i, k], u_lag[i, k + 1])
            hi = max(u_lag[i, k], u_lag[i, k + 1])
            load[i, k] = cell_mob[k, i] * b[i] * q_cell[k]
            if lo >= eps and hi <= inv:
                adv[k, i] = v
                load[i, k] -= v * 0.5 * (u_lag[i, k] + u_lag[i, k + 1])
    return adv, load


def reaction_terms(
    u_lag: tuple[NodalField, NodalField],
    u_prev: tuple[NodalField, NodalField],
    coeffs: Coefficients,
    reg: RegParam,
) -> tuple[np.ndarray, np.ndarray]:
    """Lotka-Volterra terms split into an implicit diagonal and an explicit load.

    Returns ``(diag, load)`` of shape (2, nodes): ``diag`` is ``-alpha_i`` (it
    sits on the left-hand side), ``load`` is
    ``-lambda(u_lag_i) * (beta_i1 lambda(u_prev_1) + beta_i2 lambda(u_prev_2))``.
    """
    _check_pair(*u_lag)
    _check_pair(*u_prev)
    _check_pair(u_lag[0], u_prev[0])
    lag = np.stack([f.values for f in u_lag])
    prev = np.stack([f.values for f in u_prev])
    return _reaction_terms_arr(lag, prev, coeffs, reg)


def _reaction_terms_arr(lag: np.ndarray, prev: np.ndarray, coeffs: Coefficients, reg: RegParam):
    n = lag.shape[1]
    diag = np.repeat(-coeffs.alpha[:, None], n, axis=1)
    if not np.any(coeffs.beta):
        return diag, np.zeros_like(lag)
    competition = coeffs.beta @ lambda_eps(prev, reg)  # (2, n)
    return diag, -lambda_eps(lag, reg) * competition
