"""Uniform P1 finite elements on an interval.

Nodal fields, the lumped (trapezoidal) inner product, interpolation and the
banded assembly of the coupled two-species system.  Unknowns of the coupled
system are interleaved by node: ``(u1_0, u2_0, u1_1, u2_1, ...)`` so that the
matrix has three sub- and three super-diagonals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from crossdiff.errors import MeshMismatch

NSPECIES = 2
BANDWIDTH = 2 * NSPECIES - 1  # lower == upper


@dataclass(frozen=True)
class Mesh1D:
    left: float
    right: float
    num_cells: int

    def __post_init__(self):
        if not (np.isfinite(self.left) and np.isfinite(self.right) and self.left < self.right):
            raise ValueError(f"mesh needs left < right, got ({self.left}, {self.right})")
        if int(self.num_cells) != self.num_cells or self.num_cells < 2:
            raise ValueError(f"mesh needs at least 2 cells, got {self.num_cells}")
        object.__setattr__(self, "num_cells", int(self.num_cells))

    @property
    def h(self) -> float:
        return (self.right - self.left) / self.num_cells

    @property
    def num_nodes(self) -> int:
        return self.num_cells + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.left, self.right, self.num_nodes)

    @property
    def midpoints(self) -> np.ndarray:
        x = self.nodes
        return 0.5 * (x[1:] + x[:-1])

    @property
    def weights(self) -> np.ndarray:
        """Lumped-mass weights: h inside, h/2 at the two endpoints."""
        w = np.full(self.num_nodes, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @property
    def measure(self) -> float:
        return self.right - self.left


@dataclass(frozen=True)
class NodalField:
    """A member of the P1 space, stored by its nodal values."""

    mesh: Mesh1D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.num_nodes,):
            raise ValueError(
                f"field has shape {v.shape}, mesh has {self.mesh.num_nodes} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh: Mesh1D, value: float) -> NodalField:
        return cls(mesh, np.full(mesh.num_nodes, float(value)))

    def __add__(self, other: NodalField) -> NodalField:
        _check_same_mesh(self, other)
        return NodalField(self.mesh, self.values + other.values)

    def __sub__(self, other: NodalField) -> NodalField:
        _check_same_mesh(self, other)
        return NodalField(self.mesh, self.values - other.values)

    def __mul__(self, scalar: float) -> NodalField:
        return NodalField(self.mesh, self.values * float(scalar))

    __rmul__ = __mul__

    def __len__(self) -> int:
        return self.mesh.num_nodes


def _check_same_mesh(*fields: NodalField) -> None:
    first = fields[0].mesh
    for f in fields[1:]:
        if f.mesh != first:
            raise MeshMismatch(f"fields live on different meshes: {first} vs {f.mesh}")


def lumped_inner(f: NodalField, g: NodalField) -> float:
    """Discrete semi-inner product ``sum_j w_j f_j g_j``."""
    _check_same_mesh(f, g)
    return float(np.dot(f.mesh.weights, f.values * g.values))


def _sample(func: Callable, mesh: Mesh1D) -> np.ndarray:
    x = mesh.nodes
    try:
        v = np.asarray(func(x), dtype=float)
        if v.shape != x.shape:
            v = np.broadcast_to(v, x.shape).copy()
    except (TypeError, ValueError):
        v = np.array([float(func(xi)) for xi in x])
    if not np.all(np.isfinite(v)):
        bad = x[~np.isfinite(v)]
        raise ValueError(f"non-finite sample at x={bad[0]!r}")
    return v


def interpolate(func: Callable, mesh: Mesh1D) -> NodalField:
    """Lagrange interpolant: nodal values ``func(x_j)``."""
    return NodalField(mesh, _sample(func, mesh))


def l2_project(func: Callable, mesh: Mesh1D) -> NodalField:
    # With lumped mass the projection of continuous data is the interpolant.
    return interpolate(func, mesh)


def element_gradient(f: NodalField) -> np.ndarray:
    return np.diff(f.values) / f.mesh.h


@dataclass
class BandedSystem:
    """Species-interleaved coupled system in LAPACK banded storage.

    ``ab[BANDWIDTH + i - j, j] == A[i, j]``, as expected by
    :func:`scipy.linalg.solve_banded` with ``(BANDWIDTH, BANDWIDTH)``.
    """

    ab: np.ndarray

    @property
    def size(self) -> int:
        return self.ab.shape[1]

    def to_dense(self) -> np.ndarray:
        n = self.size
        A = np.zeros((n, n))
        for d in range(-BANDWIDTH, BANDWIDTH + 1):
            row = BANDWIDTH - d
            if d >= 0:
                idx = np.arange(d, n)
                A[idx - d, idx] = self.ab[row, idx]
            else:
                idx = np.arange(0, n + d)
                A[idx - d, idx] = self.ab[row, idx]
        return A

    def matvec(self, x: np.ndarray) -> np.ndarray:
        n = self.size
        y = np.zeros(n)
        for d in range(-BANDWIDTH, BANDWIDTH + 1):
            row = BANDWIDTH - d
            if d >= 0:
                y[: n - d] += self.ab[row, d:] * x[d:]
            else:
                y[-d:] += self.ab[row, : n + d] * x[: n + d]
        return y


@numba.njit(cache=True)
def _assemble_kernel(blocks, reaction_diag, time_weight, h, w, advection):
    M = blocks.shape[0]
    ab = np.zeros((2 * BANDWIDTH + 1, NSPECIES * (M + 1)))
    for node in range(M + 1):
        for i in range(NSPECIES):
            ab[BANDWIDTH, NSPECIES * node + i] = (time_weight + reaction_diag[i, node]) * w[node]
    # Cell k couples nodes k and k+1; local stiffness [[1, -1], [-1, 1]].
    # A[r, c] sits at ab[BANDWIDTH + r - c, c] with r = 2k' + i, c = 2k + j.
    for k in range(M):
        for i in range(NSPECIES):
            for j in range(NSPECIES):
                c = blocks[k, i, j] / h
                lo, hi = 2 * k + j, 2 * (k + 1) + j
                ab[BANDWIDTH + i - j, lo] += c
                ab[BANDWIDTH + i - j, hi] += c
                ab[BANDWIDTH + i - j - 2, hi] -= c
                ab[BANDWIDTH + i - j + 2, lo] -= c
            # flux g*(u_k + u_{k+1}) tested with chi_{k+1} - chi_k
            g = 0.5 * advection[k, i]
            lo, hi = 2 * k + i, 2 * (k + 1) + i
            ab[BANDWIDTH, lo] -= g
            ab[BANDWIDTH - 2, hi] -= g
            ab[BANDWIDTH + 2, lo] += g
            ab[BANDWIDTH, hi] += g
    return ab


def assemble_banded(
    blocks: np.ndarray,
    reaction_diag: np.ndarray,
    time_weight: float,
    mesh: Mesh1D,
    advection: np.ndarray | None = None,
) -> BandedSystem:
    """Assemble ``time_weight*M + K(blocks) + M*diag(reaction_diag)``.

    ``blocks[k, i, j]`` multiplies the gradient of species ``j`` in the flux
    of species ``i`` on cell ``k``.  ``reaction_diag[i, node]`` is added to the
    diagonal with the lumped weight of the node.  M is the lumped mass matrix.
    ``advection[k, i]``, if given, adds the flux ``advection * mean(u_i)`` on
    cell ``k`` (centered, not symmetric).
    """
    M = mesh.num_cells
    blocks = np.asarray(blocks, dtype=float)
    reaction_diag = np.asarray(reaction_diag, dtype=float)
    if blocks.shape != (M, NSPECIES, NSPECIES):
        raise ValueError(f"blocks must have shape {(M, 2, 2)}, got {blocks.shape}")
    if reaction_diag.shape != (NSPECIES, M + 1):
        raise ValueError(
            f"reaction_diag must have shape {(2, M + 1)}, got {reaction_diag.shape}"
        )
    if not time_weight > 0:
        raise ValueError("time weight must be positive")

    if advection is None:
        advection = np.zeros((M, NSPECIES))
    else:
        advection = np.asarray(advection, dtype=float)
        if advection.shape != (M, NSPECIES):
            raise ValueError(f"advection must have shape {(M, 2)}, got {advection.shape}")
    ab = _assemble_kernel(blocks, reaction_diag, time_weight, mesh.h, mesh.weights, advection)
    return BandedSystem(ab)


def interleave(u: np.ndarray) -> np.ndarray:
    """(2, N) species-major array -> length-2N interleaved vector."""
    return np.asarray(u).T.reshape(-1)


def deinterleave(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, NSPECIES).T.copy()
