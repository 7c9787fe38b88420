"""Quantities of interest: entropy, mass, gradient norms, overlap, the
delta-scaling probe and the scalar solve for the total population."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import TYPE_CHECKING, Mapping, Sequence

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from crossdiff.errors import FixedPointDivergence, MeshMismatch, SingularSystem
from crossdiff.mesh_fe import Mesh1D, NodalField, element_gradient, lumped_inner
from crossdiff.regularization import RegParam, cell_mobility, f_eps, lambda_eps

if TYPE_CHECKING:
    from crossdiff.flux_models import Coefficients
    from crossdiff.time_stepper import SimulationState, SolverParams


@dataclass(frozen=True)
class DiagnosticRecord:
    n: int
    t: float
    mass1: float
    mass2: float
    entropy1: float
    entropy2: float
    grad1: float
    grad2: float
    overlap: float
    min1: float
    min2: float
    fp_iters: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> tuple:
        return astuple(self)

    @property
    def entropy(self) -> float:
        return self.entropy1 + self.entropy2


def mass(u: NodalField) -> float:
    return float(np.dot(u.mesh.weights, u.values))


def entropy(u: NodalField, reg: RegParam) -> float:
    """Lumped integral of F_eps(u)."""
    return float(np.dot(u.mesh.weights, f_eps(u.values, reg)))


def grad_l2_sq(u: NodalField) -> float:
    g = element_gradient(u)
    return float(u.mesh.h * np.dot(g, g))


def sqrt_grad_l2_sq(u: NodalField) -> float:
    """Squared L2 norm of the gradient of sqrt(max(u, 0))."""
    return grad_l2_sq(NodalField(u.mesh, np.sqrt(np.maximum(u.values, 0.0))))


def overlap(u1: NodalField, u2: NodalField) -> float:
    return lumped_inner(u1, u2)


def make_record(
    n: int, t: float, u1: NodalField, u2: NodalField, reg: RegParam, fp_iters: int = 0
) -> DiagnosticRecord:
    return DiagnosticRecord(
        n=n,
        t=t,
        mass1=mass(u1),
        mass2=mass(u2),
        entropy1=entropy(u1, reg),
        entropy2=entropy(u2, reg),
        grad1=grad_l2_sq(u1),
        grad2=grad_l2_sq(u2),
        overlap=overlap(u1, u2),
        min1=float(u1.values.min()),
        min2=float(u2.values.min()),
        fp_iters=fp_iters,
    )


def total_variation(u: NodalField) -> float:
    return float(np.abs(np.diff(u.values)).sum())


def space_time_grad(history: Sequence[DiagnosticRecord]) -> float:
    """Rectangle-rule ``sum_n (t_n - t_{n-1}) * sum_i |grad u_i^n|^2``."""
    total = 0.0
    for prev, rec in zip(history[:-1], history[1:]):
        total += (rec.t - prev.t) * (rec.grad1 + rec.grad2)
    return total


def delta_scaling_probe(results: Mapping[float, SimulationState]) -> list[tuple[float, float]]:
    """Rows ``(delta, delta * sum_i ||grad u_i||^2)`` sorted by delta.

    States carrying a step history are measured in space-time (rectangle rule
    over the recorded steps); states without history use their final fields.
    """
    meshes = {state.u1.mesh for state in results.values()}
    if len(meshes) > 1:
        raise MeshMismatch("delta-scaling runs use different meshes")
    rows = []
    for delta in sorted(results):
        state = results[delta]
        if len(state.history) > 1:
            g = space_time_grad(state.history)
        else:
            g = grad_l2_sq(state.u1) + grad_l2_sq(state.u2)
        rows.append((float(delta), float(delta) * g))
    return rows


def check_aggregate_shape(coeffs: Coefficients) -> None:
    """Raise unless all a_ij, b_i, c_i, alpha_i, beta_ij share one value each."""
    for name in ("a", "b", "c", "alpha", "beta"):
        v = np.asarray(getattr(coeffs, name))
        if not np.all(v == v.flat[0]):
            raise ValueError(
                f"aggregate problem needs equal {name} entries, got {v.tolist()}"
            )


@dataclass
class AggregateTrajectory:
    mesh: Mesh1D
    times: list[float]
    snapshots: list[NodalField]
    final: NodalField
    steps: int


def solve_aggregate(
    u0: NodalField,
    coeffs: Coefficients,
    delta: float,
    params: SolverParams,
    t_end: float | None = None,
    snapshots: Sequence[float] = (),
) -> AggregateTrajectory:
    """Evolve the total population ``u = u1 + u2`` with the scalar scheme.

    Flux ``(a + delta) u u' + b q u + c u'``, reaction ``u (alpha - beta u)``.
    Summing the BT-delta fluxes gives ``a (1 + delta) u u'``; the two agree
    for ``a = 1``, the case the contact-inhibition setup uses.  Discretized
    like the coupled solver: lumped P1, backward Euler, lagged mobility.
    """
    from crossdiff.time_stepper import AndersonMixer

    check_aggregate_shape(coeffs)
    if delta < 0:
        raise ValueError("delta must be non-negative")
    t_end = params.t_end if t_end is None else t_end
    if t_end is None:
        raise ValueError("t_end is required")
    mesh = u0.mesh
    reg = params.reg
    a = float(coeffs.a[0, 0]) + delta
    b, c = float(coeffs.b[0]), float(coeffs.c[0])
    alpha, beta = float(coeffs.alpha[0]), float(coeffs.beta[0, 0])
    w = mesh.weights
    h, tau = mesh.h, params.tau
    q = coeffs.drift_field(mesh).values
    q_cell = 0.5 * (q[:-1] + q[1:])

    nsteps = steps_for(t_end, tau)
    snap_steps = {steps_for(ts, tau): ts for ts in snapshots}
    times, snaps = [], []
    u = u0.values.copy()
    if 0 in snap_steps:
        times.append(0.0)
        snaps.append(NodalField(mesh, u))

    N = len(u)
    for n in range(1, nsteps + 1):
        prev = u
        lag = prev.copy()
        base = w * prev / tau
        mixer = AndersonMixer(params.anderson_depth)
        for k in range(1, params.max_fp_iters + 1):
            mob = cell_mobility(lag, reg)
            d = (a * mob + c) / h
            ab = np.zeros((3, N))
            ab[1] = w * (1.0 / tau - alpha)
            ab[1, :-1] += d
            ab[1, 1:] += d
            ab[0, 1:] = -d
            ab[2, :-1] = -d
            rhs = base.copy()
            if beta:
                rhs -= w * beta * lambda_eps(lag, reg) * lambda_eps(prev, reg)
            flux = mob * b * q_cell
            if params.linearize_mobility:
                # same first-order mobility correction as the coupled stepper
                v = a * np.diff(lag) / h + b * q_cell
                lo = np.minimum(lag[:-1], lag[1:])
                hi = np.maximum(lag[:-1], lag[1:])
                g = 0.5 * ((lo >= reg.eps) & (hi <= reg.inv)) * v
                ab[1, :-1] -= g
                ab[0, 1:] -= g
                ab[2, :-1] += g
                ab[1, 1:] += g
                flux = flux - g * (lag[:-1] + lag[1:])
            rhs[:-1] += flux
            rhs[1:] -= flux
            try:
                new = solve_banded((1, 1), ab, rhs, check_finite=False)
            except LinAlgError as exc:
                raise SingularSystem(f"aggregate solve failed: {exc}", step=n) from exc
            update = float(np.max(np.abs(new - lag)))
            if update < params.tol:
                lag = new
                break
            lag = mixer.mix(new, lag)
        else:
            raise FixedPointDivergence(
                f"aggregate fixed point did not reach tol={params.tol} in "
                f"{params.max_fp_iters} iterations (last update {update:.3e})",
                residual=update,
                step=n,
            )
        u = lag
        if n in snap_steps:
            times.append(n * tau)
            snaps.append(NodalField(mesh, u))
    return AggregateTrajectory(mesh, times, snaps, NodalField(mesh, u), nsteps)


def steps_for(t: float, tau: float) -> int:
    """Number of uniform steps needed to reach time ``t``."""
    if t <= 0:
        return 0
    return int(math.ceil(t / tau - 1e-9))
