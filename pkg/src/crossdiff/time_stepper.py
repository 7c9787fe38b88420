"""Backward Euler in time with a lagged-coefficient fixed-point iteration.

At step ``n`` the iterate ``u^{n,k}`` solves a linear banded system whose
mobilities and competition factor are evaluated at ``u^{n,k-1}``; the
iteration stops when ``max_i |u_i^{n,k} - u_i^{n,k-1}|_inf < tol``.  The
sequence of lagged states is Anderson-accelerated (``anderson_depth``; 0 gives
the plain iteration), and the lagged mobility can be corrected to first order
(``linearize_mobility``).  Neither changes the fixed point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numba
import numpy as np

from crossdiff.diagnostics import DiagnosticRecord, make_record, steps_for
from crossdiff.errors import (
    CrossDiffError,
    FixedPointDivergence,
    MeshMismatch,
    NoSteadyState,
    SingularSystem,
)
from crossdiff.flux_models import (
    Coefficients,
    FluxKind,
        _mobility_factor,
    _mobility_split_kernel,
    _reaction_terms_arr,
)
from crossdiff.mesh_fe import BANDWIDTH, NodalField, _assemble_kernel, deinterleave
from crossdiff.regularization import FPRIME_EQUAL_RTOL, RegParam, _lambda_matrix_cell_kernel

log = logging.getLogger(__name__)

ANDERSON_RESTART = 2.0

# Source term hook for manufactured solutions: (t, x) -> array (2, nodes).
Source = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SolverParams:
    reg: RegParam
    tau: float
    tol: float = 1e-7
    tol_S: float = 5e-8
    max_fp_iters: int = 200
    delta0: float = 0.5
    t_end: float | None = None
    anderson_depth: int = 3
    linearize_mobility: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.tol > 0 or not self.tol_S > 0:
            raise ValueError("tol and tol_S must be positive")
        if not 0 < self.delta0 < 1:
            raise ValueError(f"delta0 must lie in (0, 1), got {self.delta0}")
        if int(self.max_fp_iters) != self.max_fp_iters or self.max_fp_iters < 1:
            raise ValueError("max_fp_iters must be a positive integer")
        if int(self.anderson_depth) != self.anderson_depth or self.anderson_depth < 0:
            raise ValueError("anderson_depth must be a non-negative integer")
        if self.t_end is not None and self.t_end < 0:
            raise ValueError("t_end must be non-negative")


@dataclass(frozen=True)
class TimeConstraint:
    ok: bool
    omega: float
    limit: float

    def __bool__(self) -> bool:
        return self.ok


def check_time_constraint(params: SolverParams, coeffs: Coefficients) -> TimeConstraint:
    """``omega * tau <= 1 - delta0`` with ``omega = max_i(2 alpha_i + beta_i1 + beta_i2)``."""
    omega = coeffs.omega
    return TimeConstraint(omega * params.tau <= 1 - params.delta0, omega, 1 - params.delta0)


@dataclass
class SimulationState:
    u1: NodalField
    u2: NodalField
    n: int = 0
    tau: float = 0.0
    fp_iters: int = 0
    first_update: float = math.inf
    stationary: bool = False
    history: list[DiagnosticRecord] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.u1.mesh != self.u2.mesh:
            raise MeshMismatch("species fields live on different meshes")

    @property
    def t(self) -> float:
        return self.n * self.tau

    @property
    def mesh(self):
        return self.u1.mesh

    @property
    def u(self) -> np.ndarray:
        return np.stack([self.u1.values, self.u2.values])


def initial_state(u1: NodalField, u2: NodalField, params: SolverParams) -> SimulationState:
    state = SimulationState(u1, u2, tau=params.tau)
    state.history.append(make_record(0, 0.0, u1, u2, params.reg))
    return state


class Stepper:
    """Caches the per-run data of one (mesh, flux, coefficients, params) setup."""

    def __init__(
        self,
        mesh,
        kind: FluxKind,
        coeffs: Coefficients,
        params: SolverParams,
        source: Source | None = None,
    ):
        verdict = check_time_constraint(params, coeffs)
        if not verdict:
            raise ValueError(
                f"time step violates omega*tau <= 1 - delta0: omega={verdict.omega:g}, "
                f"tau={params.tau:g}, limit={verdict.limit:g}"
            )
        if params.tau > mesh.h**2:
            log.warning(
                "first step tau=%g exceeds h^2=%g; convergence theory asks tau_1 <= C h^2",
                params.tau,
                mesh.h**2,
            )
        self.mesh = mesh
        self.kind = kind
        self.coeffs = coeffs
        self.params = params
        self.source = source
        self.w = mesh.weights
        q = coeffs.drift_field(mesh).values
        self.q_cell = 0.5 * (q[:-1] + q[1:])

    def step(self, state: SimulationState, record: bool = True) -> SimulationState:
        params, reg = self.params, self.params.reg
        prev = state.u
        t_new = (state.n + 1) * params.tau
        base = self.w * prev / params.tau
        if self.source is not None:
            base = base + self.w * np.asarray(self.source(t_new, self.mesh.nodes), dtype=float)
        diag, _ = _reaction_terms_arr(prev, prev, self.coeffs, reg)

        c = self.coeffs
        k = 0
        for depth, restart, damping in _fallbacks(params.anderson_depth):
            lag, iters, update1, update, info = _fixed_point_loop(
                prev, base, diag, _KIND_CODES[self.kind.name], self.kind.delta,
                c.a, _mobility_factor(self.kind) * c.a, c.b, c.c, c.beta, self.q_cell,
                self.mesh.h, self.w, reg.eps, FPRIME_EQUAL_RTOL, 1.0 / params.tau,
                params.linearize_mobility, params.tol, params.max_fp_iters,
                depth, restart, damping,
            )
            if k == 0:
                first_update = update1
            k += iters
            if info or update < params.tol:
                break
            log.debug(
                "step %d: no convergence with depth=%d restart=%g damping=%g, retrying",
                state.n + 1, depth, restart, damping,
            )
        if info > 0:
            raise SingularSystem(f"banded solve failed: zero pivot in row {info}", pivot=int(info))
        if info < 0:
            raise SingularSystem("banded solve produced non-finite values", pivot=-int(info) - 1)
        if not update < params.tol:
            raise FixedPointDivergence(
                f"fixed point did not reach tol={params.tol:g} in {params.max_fp_iters} "
                f"iterations under any mixing strategy at step {state.n + 1} "
                f"(last update {update:.3e})",
                residual=update,
                step=state.n + 1,
            )

        u1 = NodalField(self.mesh, lag[0])
        u2 = NodalField(self.mesh, lag[1])
        new_state = replace(
            state,
            u1=u1,
            u2=u2,
            n=state.n + 1,
            tau=params.tau,
            fp_iters=k,
            first_update=first_update,
            stationary=False,
            history=state.history,
        )
        if record:
            state.history.append(make_record(new_state.n, new_state.t, u1, u2, reg, k))
        return new_state


class AndersonMixer:
    """Anderson acceleration of the lagged-coefficient fixed-point map ``G``.

    The next iterate is the affine combination of the last ``depth + 1``
    images ``G(x_j)`` minimizing the linearized residual.  Weights sum to one,
    so fixed points and the discrete mass are those of the plain iteration.
    ``depth = 0`` is the plain iteration ``x <- G(x)``, which can lock into a
    two-cycle where a front meets a vanishing species.

    The map is only piecewise smooth (the clamp at eps), so the secant model
    can go stale; when the residual exceeds ``restart`` times the best one
    seen, the history is dropped and the iteration restarts from ``G(x)``.
    """

    def __init__(self, depth: int = 3, restart: float = ANDERSON_RESTART):
        self.depth = depth
        self.restart = restart
        self._g: list[np.ndarray] = []
        self._f: list[np.ndarray] = []
        self._best = math.inf

    def mix(self, g: np.ndarray, x: np.ndarray) -> np.ndarray:
        if self.depth == 0:
            return g
        shape = g.shape
        g, f = g.ravel(), (g - x).ravel()
        res = float(np.max(np.abs(f)))
        if res > self.restart * self._best:
            self._g, self._f = [], []
            self._best = res
        self._best = min(self._best, res)
        self._g = (self._g + [g])[-(self.depth + 1):]
        self._f = (self._f + [f])[-(self.depth + 1):]
        return _anderson_combine(np.array(self._g), np.array(self._f), len(self._f) - 1).reshape(shape)


_KIND_CODES = {"BT": 0, "SKT": 1, "BT_delta": 2}


def _fallbacks(depth: int):
    """Mixing strategies tried in turn, each with the full iteration budget:
    Anderson with restarts, Anderson without, then the half-damped plain
    iteration.  All share the fixed point; each one cycles on some preset
    where another converges."""
    out = [(depth, ANDERSON_RESTART, 1.0)] if depth else [(0, math.inf, 1.0)]
    if depth:
        out.append((depth, math.inf, 1.0))
    out.append((0, math.inf, 0.5))
    return out


@numba.njit(cache=True)
def _anderson_combine(G, F, m):
    """Anderson iterate from the ``m + 1`` newest rows of ``G``, ``F`` (newest last)."""
    g, f = G[m], F[m]
    if m == 0:
        return g.copy()
    dF = np.empty((g.size, m))
    dG = np.empty((g.size, m))
    for j in range(m):
        dF[:, j] = F[j + 1] - F[j]
        dG[:, j] = G[j + 1] - G[j]
    gamma = np.linalg.lstsq(dF, f)[0]
    return g - dG @ gamma


@numba.njit(cache=True)
def _fixed_point_loop(
    prev, base, diag, kind, delta, a, a_mob, b, c, beta, q_cell, h, w, eps, rtol,
    time_weight, linearize, tol, max_iters, depth, restart, damping,
):
    """Lagged-coefficient iteration of one backward Euler step.

    Per iterate: cell mobilities, flux blocks, competition and drift loads,
    banded assembly and solve, then Anderson mixing of the damped images
    ``lag + damping * (G(lag) - lag)``.  Returns
    ``(u, iters, first_update, last_update, info)``; ``info`` is a zero-pivot
    row (> 0), ``-(row + 1)`` for a non-finite solution, else 0.
    """
    inv = 1.0 / eps
    N = prev.shape[1]
    M = N - 1
    n = 2 * N
    competition = np.zeros((2, N))
    has_beta = False
    for i in range(2):
        for j in range(2):
            if beta[i, j] != 0.0:
                has_beta = True
    if has_beta:
        for i in range(2):
            for node in range(N):
                competition[i, node] = beta[i, 0] * min(max(prev[0, node], eps), inv) + beta[
                    i, 1
                ] * min(max(prev[1, node], eps), inv)
    G = np.zeros((depth + 1, n))
    F = np.zeros((depth + 1, n))
    stored = 0
    best = np.inf
    lag = prev.copy()
    first_update = np.inf
    update = np.inf
    blocks = np.empty((M, 2, 2))
    rhs = np.empty(n)
    for it in range(1, max_iters + 1):
        cell_mob = np.empty((M, 2))
        for i in range(2):
            cell_mob[:, i] = _lambda_matrix_cell_kernel(lag[i, :-1], lag[i, 1:], eps, rtol)
        for k in range(M):
            lam0 = 0.5 * (min(max(lag[0, k], eps), inv) + min(max(lag[0, k + 1], eps), inv))
            lam1 = 0.5 * (min(max(lag[1, k], eps), inv) + min(max(lag[1, k + 1], eps), inv))
            for i in range(2):
                for j in range(2):
                    blocks[k, i, j] = cell_mob[k, i] * a[i, j]
                if kind != 0:
                    # pressure term of the SKT product rule
                    pressure = a[i, 0] * lam0 + a[i, 1] * lam1
                    if kind == 1:
                        blocks[k, i, i] += pressure
                    else:
                        for j in range(2):
                            blocks[k, i, j] *= 1.0 + 0.5 * delta
                        blocks[k, i, i] += 0.5 * delta * pressure
                blocks[k, i, i] += c[i]
        if linearize:
            adv, flux = _mobility_split_kernel(lag, cell_mob, a_mob, b, q_cell, h, eps, inv)
        else:
            adv = np.zeros((M, 2))
            flux = np.empty((2, M))
            for i in range(2):
                flux[i] = cell_mob[:, i] * b[i] * q_cell
        for i in range(2):
            for node in range(N):
                load = 0.0
                if has_beta:
                    load = -min(max(lag[i, node], eps), inv) * competition[i, node]
                r = base[i, node] + w[node] * load
                if node < M:
                    r += flux[i, node]
                if node > 0:
                    r -= flux[i, node - 1]
                rhs[2 * node + i] = r
        ab = _assemble_kernel(blocks, diag, time_weight, h, w, adv)
        x, info = _gbsv_kernel(ab, rhs, BANDWIDTH, BANDWIDTH)
        if info > 0:
            return lag, it, first_update, update, info
        for r in range(n):
            if not np.isfinite(x[r]):
                return lag, it, first_update, update, -(r + 1)
        new = x.reshape(N, 2).T.copy()
        update = np.max(np.abs(new - lag))
        if it == 1:
            first_update = update
        if update < tol:
            return new, it, first_update, update, 0
        if depth == 0:
            lag = lag + damping * (new - lag)
            continue
        g = (lag + damping * (new - lag)).T.copy().reshape(-1)
        f = g - lag.T.copy().reshape(-1)
        res = np.max(np.abs(f))
        if res > restart * best:
            stored = 0
            best = res
        best = min(best, res)
        if stored == depth + 1:
            for j in range(depth):
                G[j] = G[j + 1]
                F[j] = F[j + 1]
        else:
            stored += 1
        G[stored - 1] = g
        F[stored - 1] = f
        lag = _anderson_combine(G, F, stored - 1).reshape(N, 2).T.copy()
    return lag, max_iters, first_update, update, 0


@numba.njit(cache=True)
def _gbsv_kernel(ab, rhs, kl, ku):
    """Banded LU with partial pivoting (the gbtf2/gbtrs scheme) and solve.

    ``ab`` is the band of ``A`` with ``A[r, c] = ab[ku + r - c, c]``.  Returns
    ``(x, info)``; ``info = j + 1`` for a zero pivot in column ``j``.
    """
    n = ab.shape[1]
    kv = ku + kl
    w = np.zeros((2 * kl + ku + 1, n))
    w[kl:, :] = ab
    b = rhs.copy()
    piv = np.zeros(n, dtype=np.int64)
    ju = 0
    for j in range(n):
        km = min(kl, n - 1 - j)
        jp = 0
        big = abs(w[kv, j])
        for p in range(1, km + 1):
            if abs(w[kv + p, j]) > big:
                big = abs(w[kv + p, j])
                jp = p
        piv[j] = j + jp
        if w[kv + jp, j] == 0.0:
            return b, j + 1
        ju = max(ju, min(j + ku + jp, n - 1))
        if jp != 0:
            # A[r, c] lives at w[kv + r - c, c]
            for c in range(j, ju + 1):
                tmp = w[kv + j - c, c]
                w[kv + j - c, c] = w[kv + j + jp - c, c]
                w[kv + j + jp - c, c] = tmp
        d = w[kv, j]
        for p in range(1, km + 1):
            w[kv + p, j] /= d
        for c in range(j + 1, ju + 1):
            ujc = w[kv + j - c, c]
            if ujc != 0.0:
                for p in range(1, km + 1):
                    w[kv + j + p - c, c] -= w[kv + p, j] * ujc
    for j in range(n):
        km = min(kl, n - 1 - j)
        if piv[j] != j:
            tmp = b[j]
            b[j] = b[piv[j]]
            b[piv[j]] = tmp
        for p in range(1, km + 1):
            b[j + p] -= w[kv + p, j] * b[j]
    for j in range(n - 1, -1, -1):
        b[j] /= w[kv, j]
        for r in range(max(0, j - kv), j):
            b[r] -= w[kv + r - j, j] * b[j]
    return b, 0


def _solve(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Banded LU solve with partial pivoting."""
    x, info = _gbsv_kernel(
        np.ascontiguousarray(ab, dtype=float), np.asarray(rhs, dtype=float), BANDWIDTH, BANDWIDTH
    )
    if info > 0:
        raise SingularSystem(f"banded solve failed: zero pivot in row {info}", pivot=int(info))
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise SingularSystem(f"banded solve produced non-finite values at row {bad}", pivot=bad)
    return deinterleave(x)


def fixed_point_step(
    state: SimulationState,
    kind: FluxKind,
    coeffs: Coefficients,
    params: SolverParams,
    source: Source | None = None,
) -> SimulationState:
    """Advance one backward Euler step."""
    return Stepper(state.mesh, kind, coeffs, params, source).step(state)


@dataclass
class Trajectory:
    final: SimulationState
    times: list[float] = field(default_factory=list)
    snapshots: list[tuple[NodalField, NodalField]] = field(default_factory=list)


def _run(stepper: Stepper, state: SimulationState, nsteps: int, record_every: int, snap_steps):
    traj = Trajectory(state)
    if 0 in snap_steps:
        traj.times.append(0.0)
        traj.snapshots.append((state.u1, state.u2))
    for _ in range(nsteps):
        n_next = state.n + 1
        try:
            state = stepper.step(state, record=(n_next % record_every == 0 or n_next == nsteps))
        except CrossDiffError as exc:
            if getattr(exc, "step", None) is None:
                exc.step = n_next
            raise
        if state.n in snap_steps:
            traj.times.append(state.t)
            traj.snapshots.append((state.u1, state.u2))
    traj.final = state
    return traj


def solve_to_time(
    initial: tuple[NodalField, NodalField],
    kind: FluxKind,
    coeffs: Coefficients,
    params: SolverParams,
    snapshots: Sequence[float] = (),
    record_every: int = 1,
    source: Source | None = None,
) -> Trajectory:
    """Step from ``t = 0`` until ``t >= params.t_end``."""
    if params.t_end is None:
        raise ValueError("solve_to_time needs params.t_end")
    u1, u2 = initial
    if np.any(u1.values < 0) or np.any(u2.values < 0):
        raise ValueError("initial data must be non-negative")
    stepper = Stepper(u1.mesh, kind, coeffs, params, source)
    state = initial_state(u1, u2, params)
    nsteps = steps_for(params.t_end, params.tau)
    snap_steps = {steps_for(t, params.tau) for t in snapshots}
    return _run(stepper, state, nsteps, record_every, snap_steps)


def solve_to_steady(
    initial: tuple[NodalField, NodalField],
    kind: FluxKind,
    coeffs: Coefficients,
    params: SolverParams,
    max_steps: int,
    record_every: int = 1,
) -> SimulationState:
    """Step until the first fixed-point update of a step drops below ``tol_S``."""
    u1, u2 = initial
    stepper = Stepper(u1.mesh, kind, coeffs, params)
    state = initial_state(u1, u2, params)
    for n_next in range(1, max_steps + 1):
        try:
            state = stepper.step(state, record=(n_next % record_every == 0))
        except CrossDiffError as exc:
            if getattr(exc, "step", None) is None:
                exc.step = n_next
            raise
        if state.first_update < params.tol_S:
            if n_next % record_every:
                state.history.append(
                    make_record(state.n, state.t, state.u1, state.u2, params.reg, state.fp_iters)
                )
            state.stationary = True
            return state
    raise NoSteadyState(
        f"no stationary state within {max_steps} steps "
        f"(last first-iterate update {state.first_update:.3e}, tol_S={params.tol_S:g})"
    )
