"""Command-line front end.

Runs are described by flat ``key = value`` text files with dotted section
keys (``mesh.cells = 301``); ``#`` starts a comment and unknown keys are
errors.  Commands::

    crossdiff run CONFIG [--out DIR] [--seed N] [--snapshot T ...]
    crossdiff sweep CONFIG ... [--out DIR]
    crossdiff preset NAME [--emit] [--out DIR]

Exit status is 0 on success, 2 for configuration errors and 3 for solver
errors; failures also print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from crossdiff.diagnostics import DiagnosticRecord, space_time_grad
from crossdiff.errors import ConfigError, CrossDiffError
from crossdiff.flux_models import FLUX_KINDS, Coefficients, FluxKind
from crossdiff.mesh_fe import Mesh1D, NodalField, interpolate
from crossdiff.regularization import RegParam, default_eps
from crossdiff.time_stepper import (
    SimulationState,
    SolverParams,
    check_time_constraint,
    solve_to_steady,
    solve_to_time,
)

log = logging.getLogger(__name__)

CSV_MAGIC = "# crossdiff v1"
PROFILE_COLUMNS = ("x", "u1", "u2")
OUT_ENV = "CROSSDIFF_OUT"
DEFAULT_OUT = "crossdiff_out"


# ----------------------------------------------------------------------------
# config schema


@dataclass(frozen=True)
class MeshCfg:
    left: float = 0.0
    right: float = 1.0
    cells: int = 100


@dataclass(frozen=True)
class FluxCfg:
    kind: str = "BT"
    delta: float = 0.0


@dataclass(frozen=True)
class CoefCfg:
    a: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)  # row-major 2x2
    b: tuple[float, ...] = (0.0, 0.0)
    c: tuple[float, ...] = (0.0, 0.0)
    alpha: tuple[float, ...] = (0.0, 0.0)
    beta: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    q: str = "zero"


@dataclass(frozen=True)
class InitCfg:
    u1: str = "constant:1"
    u2: str = "constant:1"
    unit_mass: bool = False


@dataclass(frozen=True)
class SolverCfg:
    eps: str = "auto"
    tau: float = 1e-3
    tol: float = 1e-7
    tol_S: float = 5e-8
    max_fp_iters: int = 200
    delta0: float = 0.5
    anderson_depth: int = 3
    linearize_mobility: bool = True


@dataclass(frozen=True)
class RunCfg:
    mode: str = "time"  # time | steady
    t_end: float = 0.1
    max_steps: int = 100000
    record_every: int = 1
    snapshots: tuple[float, ...] = ()
    zoom: tuple[float, ...] = ()


@dataclass(frozen=True)
class ParticleCfg:
    enabled: bool = False
    n: int = 1000
    sigma: tuple[float, ...] = (0.0, 0.0)
    seed: int = 0
    bandwidth: float = 0.02
    kernel_eps: float = 0.02
    dt: float = 0.0  # 0 means the PDE time step


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    mesh: MeshCfg = field(default_factory=MeshCfg)
    flux: FluxCfg = field(default_factory=FluxCfg)
    coef: CoefCfg = field(default_factory=CoefCfg)
    init: InitCfg = field(default_factory=InitCfg)
    solver: SolverCfg = field(default_factory=SolverCfg)
    run: RunCfg = field(default_factory=RunCfg)
    particles: ParticleCfg = field(default_factory=ParticleCfg)


SECTIONS = ("mesh", "flux", "coef", "init", "solver", "run", "particles")


def _parse_value(key: str, kind: str, text: str):
    text = text.strip()
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if kind.startswith("tuple"):
            return tuple(float(t) for t in text.replace(",", " ").split())
        return text
    except ValueError:
        raise ConfigError(f"cannot read {text!r} as {kind}", key=key) from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(repr(float(v)) for v in value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    """Parse config text; raises ConfigError naming the offending key."""
    values: dict[str, dict[str, object]] = {s: {} for s in SECTIONS}
    name = None
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", key=f"line {lineno}")
        key, _, val = (p.strip() for p in line.partition("="))
        if key in seen:
            raise ConfigError("duplicate key", key=key)
        seen.add(key)
        if key == "name":
            name = val
            continue
        section, _, attr = key.partition(".")
        if section not in values:
            raise ConfigError("unknown key", key=key)
        cls = type(getattr(RunConfig(), section))
        kinds = {f.name: f.type for f in fields(cls)}
        if attr not in kinds:
            raise ConfigError("unknown key", key=key)
        values[section][attr] = _parse_value(key, kinds[attr], val)
    base = RunConfig()
    parts = {s: replace(getattr(base, s), **values[s]) for s in SECTIONS}
    cfg = RunConfig(name=name or base.name, **parts)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", key=str(path)) from exc
    return parse_config(text)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text form; ``parse_config(emit_config(c)) == c``."""
    lines = [CSV_MAGIC.replace("v1", "config v1"), f"name = {cfg.name}"]
    for s in SECTIONS:
        part = getattr(cfg, s)
        for f in fields(part):
            lines.append(f"{s}.{f.name} = {_format_value(getattr(part, f.name))}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# initial data and drift specs


def parse_field_spec(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """Initial-data spec.

    ``constant:V``, ``bump:CENTER,WIDTH,AMPLITUDE`` for
    ``AMPLITUDE*exp(-(x-CENTER)^2/WIDTH)``, ``complement:SPEC`` for
    ``1 - SPEC`` and sums ``SPEC + SPEC``.
    """
    spec = spec.strip()
    if " + " in spec:
        parts = [parse_field_spec(p) for p in spec.split(" + ")]
        return lambda x: sum(p(x) for p in parts)
    kind, _, args = spec.partition(":")
    if kind == "complement":
        inner = parse_field_spec(args)
        return lambda x: 1.0 - inner(x)
    nums = [float(t) for t in args.split(",")] if args else []
    if kind == "constant" and len(nums) == 1:
        v = nums[0]
        return lambda x: np.full_like(np.asarray(x, dtype=float), v)
    if kind == "bump" and len(nums) == 3:
        c, w, amp = nums
        if not w > 0:
            raise ValueError("bump width must be positive")
        return lambda x: amp * np.exp(-((np.asarray(x, dtype=float) - c) ** 2) / w)
    raise ValueError(f"unrecognised field spec {spec!r}")


def parse_drift_spec(spec: str) -> Callable[[np.ndarray], np.ndarray]:
    """``zero`` or ``affine:SLOPE,ROOT`` for ``SLOPE*(x - ROOT)``."""
    kind, _, args = spec.strip().partition(":")
    if kind == "zero" and not args:
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if kind == "affine":
        slope, root = (float(t) for t in args.split(","))
        return lambda x: slope * (np.asarray(x, dtype=float) - root)
    raise ValueError(f"unrecognised drift spec {spec!r}")


# ----------------------------------------------------------------------------
# config -> model objects


@dataclass
class Problem:
    mesh: Mesh1D
    kind: FluxKind
    coeffs: Coefficients
    params: SolverParams
    initial: tuple[NodalField, NodalField]


def _checked(key: str, build):
    try:
        return build()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), key=key) from exc


def build_problem(cfg: RunConfig) -> Problem:
    m = cfg.mesh
    mesh = _checked("mesh", lambda: Mesh1D(m.left, m.right, m.cells))
    if cfg.flux.kind not in FLUX_KINDS:
        raise ConfigError(f"expected one of {FLUX_KINDS}", key="flux.kind")
    kind = _checked("flux.delta", lambda: FluxKind(cfg.flux.kind, cfg.flux.delta))
    c = cfg.coef
    q = _checked("coef.q", lambda: parse_drift_spec(c.q))
    for key, shape in (("a", 4), ("b", 2), ("c", 2), ("alpha", 2), ("beta", 4)):
        if len(getattr(c, key)) != shape:
            raise ConfigError(f"expected {shape} numbers", key=f"coef.{key}")
    coeffs = _checked(
        "coef",
        lambda: Coefficients(
            a=np.reshape(c.a, (2, 2)),
            b=np.array(c.b),
            c=np.array(c.c),
            alpha=np.array(c.alpha),
            beta=np.reshape(c.beta, (2, 2)),
            q=q,
        ),
    )
    s = cfg.solver
    if s.eps == "auto":
        eps = default_eps(mesh.h)
    else:
        eps = _checked("solver.eps", lambda: float(s.eps))
    reg = _checked("solver.eps", lambda: RegParam(eps))
    t_end = cfg.run.t_end if cfg.run.mode == "time" else None
    params = _checked(
        "solver",
        lambda: SolverParams(
            reg,
            tau=s.tau,
            tol=s.tol,
            tol_S=s.tol_S,
            max_fp_iters=s.max_fp_iters,
            delta0=s.delta0,
            t_end=t_end,
            anderson_depth=s.anderson_depth,
            linearize_mobility=s.linearize_mobility,
        ),
    )
    verdict = check_time_constraint(params, coeffs)
    if not verdict:
        raise ConfigError(
            f"time-step constraint omega*tau <= 1 - delta0 violated: omega={verdict.omega:g}, "
            f"tau={s.tau:g}, omega*tau={verdict.omega * s.tau:g} > {verdict.limit:g}",
            key="solver.tau",
        )
    fields_ = []
    for key, spec in (("init.u1", cfg.init.u1), ("init.u2", cfg.init.u2)):
        func = _checked(key, lambda: parse_field_spec(spec))
        u = _checked(key, lambda: interpolate(func, mesh))
        if np.any(u.values < 0):
            raise ConfigError("initial data must be non-negative", key=key)
        if cfg.init.unit_mass:
            total = float(np.dot(mesh.weights, u.values))
            if not total > 0:
                raise ConfigError("cannot normalize zero initial data", key=key)
            u = u * (1.0 / total)
        fields_.append(u)
    return Problem(mesh, kind, coeffs, params, (fields_[0], fields_[1]))


def validate(cfg: RunConfig) -> None:
    if not cfg.name or any(ch in cfg.name for ch in "/\\ "):
        raise ConfigError("name must be non-empty without spaces or slashes", key="name")
    r = cfg.run
    if r.mode not in ("time", "steady"):
        raise ConfigError("expected 'time' or 'steady'", key="run.mode")
    if r.t_end < 0:
        raise ConfigError("must be non-negative", key="run.t_end")
    if r.max_steps < 0:
        raise ConfigError("must be non-negative", key="run.max_steps")
    if r.record_every < 1:
        raise ConfigError("must be at least 1", key="run.record_every")
    if any(t < 0 for t in r.snapshots):
        raise ConfigError("snapshot times must be non-negative", key="run.snapshots")
    if r.zoom and (len(r.zoom) != 2 or not r.zoom[0] < r.zoom[1]):
        raise ConfigError("expected 'low high'", key="run.zoom")
    p = cfg.particles
    if p.enabled:
        if r.mode != "time":
            raise ConfigError("particle runs need run.mode = time", key="particles.enabled")
        if p.n < 1:
            raise ConfigError("must be at least 1", key="particles.n")
        if len(p.sigma) != 2 or min(p.sigma) < 0:
            raise ConfigError("expected two non-negative values", key="particles.sigma")
        for key in ("bandwidth", "kernel_eps"):
            if not getattr(p, key) > 0:
                raise ConfigError("must be positive", key=f"particles.{key}")
        if p.dt < 0:
            raise ConfigError("must be non-negative", key="particles.dt")
    build_problem(cfg)


# ----------------------------------------------------------------------------
# presets

_EXP2_INIT = InitCfg(u1="bump:0.4,0.001,1.0", u2="bump:0.6,0.001,1.0")
_EXP2_SOLVER = SolverCfg(tau=1e-5, tol=1e-4)
_EXP2_RUN = RunCfg(t_end=0.17, snapshots=(0.0, 0.05, 0.17), zoom=(0.45, 0.55), record_every=100)


def _exp1(b1: float, kind: str) -> RunConfig:
    return RunConfig(
        name=f"exp1_{'skt_' if kind == 'SKT' else ''}b{b1:g}",
        mesh=MeshCfg(0.0, 3.0, 301),
        flux=FluxCfg(kind),
        coef=CoefCfg(a=(1.0,) * 4, b=(b1, 1.0), c=(1.0, 1.0), q="affine:-3.0,0.5"),
        init=InitCfg("constant:10.0", "constant:10.0"),
        solver=SolverCfg(tau=1e-3, tol=1e-7, tol_S=5e-8),
        run=RunCfg(mode="steady", max_steps=500000, record_every=100),
    )


def _exp2(delta: float, cells: int = 1001, tau: float = 1e-5, prefix: str = "exp2") -> RunConfig:
    return RunConfig(
        name=f"{prefix}_delta{delta:g}",
        mesh=MeshCfg(0.0, 1.0, cells),
        flux=FluxCfg("BT_delta" if delta else "BT", delta),
        coef=CoefCfg(a=(1.0,) * 4),
        init=_EXP2_INIT,
        solver=replace(_EXP2_SOLVER, tau=tau),
        run=_EXP2_RUN,
    )


def _presets() -> dict[str, RunConfig]:
    out = {}
    for b1 in (4.0, 8.0, 20.0, 40.0):
        for kind in ("BT", "SKT"):
            cfg = _exp1(b1, kind)
            out[cfg.name] = cfg
    # positive-definite cross-diffusion on the bump data of the second setup
    out["exp1_pd"] = RunConfig(
        name="exp1_pd",
        mesh=MeshCfg(0.0, 1.0, 201),
        coef=CoefCfg(a=(4.0, 0.0, 3.9, 1.0)),
        init=_EXP2_INIT,
        solver=SolverCfg(tau=1e-4, tol=1e-7),
        run=RunCfg(t_end=0.05, snapshots=(0.0, 0.01, 0.05), record_every=10),
    )
    for delta in (0.0, 0.001, 0.01):
        cfg = _exp2(delta)
        out[cfg.name] = cfg
        cfg = _exp2(delta, cells=401, tau=1e-4, prefix="exp2ci")
        out[cfg.name] = replace(cfg, run=replace(cfg.run, record_every=1))
    out["exp3"] = RunConfig(
        name="exp3",
        mesh=MeshCfg(0.0, 1.0, 201),
        coef=CoefCfg(a=(1.0,) * 4, alpha=(1.0, 1.0), beta=(1.0, 1.0, 2.0, 2.0)),
        init=InitCfg(u1="bump:0.4,0.001,0.1", u2="complement:bump:0.4,0.001,0.1"),
        solver=SolverCfg(tau=1e-3, tol=1e-4),
        run=RunCfg(t_end=7.0, snapshots=(0.0, 5.0, 7.0), record_every=100),
    )
    out["exp4_case1"] = replace(
        _exp2(0.0), name="exp4_case1", coef=CoefCfg(a=(3.0, 3.0, 1.0, 1.0))
    )
    # the transport coefficients d_i are read as the drift coefficients b_i
    out["exp4_case2"] = replace(
        _exp2(0.0),
        name="exp4_case2",
        coef=CoefCfg(a=(1.0,) * 4, b=(1.0, 10.0), q="affine:-3.0,0.5"),
    )
    out["particles_bt"] = RunConfig(
        name="particles_bt",
        mesh=MeshCfg(-0.5, 1.5, 200),
        coef=CoefCfg(a=(1.0,) * 4, c=(0.05, 0.05)),
        init=InitCfg("bump:0.4,0.01,1.0", "bump:0.6,0.01,1.0", unit_mass=True),
        solver=SolverCfg(tau=1e-4, tol=1e-7),
        run=RunCfg(t_end=0.05, snapshots=(0.0, 0.05), record_every=10),
        particles=ParticleCfg(
            enabled=True, n=5000, sigma=(math.sqrt(0.1),) * 2, bandwidth=0.02, kernel_eps=0.02
        ),
    )
    return out


PRESETS = _presets()


def preset(name: str) -> RunConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset; available: {', '.join(sorted(PRESETS))}", key=name) from None


# ----------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, columns: Sequence[str], rows, comment: str = "") -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(CSV_MAGIC + (f" {comment}" if comment else "") + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def profile_rows(u1: NodalField, u2: NodalField, window: tuple[float, ...] = ()):
    x = u1.mesh.nodes
    keep = np.ones_like(x, dtype=bool)
    if window:
        keep = (x >= window[0]) & (x <= window[1])
    return [(x[j], u1.values[j], u2.values[j]) for j in np.flatnonzero(keep)]


def write_svg(path: Path, x: np.ndarray, curves: dict[str, np.ndarray], title: str) -> None:
    """Polyline plot of the curves with a labelled frame."""
    W, H, pad = 640, 400, 50
    lo = min(float(np.min(v)) for v in curves.values())
    hi = max(float(np.max(v)) for v in curves.values())
    if hi <= lo:
        hi = lo + 1.0
    x0, x1 = float(x[0]), float(x[-1])

    def px(xv):
        return pad + (xv - x0) / (x1 - x0) * (W - 2 * pad)

    def py(yv):
        return H - pad - (yv - lo) / (hi - lo) * (H - 2 * pad)

    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{W / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle" font-size="12">x</text>',
        f'<text x="{pad}" y="{H - pad + 16}" text-anchor="middle" font-size="11">{x0:g}</text>',
        f'<text x="{W - pad}" y="{H - pad + 16}" text-anchor="middle" font-size="11">{x1:g}</text>',
        f'<text x="{pad - 6}" y="{H - pad}" text-anchor="end" font-size="11">{lo:.4g}</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" text-anchor="end" font-size="11">{hi:.4g}</text>',
    ]
    for k, (label, y) in enumerate(curves.items()):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        color = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(
            f'<text x="{W - pad - 4}" y="{pad + 16 + 14 * k}" text-anchor="end" '
            f'font-size="12" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")


def _tag(t: float) -> str:
    return f"{t:.6g}".replace("-", "m")


@dataclass
class RunResult:
    name: str
    final: SimulationState
    delta: float
    kind: str
    particle_l1: tuple[float, float] | None = None


def run(cfg: RunConfig, out_dir: Path) -> RunResult:
    """Execute one configuration and write its artifacts under ``out_dir/name``."""
    prob = build_problem(cfg)
    target = Path(out_dir) / cfg.name
    target.mkdir(parents=True, exist_ok=True)
    r = cfg.run
    snapshots: list[tuple[float, NodalField, NodalField]] = []
    if r.mode == "time":
        traj = solve_to_time(
            prob.initial, prob.kind, prob.coeffs, prob.params, r.snapshots, r.record_every
        )
        final = traj.final
        snapshots = [(t, a, b) for t, (a, b) in zip(traj.times, traj.snapshots)]
    else:
        final = solve_to_steady(
            prob.initial, prob.kind, prob.coeffs, prob.params, r.max_steps, r.record_every
        )
        u1, u2 = prob.initial
        if 0.0 in r.snapshots:
            snapshots.append((0.0, u1, u2))
        snapshots.append((final.t, final.u1, final.u2))

    write_csv(
        target / "diagnostics.csv",
        DiagnosticRecord.columns(),
        (rec.row() for rec in final.history),
    )
    for t, u1, u2 in snapshots:
        stem = f"profile_t{_tag(t)}"
        write_csv(target / f"{stem}.csv", PROFILE_COLUMNS, profile_rows(u1, u2))
        write_svg(
            target / f"{stem}.svg",
            u1.mesh.nodes,
            {"u1": u1.values, "u2": u2.values},
            f"{cfg.name} t={t:g}",
        )
        if r.zoom:
            write_csv(target / f"zoom_t{_tag(t)}.csv", PROFILE_COLUMNS, profile_rows(u1, u2, r.zoom))

    result = RunResult(cfg.name, final, cfg.flux.delta, cfg.flux.kind)
    if cfg.particles.enabled:
        result.particle_l1 = _run_particles(cfg, prob, final, target)
    return result


def _run_particles(cfg: RunConfig, prob: Problem, final: SimulationState, target: Path):
    from crossdiff import particle_sim as ps

    p = cfg.particles
    m = cfg.mesh
    dens = tuple(parse_field_spec(s) for s in (cfg.init.u1, cfg.init.u2))
    ens = ps.initial_ensemble(dens, p.n, tuple(p.sigma), p.seed, (m.left, m.right))
    kernel = ps.KernelSpec(p.kernel_eps)
    q = prob.coeffs.q if np.any(prob.coeffs.b) else None
    dt = p.dt or prob.params.tau
    ens = ps.simulate(ens, kernel, prob.coeffs.a, prob.coeffs.b, q, dt, cfg.run.t_end)
    d1, d2 = ps.empirical_density(ens, prob.mesh, p.bandwidth)
    write_csv(
        target / "particles.csv",
        PROFILE_COLUMNS,
        profile_rows(d1, d2),
        comment=f"particles species=2 n={p.n} seed={p.seed} t={ens.step * dt!r}",
    )
    l1 = (ps.compare_to_pde(d1, final.u1), ps.compare_to_pde(d2, final.u2))
    boundary = (ps.boundary_mass_fraction(final.u1), ps.boundary_mass_fraction(final.u2))
    write_csv(
        target / "particle_summary.csv",
        ("n", "seed", "l1_1", "l1_2", "boundary1", "boundary2"),
        [(p.n, p.seed, *l1, *boundary)],
    )
    return l1


# ----------------------------------------------------------------------------
# sweep

SWEEP_COLUMNS = ("name", "status", "kind", "delta") + tuple(DiagnosticRecord.columns()) + (
    "delta_grad",
    "message",
)


def _sweep_one(args):
    cfg, out_dir = args
    try:
        res = run(cfg, out_dir)
    except CrossDiffError as exc:
        return cfg.name, None, f"{type(exc).__name__}: {exc}"
    rec = res.final.history[-1]
    dg = res.delta * space_time_grad(res.final.history)
    return cfg.name, (res.kind, res.delta, rec, dg), ""


def sweep(configs: Sequence[RunConfig], out_dir: Path, workers: int | None = None) -> list[tuple]:
    """Run configs independently and join their final diagnostics.

    Returns the table rows (also written to ``out_dir/sweep.csv``); failed
    runs keep a row with status ``error`` and the message.
    """
    names = [c.name for c in configs]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError(f"duplicate config names: {', '.join(dup)}", key="name")
    meshes = {(c.mesh.left, c.mesh.right, c.mesh.cells) for c in configs}
    if len(meshes) > 1:
        raise ConfigError("sweep configs must share one mesh", key="mesh")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(c, out_dir) for c in configs]
    if len(jobs) > 1 and (workers or os.cpu_count() or 1) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = []
    for name, payload, message in results:
        if payload is None:
            rows.append((name, "error", "", "") + ("",) * len(DiagnosticRecord.columns()) + ("", message))
        else:
            kind, delta, rec, dg = payload
            rows.append((name, "ok", kind, delta) + rec.row() + (dg, ""))
    with open(out_dir / "sweep.csv", "w", newline="\n") as fh:
        fh.write(CSV_MAGIC + "\n")
        fh.write(",".join(SWEEP_COLUMNS) + "\n")
        for row in rows:
            cells = [v if isinstance(v, str) else _fmt(v) for v in row]
            fh.write(",".join(cells) + "\n")
    return rows


# ----------------------------------------------------------------------------
# entry point


def _error(kind: str, exc: Exception, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "step", "residual", "pivot"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr] = v
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crossdiff", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", type=Path, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--snapshot", type=float, action="append", default=None)

    p_sweep = sub.add_parser("sweep", help="run several configs and join final diagnostics")
    p_sweep.add_argument("configs", nargs="*")
    p_sweep.add_argument("--out", type=Path, default=None)
    p_sweep.add_argument("--workers", type=int, default=None)

    p_pre = sub.add_parser("preset", help="run or print a built-in preset")
    p_pre.add_argument("name", help="|".join(sorted(PRESETS)))
    p_pre.add_argument("--emit", action="store_true", help="print the preset config and exit")
    p_pre.add_argument("--out", type=Path, default=None)
    p_pre.add_argument("--seed", type=int, default=None)
    p_pre.add_argument("--snapshot", type=float, action="append", default=None)
    return ap


def _override(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, particles=replace(cfg.particles, seed=args.seed))
    if getattr(args, "snapshot", None):
        cfg = replace(cfg, run=replace(cfg.run, snapshots=tuple(args.snapshot)))
    validate(cfg)
    return cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = args.out or _default_out()
    try:
        if args.command == "preset":
            cfg = preset(args.name)
            if args.emit:
                text = emit_config(cfg)
                if args.out:
                    args.out.mkdir(parents=True, exist_ok=True)
                    (args.out / f"{cfg.name}.cfg").write_text(text)
                else:
                    sys.stdout.write(text)
                return 0
            cfg = _override(cfg, args)
            res = run(cfg, out)
        elif args.command == "run":
            cfg = _override(load_config(args.config), args)
            res = run(cfg, out)
        else:
            cfgs = [load_config(p) for p in args.configs]
            rows = sweep(cfgs, out, args.workers)
            failed = [r[0] for r in rows if r[1] == "error"]
            print(f"sweep: {len(rows) - len(failed)} ok, {len(failed)} failed -> {out / 'sweep.csv'}")
            if failed:
                return _error("solver", CrossDiffError(f"failed runs: {', '.join(failed)}"), 3)
            return 0
    except ConfigError as exc:
        return _error("config", exc, 2)
    except CrossDiffError as exc:
        return _error("solver", exc, 3)
    rec = res.final.history[-1]
    print(
        f"{res.name}: n={res.final.n} t={res.final.t:g} mass=({rec.mass1:.6g}, {rec.mass2:.6g}) "
        f"overlap={rec.overlap:.6g} stationary={res.final.stationary} -> {out / res.name}"
    )
    if res.particle_l1 is not None:
        print(f"{res.name}: particle L1 distance=({res.particle_l1[0]:.4g}, {res.particle_l1[1]:.4g})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
