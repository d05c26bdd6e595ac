"""Picard iteration of the mild (Duhamel) form on successive time windows.

On a window [t0, t0 + dt] the iterate F^{n+1} solves the linear damped
transport problem with gain C~_1(F^n) and damping g_1(F^n) frozen at the
previous iterate.  Time is sampled at ``substeps`` equispaced nodes.  The
damping exponent uses the trapezoid rule; the source integral uses the
exponential product rule (exact when gain and damping are constant over a
sub-interval), so the iteration reproduces the scalar closed form and keeps
iterates nonnegative for any step size.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .collision import conservative_projection, collision_invariants
from .core import BoundViolation, ConfigError, DistributionField, weighted_sup_norm
from .equilibrium import rho_constants

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """The solver could not produce an admissible, converged window."""

    def __init__(self, message, report=None, trajectory=None):
        super().__init__(message)
        self.report = report
        self.trajectory = trajectory


class PicardDivergence(SolverError):
    pass


@dataclass
class SolverConfig:
    dt: float | str = "auto"
    picard_tol: float = 1e-10
    picard_max_iters: int = 30
    t_end: float | None = None
    n_windows: int | None = None
    horizon_constant: float = 1.0 / 16.0
    substeps: int = 4
    conservative: bool = False
    clamp_tol: float = 1e-12

    def __post_init__(self):
        if self.dt != "auto":
            try:
                self.dt = float(self.dt)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"dt must be a number or 'auto', got {self.dt!r}") from exc
            if not self.dt > 0:
                raise ConfigError("dt must be positive")
        if not self.picard_tol > 0:
            raise ConfigError("picard_tol must be positive")
        if int(self.picard_max_iters) < 1:
            raise ConfigError("picard_max_iters must be >= 1")
        if int(self.substeps) < 2:
            raise ConfigError("substeps must be >= 2")
        if not self.horizon_constant > 0:
            raise ConfigError("horizon_constant must be positive")
        if self.t_end is not None and not float(self.t_end) > 0:
            raise ConfigError("t_end must be positive")
        if self.n_windows is not None and int(self.n_windows) < 1:
            raise ConfigError("n_windows must be >= 1")
        self.substeps = int(self.substeps)
        self.picard_max_iters = int(self.picard_max_iters)

    @classmethod
    def from_config(cls, cfg):
        keys = ("dt", "picard_tol", "picard_max_iters", "t_end", "n_windows",
                "horizon_constant", "substeps", "conservative", "clamp_tol")
        return cls(**{k: cfg[k] for k in keys if k in cfg})


@dataclass
class IterationReport:
    sup_norms: list = field(default_factory=list)
    diffs: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    clamp_events: int = 0
    dt: float = 0.0
    horizon: float = 0.0

    def as_dict(self):
        return {
            "sup_norms": list(map(float, self.sup_norms)),
            "diffs": list(map(float, self.diffs)),
            "ratios": list(map(float, self.ratios)),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "clamp_events": int(self.clamp_events),
            "dt": float(self.dt),
            "horizon": float(self.horizon),
        }


def perturbation(F, tables):
    """f = (F - mu) / sqrt(mu_bar)."""
    return (np.asarray(F, dtype=float) - tables.mu) / tables.mu_bar_sqrt


def suggest_horizon(f0, params, vgrid=None, horizon_constant=1.0 / 16.0):
    """horizon_constant / (C_5rho (1 + N + N^2)) with N = ||w_beta f0||.

    ``f0`` is either a perturbation field (then ``vgrid`` is required) or a
    precomputed norm value.
    """
    if np.ndim(f0) == 0:
        N = float(f0)
    else:
        if vgrid is None:
            raise ValueError("vgrid is required to take the norm of a field")
        N = weighted_sup_norm(f0, vgrid, params.beta)
    if not np.isfinite(N) or N < 0:
        raise ValueError("norm of the initial perturbation must be finite")
    c5 = rho_constants(params.rho).c5
    return horizon_constant / (c5 * (1.0 + N + N * N))


# ---------------------------------------------------------------- integrator pieces

def _phi1(x):
    """(1 - e^-x) / x with the x -> 0 limit."""
    small = np.abs(x) < 1e-8
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5 * x, -np.expm1(-xs) / xs)


def _psi(x):
    """int_0^1 t e^{-x t} dt = (1 - (1 + x) e^-x) / x^2."""
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    exact = (-np.expm1(-xs) - xs * np.exp(-xs)) / (xs * xs)
    series = 0.5 - x / 3.0 + x * x / 8.0 - x ** 3 / 30.0
    return np.where(small, series, exact)


def _backtrace(arr, shift, dx):
    """Periodic linear interpolation of arr(x_k - shift_v, v); arr is (n_x, Nv)."""
    n_x = arr.shape[0]
    if n_x == 1 or not np.any(shift):
        return arr
    pos = np.arange(n_x)[:, None] - (shift / dx)[None, :]
    i0 = np.floor(pos)
    frac = pos - i0
    i0 = i0.astype(np.int64) % n_x
    i1 = (i0 + 1) % n_x
    cols = np.arange(arr.shape[1])[None, :]
    return arr[i0, cols] * (1.0 - frac) + arr[i1, cols] * frac


def mild_solution(init, sources, damping, taus, vx=None, dx=1.0):
    """Mild solution of d_t F + v_x d_x F = c - g F at every time node.

    ``init`` is (n_x, Nv); ``sources`` and ``damping`` are (S, n_x, Nv)
    samples at the nodes ``taus`` (taus[0] = 0).  Values are back-traced
    along characteristics before integrating.
    """
    S = len(taus)
    out = np.empty((S,) + init.shape)
    out[0] = init
    for j in range(1, S):
        if vx is None:
            back = lambda a, t: a
        else:
            back = lambda a, t, j=j: _backtrace(a, vx * (taus[j] - t), dx)
        g = [back(damping[i], taus[i]) for i in range(j + 1)]
        c = [back(sources[i], taus[i]) for i in range(j + 1)]
        # damping exponent accumulated backwards from the target node
        acc = np.zeros_like(init)
        total = np.zeros_like(init)
        for i in range(j - 1, -1, -1):
            delta_t = taus[i + 1] - taus[i]
            gbar = 0.5 * (g[i] + g[i + 1])
            x = gbar * delta_t
            p1 = _phi1(x)
            ps = _psi(x)
            piece = delta_t * (c[i] * ps + c[i + 1] * (p1 - ps))
            total += piece * np.exp(-acc)
            acc += x
        out[j] = np.exp(-acc) * back(init, 0.0) + total
    return out


# ---------------------------------------------------------------- Picard machinery

class _SourceCache:
    """Memo of F-kernel sums keyed by the bytes of the row."""

    def __init__(self, workspace, limit=64):
        self.ws = workspace
        self.store = {}
        self.limit = limit
        self.evaluations = 0

    def __call__(self, row):
        row = np.ascontiguousarray(row)
        key = hashlib.blake2b(row.tobytes(), digest_size=16).digest()
        hit = self.store.get(key)
        if hit is None and not row.any():
            # every accumulator is at least linear in F
            return np.zeros((4, row.size))
        if hit is None:
            hit = self.ws.f_sums(row)
            self.evaluations += 1
            if len(self.store) >= self.limit:
                self.store.pop(next(iter(self.store)))
            self.store[key] = hit
        return hit


def _sources(nodes, cache, ws, conservative):
    """Gain C~_1, damping g_1 and companion gain C~_2 at every (node, x)."""
    delta = ws.params.delta
    c1 = np.empty_like(nodes)
    g1 = np.empty_like(nodes)
    c2 = np.empty_like(nodes)
    for j in range(nodes.shape[0]):
        for k in range(nodes.shape[1]):
            s = cache(nodes[j, k])
            c1[j, k] = s[0]
            c2[j, k] = s[1]
            g1[j, k] = delta * s[0] + s[1]
            if conservative:
                C = s[2]
                fixed = conservative_projection(C, ws.vgrid, ws.tables.mu_bar)
                c1[j, k] += fixed - C
                c2[j, k] -= delta * (fixed - C)
    return c1, g1, c2


def _fix_moments(nodes, reference, ws):
    """Shift each node's x-summed moments back to those of ``reference``."""
    psi = collision_invariants(ws.vgrid)
    weight = ws.tables.mu_bar
    M = (psi * weight) @ psi.T
    target = psi @ reference.sum(axis=0)
    n_x = nodes.shape[1]
    for j in range(1, nodes.shape[0]):
        drift = psi @ nodes[j].sum(axis=0) - target
        a = np.linalg.solve(M, drift) / n_x
        nodes[j] -= (weight * (a @ psi))[None, :]
    return nodes


def _clamp(nodes, cap, tol):
    """Clamp into [0, cap]; count entries that were outside by more than tol."""
    low = nodes < -tol
    high = nodes > cap + tol if np.isfinite(cap) else np.zeros_like(low)
    events = int(np.count_nonzero(low | high))
    np.clip(nodes, 0.0, cap, out=nodes)
    return events


def _taus(dt, substeps):
    return np.linspace(0.0, dt, substeps)


def picard_step(F_prev_nodes, F_initial, dt, workspace, space=None, config=None,
                cache=None, return_companion=False):
    """One Picard iterate on a window.

    ``F_prev_nodes`` has shape (substeps, n_x, Nv) and holds F^n at the time
    nodes; ``F_initial`` is (n_x, Nv).  Returns (F^{n+1} nodes, clamp events),
    plus the mirrored G nodes when ``return_companion`` is set.
    """
    config = config or SolverConfig()
    params = workspace.params
    F_prev_nodes = np.asarray(F_prev_nodes, dtype=float)
    F_initial = np.atleast_2d(np.asarray(F_initial, dtype=float))
    for arr in (F_initial, F_prev_nodes.reshape(-1, F_prev_nodes.shape[-1])):
        DistributionField(arr, params).check(tol=config.clamp_tol)
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError("window length must be positive")
    taus = _taus(dt, F_prev_nodes.shape[0])
    cache = cache or _SourceCache(workspace)
    c1, g1, c2 = _sources(F_prev_nodes, cache, workspace, config.conservative)
    vx, dx = None, 1.0
    if space is not None and space.mode == "torus1d":
        vx, dx = workspace.vgrid.nodes[:, 0], space.dx
    nodes = mild_solution(F_initial, c1, g1, taus, vx, dx)
    if not np.all(np.isfinite(nodes)):
        raise SolverError("non-finite values in Picard iterate")
    if config.conservative:
        nodes = _fix_moments(nodes, F_initial, workspace)
    events = _clamp(nodes, params.pauli_cap, config.clamp_tol)
    if return_companion:
        G0 = 1.0 - params.delta * F_initial
        G = mild_solution(G0, c2, g1, taus, vx, dx)
        return nodes, events, G
    return nodes, events


def _weighted_diff(a, b, tables, vgrid, beta):
    w = tables.w_beta / tables.mu_bar_sqrt
    return float(np.max(np.abs(a - b) * w))


def solve_window(F_initial, dt, workspace, space=None, config=None, cache=None,
                 track_companion=False):
    """Iterate ``picard_step`` from the zero seed until successive iterates agree.

    Returns (final DistributionField at t0 + dt, IterationReport, node array)
    and, with ``track_companion``, the largest |G - (1 - delta F)| observed
    on the converged iterate.
    """
    config = config or SolverConfig()
    ws = workspace
    t = ws.tables
    params = ws.params
    F_initial = np.atleast_2d(np.asarray(F_initial, dtype=float))
    DistributionField(F_initial, params).check(tol=config.clamp_tol)
    S = config.substeps
    cache = cache or _SourceCache(ws)
    report = IterationReport(dt=float(dt))
    report.horizon = suggest_horizon(perturbation(F_initial, t), params, ws.vgrid,
                                     config.horizon_constant)
    if dt > report.horizon * (1 + 1e-12):
        warnings.warn(f"window {dt:.3e} exceeds the suggested horizon {report.horizon:.3e}",
                      RuntimeWarning, stacklevel=2)
    current = np.zeros((S,) + F_initial.shape)
    eps_scale = 10.0 * np.finfo(float).eps
    companion = None
    for it in range(config.picard_max_iters):
        nxt, events, G = picard_step(current, F_initial, dt, ws, space, config, cache,
                                     return_companion=True)
        report.clamp_events += events
        d = _weighted_diff(nxt, current, t, ws.vgrid, params.beta)
        scale = max(_weighted_diff(nxt, 0.0, t, ws.vgrid, params.beta), 1.0)
        report.diffs.append(d)
        report.sup_norms.append(weighted_sup_norm(perturbation(nxt[-1], t), ws.vgrid, params.beta))
        report.iterations = it + 1
        k = len(report.diffs) - 1
        if k >= 1 and report.diffs[k - 1] > eps_scale * scale and d > eps_scale * scale:
            report.ratios.append(d / report.diffs[k - 1])
        if track_companion and params.delta > 0:
            companion = float(np.max(np.abs(G - (1.0 - params.delta * nxt))))
        current = nxt
        if it >= 1 and d < config.picard_tol:
            report.converged = True
            break
    if not report.converged:
        raise PicardDivergence(
            f"Picard iteration did not converge in {config.picard_max_iters} iterations "
            f"(last difference {report.diffs[-1]:.3e})", report=report)
    final = DistributionField(current[-1].copy(), params, clamp_events=report.clamp_events)
    if track_companion:
        return final, report, current, companion
    return final, report, current


def time_march(F0, workspace, space=None, config=None, diagnostics=None, on_window=None):
    """Chain windows from F0 until t_end or n_windows is reached.

    Returns a list of (time, DistributionField, record) tuples including the
    initial state; ``diagnostics`` maps a field to a record (optional).
    Window failures raise SolverError carrying the partial trajectory.
    """
    config = config or SolverConfig()
    if config.t_end is None and config.n_windows is None:
        raise ConfigError("time_march needs t_end or n_windows")
    ws = workspace
    F = F0 if isinstance(F0, DistributionField) else DistributionField(F0, ws.params)
    F.check(tol=config.clamp_tol)
    record = diagnostics(0.0, F, None) if diagnostics else None
    trajectory = [(0.0, F.copy(), record)]
    t = 0.0
    k = 0
    total_clamps = 0
    while True:
        if config.n_windows is not None and k >= config.n_windows:
            break
        if config.t_end is not None and t >= config.t_end * (1 - 1e-12):
            break
        if config.dt == "auto":
            dt = suggest_horizon(perturbation(F.values, ws.tables), ws.params, ws.vgrid,
                                 config.horizon_constant)
        else:
            dt = float(config.dt)
        if config.t_end is not None:
            dt = min(dt, config.t_end - t)
        try:
            F_new, report, _ = solve_window(F.values, dt, ws, space, config)
        except SolverError as exc:
            exc.trajectory = trajectory
            raise
        total_clamps += report.clamp_events
        F_new.clamp_events = total_clamps
        t += dt
        k += 1
        record = diagnostics(t, F_new, report) if diagnostics else None
        trajectory.append((t, F_new, record))
        if on_window is not None:
            on_window(t, F_new, report, record)
        F = F_new
    return trajectory


def companion_G_check(F0, workspace, space=None, config=None, n_windows=1):
    """Largest |G - (1 - delta F)| when G follows the mirrored mild form.

    Returns None when delta = 0 (G is identically 1).
    """
    config = config or SolverConfig()
    ws = workspace
    if ws.params.delta == 0:
        return None
    F = np.atleast_2d(F0.values if isinstance(F0, DistributionField) else F0)
    worst = 0.0
    for _ in range(n_windows):
        dt = config.dt if config.dt != "auto" else suggest_horizon(
            perturbation(F, ws.tables), ws.params, ws.vgrid, config.horizon_constant)
        final, _, _, viol = solve_window(F, dt, ws, space, config, track_companion=True)
        worst = max(worst, viol)
        F = final.values
    return worst


__all__ = [
    "SolverConfig", "IterationReport", "SolverError", "PicardDivergence", "BoundViolation",
    "suggest_horizon", "picard_step", "solve_window", "time_march", "companion_G_check",
    "mild_solution", "perturbation",
]
