"""Scalar functionals: defect moments, relative entropy, the E functional,
the quadratic-linear defect bound and norm monitors."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import xlogy

from .core import ConfigError, DistributionField, linf_x_l1_v_norm, weighted_sup_norm

_SERIES_DELTA = 1e-8


def _values(F):
    if isinstance(F, DistributionField):
        return F.values
    return np.atleast_2d(np.asarray(F, dtype=float))


def _dx(space):
    return 1.0 if space is None or space.mode == "homogeneous" else space.dx


def defect_moments(F, tables, grids):
    """(M, J, E) = integrals of (F - mu) against 1, v and |v|^2 over x and v."""
    vgrid, space = grids
    diff = _values(F) - tables.mu[None, :]
    w = vgrid.cell_weight * _dx(space)
    v = vgrid.nodes
    col = diff.sum(axis=0)
    M = float(col.sum() * w)
    J = (col @ v) * w
    E = float(col @ vgrid.speed_sq * w)
    return M, J, E


def _pauli_term(F, delta):
    """(1/delta)(1 - delta F) log(1 - delta F), with its delta -> 0 limit."""
    if delta == 0.0:
        return -F
    if delta < _SERIES_DELTA:
        return -F + 0.5 * delta * F * F
    g = 1.0 - delta * F
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(g > 0, g * np.log1p(-delta * F) / delta, 0.0)
    return out


def entropy_density(F, mu, delta):
    """Pointwise entropy integrand relative to mu (0 log 0 = 0 convention)."""
    return (xlogy(F, F) + _pauli_term(F, delta)) - (xlogy(mu, mu) + _pauli_term(mu, delta))


def _check_range(vals, delta, tol):
    if np.any(~np.isfinite(vals)) or np.any(vals < -tol):
        raise ValueError("F must be finite and nonnegative")
    if delta > 0 and np.any(vals > 1.0 / delta + tol):
        raise ValueError("F exceeds the Pauli cap 1/delta")


def entropy_H(F, tables, grids, tol=1e-12):
    vgrid, space = grids
    vals = _values(F)
    _check_range(vals, tables.delta, tol)
    vals = np.clip(vals, 0.0, np.inf if tables.delta == 0 else 1.0 / tables.delta)
    dens = entropy_density(vals, tables.mu[None, :], tables.delta)
    return float(dens.sum() * vgrid.cell_weight * _dx(space))


def e_functional(F0, tables, grids):
    """H(F0) + log(rho) M0 + E0 / 2."""
    M0, _, E0 = defect_moments(F0, tables, grids)
    return entropy_H(F0, tables, grids) + np.log(tables.rho) * M0 + 0.5 * E0


def taylor_defect(F, tables, grids):
    """Quadratic |F-mu|^2/(4 mu) where |F-mu| <= mu, linear |F-mu|/4 elsewhere."""
    vgrid, space = grids
    d = np.abs(_values(F) - tables.mu[None, :])
    mu = tables.mu[None, :]
    dens = np.where(d <= mu, d * d / (4.0 * mu), 0.25 * d)
    return float(dens.sum() * vgrid.cell_weight * _dx(space))


# ---------------------------------------------------------------- example data

def c_beta(beta):
    """sup_v (1+|v|)^beta e^{-|v|^2/4}, attained at r = (sqrt(1+8 beta) - 1)/2."""
    r = 0.5 * (np.sqrt(1.0 + 8.0 * beta) - 1.0)
    return float((1.0 + r) ** beta * np.exp(-0.25 * r * r))


def phi_function(phi_spec, length=1.0):
    """Callable phi(x) from a spec mapping (kind constant or cosine)."""
    if callable(phi_spec):
        return phi_spec
    kind = phi_spec.get("kind", "constant")
    if kind == "constant":
        value = float(phi_spec.get("value", 1.0))
        return lambda x: np.full_like(np.asarray(x, dtype=float), value)
    if kind == "cosine":
        a = float(phi_spec.get("amplitude", 0.5))
        k = int(phi_spec.get("mode", 1))
        return lambda x: 1.0 + a * np.cos(2.0 * np.pi * k * np.asarray(x, dtype=float) / length)
    raise ConfigError(f"unknown phi kind {kind!r}")


def phi_budget(phi, space):
    """||phi ln phi||_{L^1_x} + ||phi - 1||_{L^1_x} by adaptive quadrature."""
    if space is None or space.mode == "homogeneous":
        p = float(np.asarray(phi(np.zeros(1)))[0])
        return abs(p * np.log(p)) + abs(p - 1.0)
    f = lambda x: abs(float(phi(np.array([x]))[0]) * np.log(float(phi(np.array([x]))[0])))
    g = lambda x: abs(float(phi(np.array([x]))[0]) - 1.0)
    a = integrate.quad(f, 0.0, space.length, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    b = integrate.quad(g, 0.0, space.length, limit=400, epsabs=1e-13, epsrel=1e-11)[0]
    return a + b


@dataclass
class AdmissibilityReport:
    phi_min: float
    phi_max: float
    cap: float
    within_cap: bool
    budget: float
    epsilon: float | None
    within_budget: bool | None
    admissible: bool


def make_example_data(phi_spec, params, grids, tables, M=None, epsilon=None):
    """F0(x, v) = phi(x) mu(v) and a report on the admissible-set conditions."""
    vgrid, space = grids
    phi = phi_function(phi_spec, space.length if space is not None else 1.0)
    xs = space.points if space is not None else np.zeros(1)
    values = np.asarray(phi(xs), dtype=float).reshape(-1)
    if np.any(~np.isfinite(values)) or np.any(values <= 0):
        raise ConfigError("phi must be positive everywhere")
    cb = c_beta(params.beta)
    if M is None:
        M = cb / np.sqrt(params.rho)
    cap = 1.0 + M * np.sqrt(params.rho) / cb
    if params.delta > 0:
        cap = min(cap, 1.0 + params.rho / params.delta)
    budget = phi_budget(phi, space)
    within_cap = bool(np.max(values) <= cap * (1 + 1e-14))
    within_budget = None if epsilon is None else bool(budget <= epsilon)
    report = AdmissibilityReport(
        phi_min=float(values.min()), phi_max=float(values.max()), cap=float(cap),
        within_cap=within_cap, budget=float(budget), epsilon=epsilon,
        within_budget=within_budget,
        admissible=within_cap and within_budget is not False,
    )
    F0 = values[:, None] * tables.mu[None, :]
    return DistributionField(F0, params), report


# ---------------------------------------------------------------- records

@dataclass
class DiagnosticsRecord:
    time: float
    mass_defect: float
    momentum_defect: np.ndarray = field(default_factory=lambda: np.zeros(3))
    energy_defect: float = 0.0
    entropy: float = 0.0
    e_functional: float = 0.0
    taylor_defect: float = 0.0
    sup_norm: float = 0.0
    l1v_norm: float = 0.0
    f_min: float = 0.0
    f_max: float = 0.0
    clamp_events: int = 0

    def row(self):
        d = asdict(self)
        J = d.pop("momentum_defect")
        out = {}
        for k, v in d.items():
            out[k] = v
            if k == "mass_defect":
                out["momentum_defect_x"], out["momentum_defect_y"], out["momentum_defect_z"] = (
                    float(J[0]), float(J[1]), float(J[2]))
        return out


CSV_COLUMNS = (
    "time", "mass_defect", "momentum_defect_x", "momentum_defect_y", "momentum_defect_z",
    "energy_defect", "entropy", "e_functional", "taylor_defect", "sup_norm", "l1v_norm",
    "f_min", "f_max", "clamp_events",
)


def record(time, F, tables, grids, e0=None, beta=None):
    """Evaluate every monitored functional on one field."""
    vgrid, _ = grids
    vals = _values(F)
    M, J, E = defect_moments(vals, tables, grids)
    f = (vals - tables.mu[None, :]) / tables.mu_bar_sqrt[None, :]
    beta = 7.0 if beta is None else beta
    H = entropy_H(vals, tables, grids)
    return DiagnosticsRecord(
        time=float(time), mass_defect=M, momentum_defect=np.asarray(J, dtype=float),
        energy_defect=E, entropy=H,
        e_functional=float(e0) if e0 is not None else H + np.log(tables.rho) * M + 0.5 * E,
        taylor_defect=taylor_defect(vals, tables, grids),
        sup_norm=weighted_sup_norm(f, vgrid, beta), l1v_norm=linf_x_l1_v_norm(f, vgrid),
        f_min=float(vals.min()), f_max=float(vals.max()),
        clamp_events=int(getattr(F, "clamp_events", 0)),
    )


def format_value(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, records, extra=None):
    """Write records in CSV_COLUMNS order; ``extra`` holds per-row leading columns."""
    lead_keys = list(extra[0].keys()) if extra else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(lead_keys + list(CSV_COLUMNS))
        for i, rec in enumerate(records):
            row = rec.row()
            lead = [v if isinstance(v, str) else format_value(v)
                    for v in (extra[i][k] for k in lead_keys)] if extra else []
            w.writerow(lead + [format_value(row[c]) for c in CSV_COLUMNS])
