"""Fermi-Dirac type equilibrium family mu_{delta,rho} and the rho-dependent constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import weight_w_beta

# exp overflows past this exponent; beyond it mu equals its Maxwellian tail to double precision
_LOG_CUTOFF = 700.0


def _speed_sq(v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return v * v
    return np.sum(v * v, axis=-1)


def mu_from_speed_sq(s2, delta, rho):
    """1 / (delta + rho exp(|v|^2/2)) evaluated from |v|^2, safe for large |v|."""
    s2 = np.asarray(s2, dtype=float)
    a = 0.5 * s2 + np.log(rho)
    big = a > _LOG_CUTOFF
    with np.errstate(over="ignore"):
        core = 1.0 / (delta + np.exp(np.where(big, 0.0, a)))
    tail = np.exp(-a)
    return np.where(big, tail, core)


def mu_bar_sqrt_from_speed_sq(s2, delta, rho):
    s2 = np.asarray(s2, dtype=float)
    a = 0.5 * s2 + np.log(rho)
    big = a > _LOG_CUTOFF
    safe = np.where(big, 0.0, a)
    core = np.sqrt(rho) * np.exp(0.25 * np.where(big, 0.0, s2)) / (delta + np.exp(safe))
    tail = np.exp(-0.25 * s2) / np.sqrt(rho)
    return np.where(big, tail, core)


def eval_mu(v, delta, rho):
    """Equilibrium 1 / (delta + rho e^{|v|^2/2})."""
    return mu_from_speed_sq(_speed_sq(v), delta, rho)


def eval_mu_bar_sqrt(v, delta, rho):
    """sqrt(mu (1 - delta mu)) = sqrt(rho) e^{|v|^2/4} / (delta + rho e^{|v|^2/2})."""
    return mu_bar_sqrt_from_speed_sq(_speed_sq(v), delta, rho)


def eval_mu0(v):
    return np.exp(-0.5 * _speed_sq(v))


@dataclass(frozen=True)
class RhoConstants:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float


def rho_constants(rho):
    rho = float(rho)
    if not rho > 0:
        raise ValueError("rho must be positive")
    c1 = rho ** 2 / (rho + 1.0) ** 3
    c2 = (rho + 1.0) / rho ** 2
    c3 = np.sqrt(rho) * (rho + 1.0) / rho ** 2
    c4 = c3 / rho
    return RhoConstants(c1=c1, c2=c2, c3=c3, c4=c4, c5=c2 + c3 + c4)


@dataclass(frozen=True)
class EquilibriumTables:
    mu: np.ndarray
    mu_bar_sqrt: np.ndarray
    mu0: np.ndarray
    w_beta: np.ndarray
    delta: float
    rho: float

    @property
    def mu_bar(self):
        return self.mu_bar_sqrt ** 2


def build_tables(vgrid, params):
    s2 = vgrid.speed_sq
    return EquilibriumTables(
        mu=mu_from_speed_sq(s2, params.delta, params.rho),
        mu_bar_sqrt=mu_bar_sqrt_from_speed_sq(s2, params.delta, params.rho),
        mu0=np.exp(-0.5 * s2),
        w_beta=weight_w_beta(vgrid.nodes, params.beta),
        delta=params.delta,
        rho=params.rho,
    )
