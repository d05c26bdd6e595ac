"""Linearized operator L_delta = nu_delta - K_delta and the cutoff splitting of K_delta."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collision import chi_ramp, collision_operator
from .core import BoundViolation, DistributionField


@dataclass(frozen=True)
class CutoffSpec:
    """Cutoff radius m of chi_m; the ramp on [m, 2m] is a half cosine."""

    m: float = 0.5
    ramp: str = "cosine"

    def __post_init__(self):
        if not self.m >= 0:
            raise ValueError(f"cutoff radius must be >= 0, got {self.m}")
        if self.ramp != "cosine":
            raise ValueError(f"unsupported ramp {self.ramp!r}")


def chi_m(tau, spec):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("chi_m is defined for tau >= 0")
    out = chi_ramp(tau, spec.m)
    return float(out) if out.ndim == 0 else out


def _row(f, x_node):
    f = np.asarray(f, dtype=float)
    row = f[x_node] if f.ndim == 2 else f
    if not np.all(np.isfinite(row)):
        raise ValueError("perturbation contains NaN or inf")
    return row


def _m(workspace, spec):
    return workspace.cutoff_m if spec is None else spec.m


def linearized_parts(f, x_node, workspace, spec=None, want_gamma=False):
    """nu, K f, K^m f (and Gamma f) from a single quadrature pass."""
    row = _row(f, x_node)
    s = workspace.p_sums(row, want_k=True, want_gamma=want_gamma, m=_m(workspace, spec))
    sq = workspace.tables.mu_bar_sqrt
    parts = {"nu": s[0], "K": s[1] / sq, "Km": s[2] / sq}
    if want_gamma:
        parts["gamma_terms"] = s[3:13] / sq[None, :]
    return parts


def apply_K_delta(f, x_node, workspace):
    return linearized_parts(f, x_node, workspace)["K"]


def apply_K_m(f, x_node, workspace, spec=None):
    """K_delta with the kernel multiplied by chi_m(|v - u|)."""
    return linearized_parts(f, x_node, workspace, spec)["Km"]


def apply_K_c(f, x_node, workspace, spec=None):
    """Remainder K_delta - K^m_delta, formed as a difference."""
    p = linearized_parts(f, x_node, workspace, spec)
    return p["K"] - p["Km"]


def apply_L_delta(f, x_node, workspace):
    row = _row(f, x_node)
    p = linearized_parts(row, 0, workspace)
    return p["nu"] * row - p["K"]


def decomposition_residual(f, x_node, workspace, return_parts=False):
    """max_v |C(mu + sqrt(mu_bar) f) - sqrt(mu_bar)(Gamma f - L f)| / scale.

    ``scale`` is the largest absolute gain-plus-loss sum of the quadrature,
    the natural roundoff unit of the collision evaluation.
    """
    row = _row(f, x_node)
    t = workspace.tables
    F = t.mu + t.mu_bar_sqrt * row
    field = DistributionField(F[None, :], workspace.params)
    hit = field.first_violation()
    if hit is not None:
        raise BoundViolation(f"mu + sqrt(mu_bar) f leaves [0, 1/delta] at v-node {hit[1]}",
                             x_index=x_node, v_index=hit[1], value=hit[2])
    C, scale = collision_operator(field, 0, workspace, return_scale=True, conservative=False)
    p = linearized_parts(row, 0, workspace, want_gamma=True)
    gamma = p["gamma_terms"].sum(axis=0)
    L = p["nu"] * row - p["K"]
    resid = C - t.mu_bar_sqrt * (gamma - L)
    value = float(np.max(np.abs(resid)) / max(float(np.max(scale)), np.finfo(float).tiny))
    if return_parts:
        return value, {"C": C, "gamma": gamma, "L": L, "scale": scale}
    return value
