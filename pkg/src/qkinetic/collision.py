"""Quadrature of the quantum collision operator and its perturbation forms.

The displacement d = ((u - v) . omega) omega of a binary collision depends
only on the lattice offset z = u - v and on omega, so every geometric
quantity (kernel weight, post-collision stencil, cutoff factor) is tabulated
once per (z, omega) and shared by all v nodes.  Antipodal directions give the
same collision, so only one of each pair is kept with doubled weight.

Kernel weights integrate |y|^gamma over the lattice cell around z for
|z| <= 2h (including the center cell, where the singularity sits); farther
cells use the midpoint value h^3 |z|^gamma.

Off-grid values are interpolated through the ratio F / mu, extended past
the box by its nearest boundary value.  Multiples of the equilibrium (and
the zero state) are then reproduced exactly, and since the extension is
linear, F = mu + g splits into mu and mu * interp(g / mu), so nonlinear and
perturbation forms agree to roundoff.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import BoundViolation, ConfigError, DistributionField, ModelParams
from .equilibrium import build_tables

_GEOMETRY_CACHE = {}
_CUTOFF_CACHE = {}
_CACHE_LIMIT = 4


def set_threads(count=None):
    """Set the numba thread count (defaults to QKINETIC_THREADS if set)."""
    import numba

    if count is None:
        env = os.environ.get("QKINETIC_THREADS")
        if not env:
            return numba.get_num_threads()
        count = int(env)
    count = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(count)
    return count


def post_collision(v, u, omega):
    """Post-collision velocities v' = v - ((v-u).w) w and u' = u + ((v-u).w) w."""
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    omega = np.asarray(omega, dtype=float)
    s = np.sum((v - u) * omega, axis=-1, keepdims=True)
    return v - s * omega, u + s * omega


def chi_ramp(tau, m):
    """Cosine cutoff: 1 on [0, m], 0 on [2m, inf), C^1 ramp in between."""
    tau = np.asarray(tau, dtype=float)
    if m <= 0:
        return np.zeros_like(tau)
    s = np.clip((tau - m) / m, 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * s))


# ---------------------------------------------------------------- cell integrals

def _radial_primitive(R, gamma, m):
    """Phi(R) = int_0^R r^(2+gamma) chi(r) dr (chi = 1 when m is None)."""
    R = np.asarray(R, dtype=float)
    p = 3.0 + gamma
    if m is None:
        return R ** p / p
    if m <= 0:
        return np.zeros_like(R)
    out = np.minimum(R, m) ** p / p
    hi = np.minimum(R, 2.0 * m)
    x, w = np.polynomial.legendre.leggauss(32)
    span = np.clip(hi - m, 0.0, None)
    r = m + 0.5 * span[..., None] * (x + 1.0)
    tail = 0.5 * span * np.sum(w * r ** (2.0 + gamma) * chi_ramp(r, m), axis=-1)
    return out + tail


def center_cell_integral(h, gamma, m=None, order=32):
    """int over [-h/2, h/2]^3 of |y|^gamma chi(|y|) dy via six pyramids."""
    x, w = np.polynomial.legendre.leggauss(order)
    s, t = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    q = np.sqrt(1.0 + s * s + t * t)
    phi = _radial_primitive(0.5 * h * q, gamma, m)
    return 6.0 * float(np.sum(ww * phi / q ** 3))


def offcenter_cell_integrals(centers, h, gamma, m=None, order=8, split=2):
    """int over cubes of side h at ``centers`` of |y|^gamma chi(|y|) dy.

    Each cube is split into split^3 sub-cubes with a tensor Gauss rule; the
    origin must lie outside every cube.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x, w = np.polynomial.legendre.leggauss(order)
    sub = (np.arange(split) + 0.5) / split - 0.5
    pts1 = (sub[:, None] + x[None, :] / (2 * split)).ravel() * h
    w1 = np.tile(w, split) / (2 * split) * h
    px, py, pz = np.meshgrid(pts1, pts1, pts1, indexing="ij")
    pts = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)
    wts = np.einsum("i,j,k->ijk", w1, w1, w1).ravel()
    out = np.empty(len(centers))
    chunk = max(1, 2_000_000 // len(wts))
    for lo in range(0, len(centers), chunk):
        c = centers[lo:lo + chunk]
        r = np.linalg.norm(c[:, None, :] + pts[None, :, :], axis=2)
        f = r ** gamma
        if m is not None:
            f = f * chi_ramp(r, m)
        out[lo:lo + chunk] = f @ wts
    return out


# ---------------------------------------------------------------- geometry tables

@dataclass(frozen=True)
class _Geometry:
    n: int
    h: float
    v_max: float
    pad: int
    offsets: np.ndarray      # (Nz, 3) lattice offsets k, z = h k
    radial: np.ndarray       # (Nz,) int_cell |y|^gamma
    W: np.ndarray            # (Nz, No)
    D: np.ndarray            # (Nz, No, 3)
    offv: np.ndarray         # (Nz, No) flat padded offset of v' stencil
    tv: np.ndarray           # (Nz, No, 3)
    offu: np.ndarray
    tu: np.ndarray
    omegas: np.ndarray       # (No, 3) kept directions
    omega_weights: np.ndarray

    @property
    def nbytes(self):
        return sum(a.nbytes for a in (self.W, self.D, self.offv, self.tv, self.offu, self.tu))


def estimate_table_bytes(n_per_axis, n_omega):
    nz = (2 * n_per_axis - 1) ** 3
    return nz * (n_omega // 2) * 8 * (1 + 3 + 1 + 3 + 1 + 3)


def _build_geometry(vgrid, sphere, gamma, angular_coefficient):
    n = vgrid.n_per_axis
    h = vgrid.spacing
    r = np.arange(-(n - 1), n)
    kx, ky, kz = np.meshgrid(r, r, r, indexing="ij")
    offsets = np.stack([kx.ravel(), ky.ravel(), kz.ravel()], axis=1)
    kk = np.sum(offsets ** 2, axis=1)
    z = offsets * h
    zn = np.sqrt(kk) * h

    radial = np.zeros(len(offsets))
    far = kk > 4
    radial[far] = h ** 3 * zn[far] ** gamma
    near = (~far) & (kk > 0)
    radial[near] = offcenter_cell_integrals(z[near], h, gamma)
    center = int(np.flatnonzero(kk == 0)[0])
    radial[center] = center_cell_integral(h, gamma)

    anti = sphere.antipode_index()
    keep = np.flatnonzero(np.arange(sphere.size) < anti)
    omegas = sphere.nodes[keep]
    ow = 2.0 * sphere.weights[keep]

    zdot = z @ omegas.T                                     # (Nz, No)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_t = np.abs(zdot) / zn[:, None]
    cos_t[center] = 0.5                                     # sphere average of |cos|
    W = radial[:, None] * angular_coefficient * cos_t * ow[None, :]

    D = zdot[:, :, None] * omegas[None, :, :]               # v' = v + D, u' = u - D
    lv = D / h
    bv = np.floor(lv)
    tv = lv - bv
    lu = -D / h
    bu = np.floor(lu)
    tu = lu - bu
    pad = int(max(np.max(np.abs(bv)), np.max(np.abs(bu)))) + 2
    npd = n + 2 * pad
    stride = np.array([npd * npd, npd, 1])
    offv = (bv.astype(np.int64) * stride).sum(axis=2)
    offu = (bu.astype(np.int64) * stride).sum(axis=2)
    return _Geometry(
        n=n, h=h, v_max=vgrid.v_max, pad=pad, offsets=offsets, radial=radial,
        W=np.ascontiguousarray(W), D=np.ascontiguousarray(D),
        offv=np.ascontiguousarray(offv), tv=np.ascontiguousarray(tv),
        offu=np.ascontiguousarray(offu), tu=np.ascontiguousarray(tu),
        omegas=omegas, omega_weights=ow,
    )


def _geometry_key(vgrid, sphere, gamma, coeff):
    return (vgrid.v_max, vgrid.n_per_axis, sphere.nodes.tobytes(), sphere.weights.tobytes(),
            float(gamma), float(coeff))


def _cached(cache, key, build):
    if key not in cache:
        if len(cache) >= _CACHE_LIMIT:
            cache.pop(next(iter(cache)))
        cache[key] = build()
    return cache[key]


def _cutoff_factors(geom, gamma, m):
    """Per-offset ratio int_cell |y|^g chi_m / int_cell |y|^g."""
    if m <= 0:
        return np.zeros(len(geom.radial))
    h = geom.h
    z = geom.offsets * h
    lo = np.linalg.norm(np.clip(np.abs(z) - 0.5 * h, 0.0, None), axis=1)
    hi = np.linalg.norm(np.abs(z) + 0.5 * h, axis=1)
    cm = np.where(hi <= m, 1.0, 0.0)
    kk = np.sum(geom.offsets ** 2, axis=1)
    mixed = (hi > m) & (lo < 2.0 * m)
    center = mixed & (kk == 0)
    side = mixed & (kk > 0)
    if center.any():
        cm[center] = center_cell_integral(h, gamma, m) / center_cell_integral(h, gamma)
    if side.any():
        num = offcenter_cell_integrals(z[side], h, gamma, m)
        den = offcenter_cell_integrals(z[side], h, gamma)
        cm[side] = num / den
    return cm


# ---------------------------------------------------------------- workspace

class CollisionWorkspace:
    """Precomputed quadrature tables for one velocity grid and parameter set.

    Geometry depends on (grid, sphere, gamma, b) and is shared across
    workspaces with different delta / rho.
    """

    def __init__(self, vgrid, sphere, params: ModelParams, cutoff_m=0.5,
                 kernel_cache=None, conservative=False):
        need = estimate_table_bytes(vgrid.n_per_axis, sphere.size)
        if kernel_cache is not None and need > kernel_cache:
            raise ConfigError(
                f"collision tables need {need} bytes, above kernel_cache={kernel_cache}")
        self.vgrid = vgrid
        self.sphere = sphere
        self.params = params
        self.conservative = bool(conservative)
        key = _geometry_key(vgrid, sphere, params.gamma, params.angular_coefficient)
        self._gkey = key
        self.geom = _cached(_GEOMETRY_CACHE, key,
                            lambda: _build_geometry(vgrid, sphere, params.gamma,
                                                    params.angular_coefficient))
        self.tables = build_tables(vgrid, params)
        self.cutoff_m = float(cutoff_m)
        self.k_signs = np.array([1.0, 1.0, -1.0])
        self._all = np.arange(vgrid.size, dtype=np.int64)

    # -- helpers
    def with_params(self, params, **kw):
        return CollisionWorkspace(self.vgrid, self.sphere, params,
                                  kw.get("cutoff_m", self.cutoff_m),
                                  conservative=kw.get("conservative", self.conservative))

    def cutoff_factors(self, m=None):
        m = self.cutoff_m if m is None else float(m)
        key = (self._gkey, m)
        return _cached(_CUTOFF_CACHE, key, lambda: _cutoff_factors(self.geom, self.params.gamma, m))

    def pad_field(self, node_values):
        """Lattice values extended outward by their nearest boundary value."""
        g = self.geom
        arr = np.asarray(node_values, dtype=float).reshape(g.n, g.n, g.n)
        return np.pad(arr, g.pad, mode="edge").ravel()

    def _indices(self, v_indices):
        if v_indices is None:
            return self._all
        return np.ascontiguousarray(np.atleast_1d(v_indices), dtype=np.int64)

    # -- raw kernels
    def f_sums(self, F_row, v_indices=None):
        """Rows (A1, A2, C, scale) of the F-world kernel at the requested nodes."""
        F_row = np.ascontiguousarray(F_row, dtype=float)
        mu = self.tables.mu
        Rp = self.pad_field(F_row / mu)
        idx = self._indices(v_indices)
        out = np.empty((4, len(idx)))
        g = self.geom
        _kernels.f_kernel(idx, g.n, g.pad, g.h, g.v_max, g.W, g.D, g.offv, g.tv, g.offu, g.tu,
                          F_row, Rp, float(self.params.delta), float(self.params.rho), out)
        return out

    def p_sums(self, f_row, v_indices=None, want_k=True, want_gamma=True, m=None):
        """Rows of the perturbation kernel (see ``_kernels.p_kernel``)."""
        t = self.tables
        gn = np.ascontiguousarray(np.asarray(f_row, dtype=float) * t.mu_bar_sqrt)
        Qp = self.pad_field(gn / t.mu)
        idx = self._indices(v_indices)
        out = np.empty((13, len(idx)))
        g = self.geom
        cm = self.cutoff_factors(m)
        _kernels.p_kernel(idx, g.n, g.pad, g.h, g.v_max, g.W, g.D, g.offv, g.tv, g.offu, g.tu,
                          cm, gn, Qp, t.mu, float(self.params.delta), float(self.params.rho),
                          self.k_signs.astype(float), bool(want_k), bool(want_gamma), out)
        return out


# ---------------------------------------------------------------- public operators

def _row(F, x_node, ws):
    if isinstance(F, DistributionField):
        F.check()
        return np.ascontiguousarray(F.values[x_node])
    F = np.asarray(F, dtype=float)
    row = F[x_node] if F.ndim == 2 else F
    DistributionField(row[None, :], ws.params).check()
    return np.ascontiguousarray(row)


def collision_invariants(vgrid):
    v = vgrid.nodes
    return np.stack([np.ones(len(v)), v[:, 0], v[:, 1], v[:, 2], np.sum(v * v, axis=1)])


def conservative_projection(values, vgrid, weight):
    """Remove weight * span{1, v, |v|^2} so that all five moments vanish."""
    psi = collision_invariants(vgrid)
    values = np.asarray(values, dtype=float)
    M = (psi * weight) @ psi.T
    rhs = psi @ values
    a = np.linalg.solve(M, rhs)
    return values - weight * (a @ psi)


def collision_operator(F, x_node, workspace, return_scale=False, conservative=None):
    """Discrete C_delta(F) at every v node of spatial cell ``x_node``."""
    row = _row(F, x_node, workspace)
    sums = workspace.f_sums(row)
    C = sums[2]
    if conservative is None:
        conservative = workspace.conservative
    if conservative:
        C = conservative_projection(C, workspace.vgrid, workspace.tables.mu_bar)
    if return_scale:
        return C, sums[3]
    return C


def _nonneg(name, arr):
    if np.any(arr < 0):
        raise ArithmeticError(f"{name} has negative entries (min {arr.min():.3e})")
    return arr


def gain_and_damping(F, x_node, workspace):
    """(C~_1, g_1) with C_delta(F) = C~_1 - g_1 F."""
    row = _row(F, x_node, workspace)
    s = workspace.f_sums(row)
    d = workspace.params.delta
    return _nonneg("gain", s[0]), _nonneg("damping", d * s[0] + s[1])


def companion_gain_and_damping(F, x_node, workspace):
    """(C~_2, g_2) with -delta C_delta(F) = C~_2 - g_2 (1 - delta F)."""
    row = _row(F, x_node, workspace)
    s = workspace.f_sums(row)
    d = workspace.params.delta
    return _nonneg("companion gain", s[1]), _nonneg("companion damping", d * s[0] + s[1])


def nu_delta_field(workspace, v_indices=None):
    """Collision frequency nu_delta at the requested nodes (all by default)."""
    zero = np.zeros(workspace.vgrid.size)
    return workspace.p_sums(zero, v_indices, want_k=False, want_gamma=False)[0]


def nu_delta(v_node, tables, workspace):
    """nu_delta at a single node (``tables`` must match the workspace)."""
    if tables is not None and tables.delta != workspace.params.delta:
        raise ValueError("tables and workspace disagree on delta")
    return float(nu_delta_field(workspace, [v_node])[0])


def _perturbation_row(f, x_node):
    f = np.asarray(f, dtype=float)
    row = f[x_node] if f.ndim == 2 else f
    if not np.all(np.isfinite(row)):
        raise ValueError("perturbation contains NaN or inf")
    return row


def gamma_terms(f, x_node, workspace):
    """(10, Nv) array of the individual Gamma_delta integrals (already / sqrt(mu_bar))."""
    row = _perturbation_row(f, x_node)
    s = workspace.p_sums(row, want_k=False, want_gamma=True)
    return s[3:13] / workspace.tables.mu_bar_sqrt[None, :]


_GAMMA_PLUS = (0, 2, 3, 8)


def gamma_delta(f, x_node, workspace):
    return gamma_terms(f, x_node, workspace).sum(axis=0)


def gamma_delta_plus(f, x_node, workspace):
    """Positive-part nonlinear operator: the four gain-side terms of Gamma_delta."""
    return gamma_terms(f, x_node, workspace)[list(_GAMMA_PLUS)].sum(axis=0)


__all__ = [
    "BoundViolation", "CollisionWorkspace", "post_collision", "collision_operator",
    "gain_and_damping", "companion_gain_and_damping", "nu_delta", "nu_delta_field",
    "gamma_delta", "gamma_delta_plus", "gamma_terms", "conservative_projection",
    "collision_invariants", "chi_ramp", "center_cell_integral", "offcenter_cell_integrals",
    "set_threads", "estimate_table_bytes",
]
