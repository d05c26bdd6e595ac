"""Slow reference implementations used as test oracles.

They share the discretization rules of the package (cell-integrated kernel
weights near the singularity, ratio interpolation, sphere product rule) but
are written independently: scipy cell integrals, scipy interpolation, the
full sphere without antipodal merging, and plain numpy loops over v.
"""

from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from qkinetic.equilibrium import eval_mu


@lru_cache(maxsize=None)
def _cell_integral(pattern, h, gamma):
    """int over the cube of side h centred at h * pattern of |y|^gamma."""
    if pattern == (0, 0, 0):
        # eight octants, singularity at a corner of each
        f = lambda z, y, x: (x * x + y * y + z * z) ** (gamma / 2)
        val, _ = integrate.tplquad(f, 0, h / 2, 0, h / 2, 0, h / 2, epsabs=1e-13, epsrel=1e-11)
        return 8 * val
    c = np.array(pattern, dtype=float) * h
    f = lambda z, y, x: (x * x + y * y + z * z) ** (gamma / 2)
    val, _ = integrate.tplquad(f, c[0] - h / 2, c[0] + h / 2, c[1] - h / 2, c[1] + h / 2,
                               c[2] - h / 2, c[2] + h / 2, epsabs=1e-13, epsrel=1e-11)
    return val


def kernel_cell_weight(k, h, gamma):
    """Radial weight for lattice offset k (integer triple)."""
    k = np.asarray(k)
    kk = int(np.sum(k * k))
    if kk > 4:
        return h ** 3 * (np.sqrt(kk) * h) ** gamma
    return _cell_integral(tuple(sorted(np.abs(k).tolist())), h, gamma)


class NaiveQuadrature:
    """Reference quadrature on a small lattice."""

    def __init__(self, vgrid, sphere, params):
        self.vgrid = vgrid
        self.sphere = sphere
        self.params = params
        self.n = vgrid.n_per_axis
        self.h = vgrid.spacing
        self.nodes = vgrid.nodes
        self.mu = eval_mu(self.nodes, params.delta, params.rho)
        pad = int(np.ceil(2 * np.sqrt(3) * vgrid.v_max / self.h)) + 2
        a = vgrid.axis
        self.ext = np.concatenate([a[0] - self.h * np.arange(pad, 0, -1), a,
                                   a[-1] + self.h * np.arange(1, pad + 1)])
        self.pad = pad
        idx = np.rint((self.nodes + vgrid.v_max) / self.h).astype(int)
        self._idx = idx

    def _interp(self, values):
        n = self.n
        arr = np.pad(np.asarray(values).reshape(n, n, n), self.pad, mode="edge")
        return RegularGridInterpolator((self.ext,) * 3, arr, method="linear")

    def _weights(self, iv):
        """(Nu, Nomega) kernel weights B dv-cell dω for fixed v."""
        p = self.params
        k = self._idx - self._idx[iv]
        radial = np.array([kernel_cell_weight(kk, self.h, p.gamma) for kk in k])
        z = self.nodes - self.nodes[iv]
        zn = np.linalg.norm(z, axis=1)
        s = z @ self.sphere.nodes.T
        with np.errstate(invalid="ignore", divide="ignore"):
            cos = np.abs(s) / zn[:, None]
        cos[zn == 0] = 0.5
        return radial[:, None] * p.angular_coefficient * cos * self.sphere.weights[None, :], s

    def collision(self, F):
        """(A1, A2, C) for the full operator at every node."""
        p = self.params
        d = p.delta
        cap = np.inf if d == 0 else 1 / d
        interp = self._interp(F / self.mu)
        G = 1 - d * F
        A1 = np.zeros(len(F))
        A2 = np.zeros(len(F))
        for iv, v in enumerate(self.nodes):
            W, s = self._weights(iv)
            disp = s[:, :, None] * self.sphere.nodes[None, :, :]
            vp = (v + disp).reshape(-1, 3)
            up = (self.nodes[:, None, :] - disp).reshape(-1, 3)
            Fvp = np.minimum(eval_mu(vp, d, p.rho) * interp(vp), cap).reshape(W.shape)
            Fup = np.minimum(eval_mu(up, d, p.rho) * interp(up), cap).reshape(W.shape)
            A1[iv] = np.sum(W * Fup * Fvp * G[:, None])
            A2[iv] = np.sum(W * F[:, None] * (1 - d * Fup) * (1 - d * Fvp))
        return A1, A2, A1 * G - A2 * F

    def linear(self, f, mu_bar_sqrt):
        """(nu, K f) of the linearized operator."""
        p = self.params
        d = p.delta
        g = mu_bar_sqrt * f
        interp = self._interp(g / self.mu)
        mu = self.mu
        nu = np.zeros(len(f))
        Kg = np.zeros(len(f))
        for iv, v in enumerate(self.nodes):
            W, s = self._weights(iv)
            disp = s[:, :, None] * self.sphere.nodes[None, :, :]
            vp = (v + disp).reshape(-1, 3)
            up = (self.nodes[:, None, :] - disp).reshape(-1, 3)
            mvp = eval_mu(vp, d, p.rho).reshape(W.shape)
            mup = eval_mu(up, d, p.rho).reshape(W.shape)
            gvp = mvp * interp(vp).reshape(W.shape)
            gup = mup * interp(up).reshape(W.shape)
            mv = mu[iv]
            mu_u = mu[:, None]
            nu[iv] = np.sum(W * (mu_u * (1 - d * mup - d * mvp) + d * mup * mvp))
            b1 = mvp - d * mvp * mu_u - d * mvp * mv + d * mu_u * mv
            b2 = mup - d * mup * mu_u - d * mup * mv + d * mu_u * mv
            b3 = mv - d * mv * mup - d * mv * mvp + d * mup * mvp
            Kg[iv] = np.sum(W * (b1 * gup + b2 * gvp - b3 * g[:, None]))
        return nu, Kg / mu_bar_sqrt
