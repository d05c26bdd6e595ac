"""Compiled quadrature loops over (v, u, omega) triples.

Both kernels walk every u node for each requested v node and every reduced
sphere direction.  Per-offset tables (indexed by z = u - v on the lattice)
hold the kernel weight, the post-collision displacement d = (z.omega) omega,
and the trilinear stencil of v' = v + d and u' = u - d relative to v and u.
Off-grid values are interpolated from a padded array so the gathers never
need a bounds check.
"""

import numba
import numpy as np
from numba import njit, prange

# the system TBB is too old for numba; avoid the probe warning
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"

_EXP_LIMIT = 700.0


@njit(cache=True, inline="always")
def _mu(s2, delta, rho):
    a = 0.5 * s2
    if a > _EXP_LIMIT:
        return np.exp(-a) / rho
    return 1.0 / (delta + rho * np.exp(a))


@njit(cache=True, inline="always")
def _trilinear(arr, p, tx, ty, tz, np1, np2):
    c000 = arr[p]
    c001 = arr[p + 1]
    c010 = arr[p + np1]
    c011 = arr[p + np1 + 1]
    c100 = arr[p + np2]
    c101 = arr[p + np2 + 1]
    c110 = arr[p + np2 + np1]
    c111 = arr[p + np2 + np1 + 1]
    sx = 1.0 - tx
    sy = 1.0 - ty
    sz = 1.0 - tz
    lo = sy * (sz * c000 + tz * c001) + ty * (sz * c010 + tz * c011)
    hi = sy * (sz * c100 + tz * c101) + ty * (sz * c110 + tz * c111)
    return sx * lo + tx * hi


@njit(cache=True, parallel=True, fastmath=True)
def f_kernel(v_idx, n, pad, h, vmax, W, D, offv, tv, offu, tu,
             Fn, Rp, delta, rho, out):
    """Gain/loss accumulators of the full quantum collision integrand.

    out[0] = sum w F(u')F(v')G(u)            (gain without the G(v) factor)
    out[1] = sum w F(u)G(u')G(v')            (loss rate without F(v))
    out[2] = sum w [F(u')F(v')G(u)G(v) - F(u)F(v)G(u')G(v')]
    out[3] = sum w [|gain| + |loss|]          (roundoff scale)
    with G = 1 - delta F and F(x') = min(mu(x') * interp(F/mu), 1/delta).
    """
    n2 = 2 * n - 1
    npd = n + 2 * pad
    npd2 = npd * npd
    n_om = W.shape[1]
    # fastmath assumes finite values, so no inf sentinel
    cap = 1.0 / delta if delta > 0.0 else 1e300
    for j in prange(v_idx.shape[0]):
        iv = v_idx[j]
        a = iv // (n * n)
        b = (iv // n) % n
        c = iv % n
        va = -vmax + a * h
        vb = -vmax + b * h
        vc = -vmax + c * h
        pv0 = ((a + pad) * npd + (b + pad)) * npd + (c + pad)
        Fv = Fn[iv]
        Gv = 1.0 - delta * Fv
        acc_g = 0.0
        acc_l = 0.0
        acc_c = 0.0
        acc_s = 0.0
        for a2 in range(n):
            za = (a2 - a + n - 1) * n2
            ua = -vmax + a2 * h
            for b2 in range(n):
                zb = (za + b2 - b + n - 1) * n2
                ub = -vmax + b2 * h
                for c2 in range(n):
                    zi = zb + c2 - c + n - 1
                    uc = -vmax + c2 * h
                    iu = (a2 * n + b2) * n + c2
                    Fu = Fn[iu]
                    Gu = 1.0 - delta * Fu
                    pu0 = ((a2 + pad) * npd + (b2 + pad)) * npd + (c2 + pad)
                    for o in range(n_om):
                        w = W[zi, o]
                        if w == 0.0:
                            continue
                        d0 = D[zi, o, 0]
                        d1 = D[zi, o, 1]
                        d2 = D[zi, o, 2]
                        x = va + d0
                        y = vb + d1
                        z = vc + d2
                        m_vp = _mu(x * x + y * y + z * z, delta, rho)
                        x = ua - d0
                        y = ub - d1
                        z = uc - d2
                        m_up = _mu(x * x + y * y + z * z, delta, rho)
                        r_vp = _trilinear(Rp, pv0 + offv[zi, o], tv[zi, o, 0], tv[zi, o, 1],
                                          tv[zi, o, 2], npd, npd2)
                        r_up = _trilinear(Rp, pu0 + offu[zi, o], tu[zi, o, 0], tu[zi, o, 1],
                                          tu[zi, o, 2], npd, npd2)
                        F_vp = min(m_vp * r_vp, cap)
                        F_up = min(m_up * r_up, cap)
                        G_vp = 1.0 - delta * F_vp
                        G_up = 1.0 - delta * F_up
                        gain = F_up * F_vp * Gu
                        loss = Fu * G_up * G_vp
                        acc_g += w * gain
                        acc_l += w * loss
                        gfull = gain * Gv
                        lfull = loss * Fv
                        acc_c += w * (gfull - lfull)
                        acc_s += w * (abs(gfull) + abs(lfull))
        out[0, j] = acc_g
        out[1, j] = acc_l
        out[2, j] = acc_c
        out[3, j] = acc_s


@njit(cache=True, parallel=True, fastmath=True)
def p_kernel(v_idx, n, pad, h, vmax, W, D, offv, tv, offu, tu, cm,
             gn, Qp, mun, delta, rho, ksign, want_k, want_gamma, out):
    """Accumulators of the perturbation-form operators, g = sqrt(mu_bar) f.

    out[0]      nu_delta(v)
    out[1]      sqrt(mu_bar(v)) * K_delta f(v)
    out[2]      same restricted by the cutoff weights cm (K^m part)
    out[3:13]   the ten bilinear/trilinear integrands of Gamma_delta, each
                still multiplied by sqrt(mu_bar(v))
    g at x' is mu(x') * interp(g/mu), consistent with the F-kernel.
    """
    n2 = 2 * n - 1
    npd = n + 2 * pad
    npd2 = npd * npd
    n_om = W.shape[1]
    s1 = ksign[0]
    s2_ = ksign[1]
    s3 = ksign[2]
    for j in prange(v_idx.shape[0]):
        iv = v_idx[j]
        a = iv // (n * n)
        b = (iv // n) % n
        c = iv % n
        va = -vmax + a * h
        vb = -vmax + b * h
        vc = -vmax + c * h
        pv0 = ((a + pad) * npd + (b + pad)) * npd + (c + pad)
        mv = mun[iv]
        gv = gn[iv]
        acc = np.zeros(13)
        for a2 in range(n):
            za = (a2 - a + n - 1) * n2
            ua = -vmax + a2 * h
            for b2 in range(n):
                zb = (za + b2 - b + n - 1) * n2
                ub = -vmax + b2 * h
                for c2 in range(n):
                    zi = zb + c2 - c + n - 1
                    uc = -vmax + c2 * h
                    iu = (a2 * n + b2) * n + c2
                    mu_u = mun[iu]
                    gu = gn[iu]
                    pu0 = ((a2 + pad) * npd + (b2 + pad)) * npd + (c2 + pad)
                    cmz = cm[zi]
                    for o in range(n_om):
                        w = W[zi, o]
                        if w == 0.0:
                            continue
                        d0 = D[zi, o, 0]
                        d1 = D[zi, o, 1]
                        d2 = D[zi, o, 2]
                        x = va + d0
                        y = vb + d1
                        z = vc + d2
                        m_vp = _mu(x * x + y * y + z * z, delta, rho)
                        x = ua - d0
                        y = ub - d1
                        z = uc - d2
                        m_up = _mu(x * x + y * y + z * z, delta, rho)
                        acc[0] += w * (mu_u - delta * mu_u * m_up - delta * mu_u * m_vp
                                       + delta * m_up * m_vp)
                        if not (want_k or want_gamma):
                            continue
                        g_vp = m_vp * _trilinear(Qp, pv0 + offv[zi, o], tv[zi, o, 0],
                                                 tv[zi, o, 1], tv[zi, o, 2], npd, npd2)
                        g_up = m_up * _trilinear(Qp, pu0 + offu[zi, o], tu[zi, o, 0],
                                                 tu[zi, o, 1], tu[zi, o, 2], npd, npd2)
                        if want_k:
                            b1 = m_vp - delta * m_vp * mu_u - delta * m_vp * mv + delta * mu_u * mv
                            b2_ = m_up - delta * m_up * mu_u - delta * m_up * mv + delta * mu_u * mv
                            b3 = mv - delta * mv * m_up - delta * mv * m_vp + delta * m_up * m_vp
                            kt = s1 * b1 * g_up + s2_ * b2_ * g_vp + s3 * b3 * gu
                            acc[1] += w * kt
                            acc[2] += w * cmz * kt
                        if want_gamma:
                            acc[3] += w * g_up * g_vp * (1.0 - delta * mv - delta * mu_u)
                            acc[4] -= w * gu * gv * (1.0 - delta * m_vp - delta * m_up)
                            acc[5] += w * delta * g_vp * gu * (mv - m_up)
                            acc[6] += w * delta * g_up * gu * (mv - m_vp)
                            acc[7] += w * delta * g_vp * gv * (mu_u - m_up)
                            acc[8] += w * delta * g_up * gv * (mu_u - m_vp)
                            acc[9] += w * delta * gu * gv * g_up
                            acc[10] += w * delta * gu * gv * g_vp
                            acc[11] -= w * delta * g_up * g_vp * gu
                            acc[12] -= w * delta * g_up * g_vp * gv
        for k in range(13):
            out[k, j] = acc[k]
