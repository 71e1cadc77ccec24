# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fused stepper for the closed-form model families.

Implements the same per-step recursions as the numpy backend (see
py_backend) with identical update order, path by path in C.  Families are
selected by id: 0 mean-reverting constant-noise, 1 scalar time-rescaled
double-well noise bump, 2 cyclic coupling lattice.  Function-defined models
have no compiled form and stay on the numpy path.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite, sqrt

from ..errors import ModelError


cdef inline int _commit(
    double[:, ::1] X, double[:, ::1] NU, double[:, ::1] ACC,
    double[::1] x1, double[::1] nu1, double[::1] ds,
    Py_ssize_t b, Py_ssize_t M, Py_ssize_t D, double blowup,
) noexcept nogil:
    """Apply one path's step if every update stayed finite; 0 means frozen."""
    cdef Py_ssize_t i, d
    cdef double v
    for i in range(M):
        v = x1[i]
        if not isfinite(v) or fabs(v) > blowup:
            return 0
        if not isfinite(nu1[i]):
            return 0
    for d in range(D):
        if not isfinite(ds[d]):
            return 0
    for i in range(M):
        X[b, i] = x1[i]
        NU[b, i] = nu1[i]
    for d in range(D):
        ACC[b, d] += ds[d]
    return 1


def run_block(
    int fam_id,
    double[::1] fpar,
    double[::1] fvec,
    double[:, ::1] dirs,
    double[:, ::1] X,
    double[:, ::1] NU,
    double[:, ::1] ACC,
    double[:, :, ::1] inc,
    double t0,
    double dt,
    double alpha,
    unsigned char[::1] alive,
    double blowup,
):
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t M = X.shape[1]
    cdef Py_ssize_t n_steps = inc.shape[1]
    cdef Py_ssize_t D = ACC.shape[1]
    cdef Py_ssize_t n, b, i, j, d
    cdef double t, sig, nu_db, gs_nu, su, s2, E, lap, u_db, u_gs, nu_df
    cdef double beta, rb, u0, E0, gs0, d2, dF0, dsig, gdsig0, target, sigc
    cdef double center, damp, twoM, dc, gs_gdsig, gdsig_db, acc_t
    cdef int err = 0

    scratch = np.empty((8, M))
    cdef double[::1] u = scratch[0]
    cdef double[::1] F = scratch[1]
    cdef double[::1] gs = scratch[2]
    cdef double[::1] jtnu = scratch[3]
    cdef double[::1] hdb = scratch[4]
    cdef double[::1] x1 = scratch[5]
    cdef double[::1] nu1 = scratch[6]
    cdef double[::1] gdsig = scratch[7]
    ds_arr = np.empty(max(D, 1))
    cdef double[::1] ds = ds_arr
    idx = np.arange(M, dtype=np.intp)
    cdef Py_ssize_t[::1] ip1 = ((idx + 1) % M).astype(np.intp)
    cdef Py_ssize_t[::1] ip2 = ((idx + 2) % M).astype(np.intp)
    cdef Py_ssize_t[::1] im1 = ((idx - 1) % M).astype(np.intp)
    cdef Py_ssize_t[::1] im2 = ((idx - 2) % M).astype(np.intp)

    if fam_id == 0:
        target = fpar[0]
        sigc = fpar[1]
    elif fam_id == 1:
        if M != 1:
            raise ModelError("scalar family needs dim 1")
    elif fam_id == 2:
        center = fpar[0]
        damp = fpar[1]
        twoM = 2.0 / M
    else:
        raise ModelError(f"unknown compiled family id {fam_id}")

    with nogil:
        for n in range(n_steps):
            if err:
                break
            t = t0 + n * dt
            if fam_id == 1:
                beta = 1.0 + fpar[2] * t
                rb = sqrt(beta)
            for b in range(B):
                if not alive[b]:
                    continue

                if fam_id == 0:
                    sig = sigc
                    nu_db = 0.0
                    su = 0.0
                    for i in range(M):
                        nu_db += NU[b, i] * inc[b, n, i]
                        su += NU[b, i]
                    for d in range(D):
                        ds[d] = (-dirs[d, 0] * su) * dt - dirs[d, 1] * nu_db
                    for i in range(M):
                        nu1[i] = NU[b, i] + (NU[b, i] - alpha * NU[b, i]) * dt - (
                            alpha / sig
                        ) * inc[b, n, i]
                        x1[i] = X[b, i] + (target - X[b, i]) * dt + sig * inc[b, n, i]

                elif fam_id == 1:
                    u0 = X[b, 0] - fpar[1]
                    E0 = exp(-u0 * u0)
                    sig = rb * (0.5 + E0)
                    gs0 = -2.0 * rb * u0 * E0
                    d2 = rb * E0 * (4.0 * u0 * u0 - 2.0)
                    nu_db = NU[b, 0] * inc[b, n, 0]
                    gs_nu = gs0 * NU[b, 0]
                    for d in range(D):
                        dF0 = beta * dirs[d, 0]
                        dsig = 2.0 * rb * u0 * E0 * dirs[d, 1]
                        gdsig0 = 2.0 * rb * E0 * (1.0 - 2.0 * u0 * u0) * dirs[d, 1]
                        ds[d] = (
                            -NU[b, 0] * dF0 + dsig * (gs_nu + d2) + gs0 * gdsig0
                        ) * dt - dsig * nu_db - gdsig0 * inc[b, n, 0]
                    nu1[0] = NU[b, 0] + (
                        gs_nu * gs0 + beta * NU[b, 0] - alpha * NU[b, 0]
                        + d2 * gs0 + d2 * gs0
                    ) * dt - (nu_db * gs0 + d2 * inc[b, n, 0] + (alpha / sig) * inc[b, n, 0])
                    x1[0] = X[b, 0] + beta * (fpar[0] - X[b, 0]) * dt + sig * inc[b, n, 0]

                else:
                    s2 = 0.0
                    su = 0.0
                    for i in range(M):
                        u[i] = X[b, i] - center
                        s2 += u[i] * u[i]
                        su += u[i]
                    E = exp(-s2 / M)
                    sig = 0.5 + E
                    lap = E * (twoM * twoM * s2 - 2.0)
                    nu_db = 0.0
                    gs_nu = 0.0
                    u_db = 0.0
                    u_gs = 0.0
                    for i in range(M):
                        gs[i] = -twoM * E * u[i]
                        nu_db += NU[b, i] * inc[b, n, i]
                        u_db += u[i] * inc[b, n, i]
                    for i in range(M):
                        gs_nu += gs[i] * NU[b, i]
                        u_gs += u[i] * gs[i]
                    for i in range(M):
                        F[i] = (
                            (X[b, ip1[i]] - X[b, im2[i]]) * X[b, im1[i]]
                            - X[b, i] + fvec[i] - damp * X[b, i] * X[b, i]
                        )
                        jtnu[i] = (
                            NU[b, im1[i]] * X[b, im2[i]]
                            - NU[b, ip2[i]] * X[b, ip1[i]]
                            + NU[b, ip1[i]] * (X[b, ip2[i]] - X[b, im1[i]])
                            - (1.0 + 2.0 * damp * X[b, i]) * NU[b, i]
                        )
                        hdb[i] = E * (
                            twoM * twoM * u_db * u[i] - twoM * inc[b, n, i]
                        )
                    for d in range(D):
                        nu_df = 0.0
                        for i in range(M):
                            nu_df += NU[b, i] * dirs[d, i]
                        dc = dirs[d, M]
                        if dc == 0.0:
                            ds[d] = -nu_df * dt
                        else:
                            dsig = twoM * E * su * dc
                            gs_gdsig = 0.0
                            gdsig_db = 0.0
                            for i in range(M):
                                gdsig[i] = twoM * E * (1.0 - twoM * su * u[i]) * dc
                                gs_gdsig += gs[i] * gdsig[i]
                                gdsig_db += gdsig[i] * inc[b, n, i]
                            ds[d] = (
                                -nu_df + dsig * (gs_nu + lap) + gs_gdsig
                            ) * dt - dsig * nu_db - gdsig_db
                    for i in range(M):
                        nu1[i] = NU[b, i] + (
                            gs_nu * gs[i] - jtnu[i] - alpha * NU[b, i]
                            + 2.0 * damp
                            + E * (twoM * twoM * u_gs * u[i] - twoM * gs[i])
                            + lap * gs[i]
                        ) * dt - (
                            nu_db * gs[i] + hdb[i] + (alpha / sig) * inc[b, n, i]
                        )
                        x1[i] = X[b, i] + F[i] * dt + sig * inc[b, n, i]

                if isfinite(sig) and sig <= 0.0:
                    err = 1
                    break
                alive[b] = _commit(X, NU, ACC, x1, nu1, ds, b, M, D, blowup)

    if err:
        raise ModelError("sigma <= 0 encountered during stepping")
    return None
