"""Vectorized numpy stepper: the reference backend.

One fused step advances state x, covector nu, and the per-direction response
accumulators for a whole block of paths.  Update order (all fields evaluated
at the pre-step (t_n, x_n), accumulators using the pre-update nu_n):

    dS_d  = nu . (-dF_d dt - dsig_d dB + dsig_d grad_sigma dt)
            + (dsig_d lap_sigma - div_dF_d + grad_sigma . grad_dsig_d) dt
            - grad_dsig_d . dB
    dnu   = ((grad_sigma . nu) grad_sigma - jac_drift^T nu - alpha nu
             - grad_div_drift + hess_sigma grad_sigma + lap_sigma grad_sigma) dt
            - ((nu . dB) grad_sigma + hess_sigma dB + alpha dB / sigma)
    x'    = x + drift dt + sigma dB
"""

from __future__ import annotations

import numpy as np

from ..errors import ModelError

__all__ = ["continuous_step", "py_run_block"]


def continuous_step(kern, t, X, NU, dB, dt, alpha, packs):
    """One fused step for a block. Returns (X1, NU1, dS, sigma)."""
    B = X.shape[0]
    F = kern.drift(t, X)
    sig = kern.sigma(t, X)
    gs = kern.grad_sigma(t, X)
    lap = kern.lap_sigma(t, X)
    gdiv = kern.grad_div_drift(t, X)
    jt_nu = kern.jac_t_mult(t, X, NU)
    h_db = kern.hess_mult(t, X, dB)
    h_gs = kern.hess_mult(t, X, gs)
    nu_db = np.einsum("bi,bi->b", NU, dB)
    gs_nu = np.einsum("bi,bi->b", gs, NU)

    dS = np.empty((B, len(packs)))
    for d, pack in enumerate(packs):
        dF, div_dF, dsig, gdsig = kern.delta(t, X, pack)
        nu_df = np.einsum("bi,bi->b", NU, dF)
        dS[:, d] = (
            -nu_df + dsig * (gs_nu + lap) - div_dF + np.einsum("bi,bi->b", gs, gdsig)
        ) * dt - dsig * nu_db - np.einsum("bi,bi->b", gdsig, dB)

    dNU = (
        gs_nu[:, None] * gs - jt_nu - alpha * NU - gdiv + h_gs + lap[:, None] * gs
    ) * dt - (nu_db[:, None] * gs + h_db + (alpha / sig)[:, None] * dB)
    X1 = X + F * dt + sig[:, None] * dB
    return X1, NU + dNU, dS, sig


def py_run_block(kern, X, NU, ACC, inc, t0, dt, alpha, packs, blowup=1e8):
    """Advance a block through all steps in place; returns the alive mask."""
    n_steps = inc.shape[1]
    alive = np.ones(X.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for n in range(n_steps):
            t = t0 + n * dt
            dB = inc[:, n, :]
            X1, NU1, dS, sig = continuous_step(kern, t, X, NU, dB, dt, alpha, packs)
            if np.any((sig <= 0) & np.isfinite(sig) & alive):
                raise ModelError("sigma <= 0 encountered during stepping")
            bad = ~np.isfinite(X1).all(axis=-1)
            bad |= np.abs(X1).max(axis=-1) > blowup
            bad |= ~np.isfinite(NU1).all(axis=-1)
            if dS.shape[1]:
                bad |= ~np.isfinite(dS).all(axis=-1)
            alive &= ~bad
            cols = alive[:, None]
            X[...] = np.where(cols, X1, X)
            NU[...] = np.where(cols, NU1, NU)
            if ACC.shape[1]:
                ACC[...] = np.where(cols, ACC + dS, ACC)
    return alive
