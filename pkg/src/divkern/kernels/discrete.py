"""Exact-discrete bookkeeping for the one-step map g(x) = x + F dt + sigma dB.

Covector transport solves the transposed step-Jacobian system, and the
response increment uses the exact log-determinant of the step Jacobian

    g_* = I + jac_drift dt + outer(dB, grad_sigma).

Modes (independently selectable):
  div g_*      "approx" closed form  grad_div_drift dt + H dB - H grad_sigma dt
               "fd"     central differences of log|det g_.(x)| in x
  dlog|g|      "fd"     central differences of log|det g^gamma| in gamma
               "approx" div_dF dt + grad_dsig . dB - grad_sigma . grad_dsig dt

This path is O(M^3) per path-step and exists for validation; the continuous
backends are the production estimators.
"""

from __future__ import annotations

import numpy as np

from ..errors import ModelError

__all__ = ["DiscreteOptions", "discrete_run_block"]

from dataclasses import dataclass


@dataclass
class DiscreteOptions:
    nu_div_g: str = "approx"    # "approx" | "fd"
    grad_log_g: str = "fd"      # "fd" | "approx"
    delta_log_g: str = "fd"     # "fd" | "approx"
    eps_gamma: float = 1e-6
    fd_scale: float = 1e-5      # h_x = fd_scale * (1 + |x|_inf)

    def __post_init__(self):
        if self.nu_div_g not in ("approx", "fd"):
            raise ModelError(f"nu_div_g must be approx|fd, got {self.nu_div_g!r}")
        if self.grad_log_g not in ("fd", "approx"):
            raise ModelError(f"grad_log_g must be fd|approx, got {self.grad_log_g!r}")
        if self.delta_log_g not in ("fd", "approx"):
            raise ModelError(f"delta_log_g must be fd|approx, got {self.delta_log_g!r}")


def _step_jacobian(kern, t, X, dB, dt):
    J = kern.jac(t, X)
    gs = kern.grad_sigma(t, X)
    M = X.shape[1]
    return np.eye(M) + J * dt + dB[:, :, None] * gs[:, None, :]


def _slogdet(g):
    if g.shape[-1] == 1:
        det = g[..., 0, 0]
        return np.sign(det), np.log(np.abs(det))
    return np.linalg.slogdet(g)


def _solve(g, v):
    if g.shape[-1] == 1:
        return v / g[..., 0, 0][..., None]
    return np.linalg.solve(g, v[..., None])[..., 0]


def _solve_t(g, v):
    if g.shape[-1] == 1:
        return v / g[..., 0, 0][..., None]
    return np.linalg.solve(np.swapaxes(g, -1, -2), v[..., None])[..., 0]


def _div_g_approx(kern, t, X, dB, dt):
    gs = kern.grad_sigma(t, X)
    return (
        kern.grad_div_drift(t, X) * dt
        + kern.hess_mult(t, X, dB)
        - kern.hess_mult(t, X, gs) * dt
    )


def _div_g_fd(kern, t, X, dB, dt, fd_scale):
    B, M = X.shape
    h = fd_scale * (1.0 + np.abs(X).max(axis=-1))
    out = np.empty((B, M))
    for j in range(M):
        Xp = X.copy()
        Xp[:, j] += h
        Xm = X.copy()
        Xm[:, j] -= h
        _, lap_ = _slogdet(_step_jacobian(kern, t, Xp, dB, dt))
        _, lam_ = _slogdet(_step_jacobian(kern, t, Xm, dB, dt))
        out[:, j] = (lap_ - lam_) / (2.0 * h)
    return out


def discrete_run_block(
    model,
    gamma,
    X,
    NU,
    ACC,
    inc,
    t0,
    dt,
    alpha,
    directions,
    options: DiscreteOptions | None = None,
    blowup=1e8,
):
    """Advance one block with exact-discrete score and response updates.

    alpha is the continuous rate; the per-step kernel weight is alpha * dt.
    Arrays are updated in place; returns the alive mask.  Paths whose step
    Jacobian loses a positive determinant are excluded (the change of
    variables behind the estimator no longer applies to them).
    """
    opt = options or DiscreteOptions()
    kern = model.kernel(gamma)
    packs = [kern.pack_direction(d) for d in directions]
    pm = []
    if opt.delta_log_g == "fd":
        gamma = np.asarray(gamma, dtype=float)
        for d in directions:
            d = np.asarray(d, dtype=float)
            pm.append(
                (
                    model.kernel(gamma + opt.eps_gamma * d),
                    model.kernel(gamma - opt.eps_gamma * d),
                )
            )
    w = alpha * dt
    if not 0.0 <= w <= 1.0:
        raise ModelError(f"discrete kernel weight alpha*dt = {w} outside [0, 1]")

    n_steps = inc.shape[1]
    alive = np.ones(X.shape[0], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for n in range(n_steps):
            t = t0 + n * dt
            dB = inc[:, n, :]
            F = kern.drift(t, X)
            sig = kern.sigma(t, X)
            if np.any((sig <= 0) & np.isfinite(sig) & alive):
                raise ModelError("sigma <= 0 encountered during stepping")
            g = _step_jacobian(kern, t, X, dB, dt)
            sign, _ = _slogdet(g)
            bad = ~(sign > 0)

            need_fd = opt.grad_log_g == "fd" or opt.nu_div_g == "fd"
            div_fd = _div_g_fd(kern, t, X, dB, dt, opt.fd_scale) if need_fd else None
            div_ap = (
                _div_g_approx(kern, t, X, dB, dt)
                if opt.grad_log_g == "approx" or opt.nu_div_g == "approx"
                else None
            )
            grad_log_g = div_fd if opt.grad_log_g == "fd" else div_ap

            dS = np.empty((X.shape[0], len(packs)))
            for d, pack in enumerate(packs):
                dF, div_dF, dsig, gdsig = kern.delta(t, X, pack)
                dg = dF * dt + dsig[:, None] * dB
                dx = -_solve(g, dg)
                if opt.delta_log_g == "fd":
                    kp, km = pm[d]
                    _, la_p = _slogdet(_step_jacobian(kp, t, X, dB, dt))
                    _, la_m = _slogdet(_step_jacobian(km, t, X, dB, dt))
                    dlog_g = (la_p - la_m) / (2.0 * opt.eps_gamma)
                else:
                    gs = kern.grad_sigma(t, X)
                    dlog_g = (
                        div_dF * dt
                        + np.einsum("bi,bi->b", gdsig, dB)
                        - np.einsum("bi,bi->b", gs, gdsig) * dt
                    )
                dS[:, d] = np.einsum("bi,bi->b", NU - grad_log_g, dx) - dlog_g

            div_nu = div_fd if opt.nu_div_g == "fd" else div_ap
            NU1 = (1.0 - w) * _solve_t(g, NU - div_nu) + w * (-dB / dt) / sig[:, None]
            X1 = X + F * dt + sig[:, None] * dB

            bad |= ~np.isfinite(X1).all(axis=-1)
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
