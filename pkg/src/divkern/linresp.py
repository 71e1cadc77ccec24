"""Linear responses of log marginal densities and of ergodic averages.

The per-step increment dS is linear in the perturbation fields (delta_drift,
delta_sigma and their derivatives); summed along a path and conditioned on
the endpoint it estimates the gamma-derivative of log h_T.  The ergodic
estimator correlates the same increments with a windowed centered observable
along one long orbit instead of conditioning.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .conditioning import BinSpec, build_table
from .errors import ConfigError, NumericsError
from .kernels.discrete import (
    DiscreteOptions,
    _div_g_approx,
    _div_g_fd,
    _slogdet,
    _solve,
    _step_jacobian,
)
from .kernels.py_backend import continuous_step
from .rng import path_rng

__all__ = [
    "delta_x",
    "step_accumulator",
    "step_accumulator_discrete",
    "estimate_linear_response",
    "ErgodicConfig",
    "ErgodicResult",
    "ergodic_average",
    "ergodic_linear_response",
]


def delta_x(bundle, dB, dt, mode="continuous") -> np.ndarray:
    """First-order response of one step's endpoint to the perturbation.

    continuous: -delta_drift dt - delta_sigma dB + delta_sigma grad_sigma dt.
    discrete: exact solve of the step Jacobian against the step perturbation;
    the two differ by O(dt^1.5) on a fixed noise draw.
    """
    dB = np.asarray(dB, dtype=float)
    if mode == "continuous":
        return (
            -bundle.delta_drift * dt
            - bundle.delta_sigma * dB
            + bundle.delta_sigma * bundle.grad_sigma * dt
        )
    if mode == "discrete":
        M = dB.shape[-1]
        g = np.eye(M) + bundle.jac_drift * dt + np.outer(dB, bundle.grad_sigma)
        sign, _ = np.linalg.slogdet(g)
        if not sign > 0:
            raise NumericsError("singular step Jacobian in delta_x")
        return -np.linalg.solve(g, bundle.delta_drift * dt + bundle.delta_sigma * dB)
    raise ConfigError(f"mode must be continuous|discrete, got {mode!r}")


def step_accumulator(S, nu, bundle, dB, dt) -> float:
    """Add one continuous-form response increment (pre-update covector).

    Every term carries a delta factor, so a zero perturbation adds exactly
    zero.  Mirrors the fused block kernels term for term.
    """
    nu = np.asarray(nu, dtype=float)
    dB = np.asarray(dB, dtype=float)
    gs = bundle.grad_sigma
    nu_db = float(nu @ dB)
    gs_nu = float(gs @ nu)
    dS = (
        -float(nu @ bundle.delta_drift)
        + bundle.delta_sigma * (gs_nu + bundle.lap_sigma)
        - bundle.div_delta_drift
        + float(gs @ bundle.grad_delta_sigma)
    ) * dt - bundle.delta_sigma * nu_db - float(bundle.grad_delta_sigma @ dB)
    out = S + dS
    if not np.isfinite(out):
        raise NumericsError("response accumulator became non-finite")
    return float(out)


def step_accumulator_discrete(
    S, nu, model, t, x, dB, dt, direction, gamma=None, options=None
) -> float:
    """Add one exact-discrete response increment through the step map.

    Uses the exact Jacobian solve for the endpoint response and, per the
    options, finite differences of the step log-determinant for its gradient
    (in x) and gamma-derivative.
    """
    opt = options or DiscreteOptions()
    work = model if gamma is None else model.with_gamma(gamma)
    kern = work.kernel()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    X = x[None, :]
    dBr = np.asarray(dB, dtype=float).reshape(1, -1)
    g = _step_jacobian(kern, t, X, dBr, dt)
    sign, _ = _slogdet(g)
    if not sign[0] > 0:
        raise NumericsError("singular step Jacobian in discrete accumulator")

    if opt.grad_log_g == "fd":
        grad_log_g = _div_g_fd(kern, t, X, dBr, dt, opt.fd_scale)
    else:
        grad_log_g = _div_g_approx(kern, t, X, dBr, dt)

    dvec = work.normalize_direction(direction)
    pack = kern.pack_direction(dvec)
    dF, div_dF, dsig, gdsig = kern.delta(t, X, pack)
    dx = -_solve(g, dF * dt + dsig[:, None] * dBr)

    if opt.delta_log_g == "fd":
        gam = work.params.gamma
        kp = work.kernel(gam + opt.eps_gamma * dvec)
        km = work.kernel(gam - opt.eps_gamma * dvec)
        _, la_p = _slogdet(_step_jacobian(kp, t, X, dBr, dt))
        _, la_m = _slogdet(_step_jacobian(km, t, X, dBr, dt))
        dlog_g = (la_p - la_m) / (2.0 * opt.eps_gamma)
    else:
        gs = kern.grad_sigma(t, X)
        dlog_g = (
            div_dF * dt
            + np.einsum("bi,bi->b", gdsig, dBr)
            - np.einsum("bi,bi->b", gs, gdsig) * dt
        )

    nu_row = np.atleast_1d(np.asarray(nu, dtype=float))[None, :]
    dS = np.einsum("bi,bi->b", nu_row - grad_log_g, dx) - dlog_g
    out = S + float(dS[0])
    if not np.isfinite(out):
        raise NumericsError("response accumulator became non-finite")
    return float(out)


def estimate_linear_response(ensemble, cond, direction_index=0, min_count=30):
    """Conditional mean of the response accumulator: per-bin d log h_T / d gamma.

    The accumulator already starts at the initial-density term, so the table
    means estimate the full derivative.  Excluded paths are dropped.
    """
    if ensemble.acc.shape[1] == 0:
        raise ConfigError("ensemble carries no response accumulators")
    payload = ensemble.acc[ensemble.alive, direction_index]
    x = ensemble.x[ensemble.alive]
    if isinstance(cond, BinSpec) and cond.min_count < min_count:
        cond = BinSpec(
            interval=cond.interval,
            n_bins=cond.n_bins,
            min_count=min_count,
            coordinate=cond.coordinate,
        )
    if x.shape[1] == 1:
        return build_table(x[:, 0], payload, cond)
    return build_table(x, payload, cond)


@dataclass
class ErgodicConfig:
    """Stationary-response run parameters (time units unless noted)."""

    observable: "callable"       # batched (n_orbits, M) -> (n_orbits,)
    window: float = 1.5          # correlation window W
    horizon: float = 100.0       # averaged orbit length T (post burn-in)
    n_orbits: int = 7
    dt: float = 0.01
    alpha: float = 10.0
    burn_in: float = 10.0
    seed: int = 0
    chunk_steps: int = 4096      # increment draw granularity, no effect on values

    def __post_init__(self):
        if not 0 < self.window < self.horizon:
            raise ConfigError(
                f"need 0 < window < horizon, got W={self.window}, T={self.horizon}"
            )
        if self.dt <= 0 or self.n_orbits < 1 or self.burn_in < 0:
            raise ConfigError("dt > 0, n_orbits >= 1, burn_in >= 0 required")


@dataclass
class ErgodicResult:
    """Ergodic average, its parameter derivative, and the orbit spread."""

    phi_avg: float
    response: float
    se: float
    per_orbit: np.ndarray = field(repr=False)


class _IncrementFeed:
    """Chunked per-orbit Brownian increments; replayable across passes."""

    def __init__(self, seed, n_orbits, dim, dt, chunk):
        self.gens = [path_rng(seed, j) for j in range(n_orbits)]
        self.dim = dim
        self.scale = np.sqrt(dt)
        self.chunk = chunk
        self.buf = None
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.buf is None or self.pos == self.chunk:
            self.buf = np.stack(
                [g.standard_normal((self.chunk, self.dim)) for g in self.gens]
            )
            self.pos = 0
        out = self.buf[:, self.pos, :] * self.scale
        self.pos += 1
        return out


def ergodic_average(model, config: ErgodicConfig):
    """Per-orbit stationary time averages of the observable, no covector.

    Uses the same seed conventions (initial draws and increment streams) as
    ergodic_linear_response, so averages at perturbed parameters share the
    noise realization: finite differences of this quantity have far lower
    variance than independent runs.  Returns (pooled_mean, per_orbit).
    """
    J, M = config.n_orbits, model.dim
    dt = config.dt
    n_burn = int(round(config.burn_in / dt))
    n_avg = int(round(config.horizon / dt)) + int(round(config.window / dt))
    kern = model.kernel()
    phi = config.observable
    X = np.stack(
        [model.init.sampler(path_rng(config.seed, j, stream=1), M) for j in range(J)]
    )
    feed = _IncrementFeed(config.seed, J, M, dt, config.chunk_steps)
    for _ in range(n_burn):
        X = X + kern.drift(0.0, X) * dt + kern.sigma(0.0, X)[:, None] * feed.next()
    per_orbit = np.zeros(J)
    for _ in range(n_avg):
        per_orbit += phi(X)
        X = X + kern.drift(0.0, X) * dt + kern.sigma(0.0, X)[:, None] * feed.next()
    if not np.isfinite(X).all():
        raise NumericsError("orbit left the finite range during averaging")
    per_orbit /= n_avg
    return float(per_orbit.mean()), per_orbit


def ergodic_linear_response(model, direction, config: ErgodicConfig) -> ErgodicResult:
    """Response of a stationary time average to a parameter perturbation.

    Two passes over the same orbits.  Pass 1 estimates the pooled observable
    mean.  Pass 2 re-runs the orbits, evolves the covector (started at zero;
    burn-in absorbs the wrong initialization), and correlates each step's
    response increment with the windowed centered observable that follows it.
    Orbits are averaged and the SE is their spread; memory stays O(window),
    no trajectory is stored.
    """
    if not model.stationary:
        raise ConfigError(f"model {model.name!r} is not stationary")
    J, M = config.n_orbits, model.dim
    dt = config.dt
    n_burn = int(round(config.burn_in / dt))
    n_avg = int(round(config.horizon / dt))
    n_win = int(round(config.window / dt))
    if n_win < 1:
        raise ConfigError("window shorter than one step")
    n_total = n_burn + n_avg + n_win
    kern = model.kernel()
    pack = kern.pack_direction(model.normalize_direction(direction))
    phi = config.observable

    x0 = np.stack(
        [model.init.sampler(path_rng(config.seed, j, stream=1), M) for j in range(J)]
    )

    def sweep(with_response):
        feed = _IncrementFeed(config.seed, J, M, dt, config.chunk_steps)
        X = x0.copy()
        NU = np.zeros((J, M))
        for _ in range(n_burn):
            X, NU, _, _ = continuous_step(
                kern, 0.0, X, NU, feed.next(), dt, config.alpha, []
            )
        if not with_response:
            phi_sum = 0.0
            for _ in range(n_avg + n_win):
                phi_sum += phi(X).sum()
                X, NU, _, _ = continuous_step(
                    kern, 0.0, X, NU, feed.next(), dt, config.alpha, []
                )
            if not np.isfinite(X).all():
                raise NumericsError("orbit left the finite range during pass 1")
            return phi_sum / (J * (n_avg + n_win))

        R = np.zeros(J)
        window = deque()
        window_sum = np.zeros(J)
        for k in range(n_avg + n_win):
            while window and window[0][0] < k - n_win:
                window_sum -= window.popleft()[1]
            if k >= 1:
                R += (phi(X) - phi_avg) * window_sum
            dB = feed.next()
            X1, NU1, dS, _ = continuous_step(kern, 0.0, X, NU, dB, dt, config.alpha, [pack])
            if k <= n_avg - 1:
                window.append((k, dS[:, 0].copy()))
                window_sum += dS[:, 0]
            X, NU = X1, NU1
        if not np.isfinite(R).all() or not np.isfinite(X).all():
            raise NumericsError("orbit left the finite range during pass 2")
        return R / n_avg

    phi_avg = sweep(with_response=False)
    per_orbit = sweep(with_response=True)
    response = float(per_orbit.mean())
    se = float(per_orbit.std(ddof=1) / np.sqrt(J)) if J > 1 else float("nan")
    return ErgodicResult(
        phi_avg=float(phi_avg), response=response, se=se, per_orbit=per_orbit
    )
