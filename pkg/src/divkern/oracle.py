"""Independent ground truths to test the estimators against.

Four routes, none sharing code with the production estimators:

* one-step quadrature of the transition-density integral (1-D),
* finite differences of histogrammed log-densities with common random
  numbers and a bootstrap SE,
* closed-form mean-reverting (Ornstein-Uhlenbeck) marginals,
* the likelihood-ratio / kernel-differentiation accumulators, which estimate
  the same responses through a completely different identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import ConditionalTable
from .errors import ConfigError, ModelError, NumericsError
from .rng import generate_increments, initial_rng
from .simulate import PathConfig, PathEnsemble, _check_exclusion, run_forward

__all__ = [
    "quadrature_one_step",
    "quadrature_delta_log_h1",
    "fd_log_density",
    "fd_ergodic_response",
    "FDErgodicResult",
    "OUAnalytic",
    "ou_analytic",
    "likelihood_ratio_response",
    "kernel_one_step_response",
]


# ---------------------------------------------------------------------------
# one-step quadrature


def _init_density(model):
    if model.init.log_pdf is None:
        raise ConfigError("quadrature oracle needs an initial density with log_pdf")
    return model.init.log_pdf


def quadrature_one_step(
    model,
    x1_grid,
    dt,
    gamma=None,
    t0=0.0,
    n_points=10_000,
    span=8.0,
    x0_range=None,
    tail_tol=1e-8,
) -> np.ndarray:
    """Density after one Euler step, by trapezoid quadrature over x_0 (1-D).

    h_1(x_1) = integral of h_0(x_0) * N(x_1; x_0 + F dt, sigma(x_0)^2 dt).
    The x_0 grid spans the initial mean +- span standard deviations unless
    x0_range overrides it; a heuristic endpoint check guards truncation.
    """
    if model.dim != 1:
        raise ConfigError("quadrature oracle is 1-D only")
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    log_h0 = _init_density(model)
    if x0_range is None:
        if model.init.gaussian_params is None:
            raise ConfigError("x0_range required for non-Gaussian initial density")
        m0, v0 = model.init.gaussian_params
        x0_range = (m0 - span * np.sqrt(v0), m0 + span * np.sqrt(v0))
    lo, hi = float(x0_range[0]), float(x0_range[1])
    if not hi > lo:
        raise ConfigError("empty x0 quadrature range")

    x0 = np.linspace(lo, hi, int(n_points))
    X0 = x0[:, None]
    kern = model.kernel(gamma)
    f = x0 + kern.drift(float(t0), X0)[:, 0] * dt
    sig = kern.sigma(float(t0), X0)
    if np.any(sig <= 0):
        raise ModelError("sigma must be positive on the quadrature grid")
    h0 = np.exp(log_h0(X0))

    x1 = np.asarray(x1_grid, dtype=float).reshape(-1)
    # rows: x1 points, cols: x0 grid
    z = x1[:, None] - f[None, :]
    var = (sig**2) * dt
    integrand = h0[None, :] * np.exp(-(z**2) / (2.0 * var[None, :])) / np.sqrt(
        2.0 * np.pi * var[None, :]
    )
    h1 = np.trapezoid(integrand, x0, axis=1)

    step = x0[1] - x0[0]
    tail = (integrand[:, 0] + integrand[:, -1]) * step
    if np.any(tail > tail_tol * np.maximum(h1, 1e-300)):
        raise NumericsError("quadrature truncation tails not converged")
    return h1


def quadrature_delta_log_h1(
    model, x1_grid, dt, direction, gamma=None, eps=1e-4, **quad_kwargs
) -> np.ndarray:
    """Central difference of log h_1 in gamma along direction (1-D oracle)."""
    d = model.normalize_direction(direction)
    base = model.params.gamma if gamma is None else np.asarray(gamma, dtype=float)
    hp = quadrature_one_step(model, x1_grid, dt, gamma=base + eps * d, **quad_kwargs)
    hm = quadrature_one_step(model, x1_grid, dt, gamma=base - eps * d, **quad_kwargs)
    if np.any(hp <= 0) or np.any(hm <= 0):
        raise NumericsError("log of nonpositive density in quadrature difference")
    return (np.log(hp) - np.log(hm)) / (2.0 * eps)


# ---------------------------------------------------------------------------
# finite-difference log-density oracle


def fd_log_density(
    model,
    direction,
    eps,
    interval,
    n_bins,
    dt,
    n_steps,
    n_paths,
    seed,
    n_boot=200,
    min_count=30,
    workers=1,
) -> ConditionalTable:
    """Histogram finite difference of log h_T in gamma, with bootstrap SEs.

    Simulates at gamma +- eps * direction under common random numbers, bins
    both endpoint ensembles identically, and differences the log counts.
    Bin widths and ensemble sizes cancel in the difference.  The SE comes
    from resampling paths (the same resample applied to both runs, since
    they are coupled through the driving noise).
    """
    d = model.normalize_direction(direction)
    base = model.params.gamma

    def endpoint(sign):
        cfg = PathConfig(
            model=model.with_gamma(base + sign * eps * d),
            dt=dt,
            n_steps=n_steps,
            n_paths=n_paths,
            seed=seed,
        )
        return run_forward(cfg, workers=workers)

    ens_p = endpoint(+1.0)
    ens_m = endpoint(-1.0)
    ok = ens_p.alive & ens_m.alive

    a, b = float(interval[0]), float(interval[1])
    width = (b - a) / int(n_bins)
    lefts = a + width * np.arange(int(n_bins))

    def bin_index(x):
        idx = np.floor((x - a) / width).astype(int)
        idx[x == b] = n_bins - 1
        idx[(idx < 0) | (idx >= n_bins) | ~ok] = n_bins  # overflow slot
        return idx

    bp = bin_index(ens_p.x[:, 0])
    bm = bin_index(ens_m.x[:, 0])

    def delta_from(counts_p, counts_m):
        with np.errstate(divide="ignore"):
            out = (np.log(counts_p) - np.log(counts_m)) / (2.0 * eps)
        out[(counts_p == 0) | (counts_m == 0)] = np.nan
        return out

    cp = np.bincount(bp, minlength=n_bins + 1)[:n_bins]
    cm = np.bincount(bm, minlength=n_bins + 1)[:n_bins]
    delta = delta_from(cp.astype(float), cm.astype(float))

    rng = np.random.default_rng([int(seed), 0xB007])
    boots = np.empty((n_boot, n_bins))
    L = n_paths
    for r in range(n_boot):
        idx = rng.integers(0, L, L)
        boots[r] = delta_from(
            np.bincount(bp[idx], minlength=n_bins + 1)[:n_bins].astype(float),
            np.bincount(bm[idx], minlength=n_bins + 1)[:n_bins].astype(float),
        )
    with np.errstate(invalid="ignore"):
        ses = np.nanstd(boots, axis=0, ddof=1)
    ses[~np.isfinite(delta)] = np.nan
    sparse = np.minimum(cp, cm) < min_count
    delta = np.where(sparse, np.nan, delta)
    ses = np.where(sparse, np.nan, ses)

    counts = ((cp + cm) / 2).astype(int)
    with np.errstate(divide="ignore"):
        log_density = np.log(np.maximum(counts, 0) / (ok.sum() * width))
    return ConditionalTable(
        mode="histogram",
        bin_left=lefts,
        bin_right=lefts + width,
        counts=counts,
        means=delta,
        ses=ses,
        log_density=log_density,
        n_total=int(n_paths),
        n_out_of_range=int(n_paths) - int(((bp < n_bins) & (bm < n_bins)).sum()),
    )


@dataclass(frozen=True)
class FDErgodicResult:
    """Central-difference estimate of a stationary response."""

    response: float
    se: float
    per_orbit: np.ndarray
    phi_plus: float
    phi_minus: float


def fd_ergodic_response(model, direction, dgamma, config) -> FDErgodicResult:
    """Stationary-response oracle: central difference of ergodic averages.

    Time-averages the observable on orbits at gamma +- dgamma * direction
    with shared noise (same seed conventions as the estimator), then
    differences orbit by orbit.  The SE is the orbit spread of the paired
    differences, which the common randomness keeps small.
    """
    from .linresp import ergodic_average

    dvec = model.normalize_direction(direction)
    gamma = model.params.gamma
    _, plus = ergodic_average(model.with_gamma(gamma + dgamma * dvec), config)
    _, minus = ergodic_average(model.with_gamma(gamma - dgamma * dvec), config)
    per_orbit = (plus - minus) / (2.0 * dgamma)
    n = per_orbit.size
    se = float(per_orbit.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return FDErgodicResult(
        response=float(per_orbit.mean()),
        se=se,
        per_orbit=per_orbit,
        phi_plus=float(plus.mean()),
        phi_minus=float(minus.mean()),
    )


# ---------------------------------------------------------------------------
# closed-form mean-reverting marginals


@dataclass(frozen=True)
class OUAnalytic:
    """Marginals of dx = (target - x) dt + sigma dB from N(m0, v0) at time t."""

    t: float
    m0: float = 0.0
    v0: float = 1.0
    target: float = 0.0
    sigma: float = 1.0

    @property
    def mean(self) -> float:
        return self.target + (self.m0 - self.target) * np.exp(-self.t)

    @property
    def var(self) -> float:
        e2 = np.exp(-2.0 * self.t)
        return self.v0 * e2 + self.sigma**2 * (1.0 - e2) / 2.0

    def score(self, x):
        return -(np.asarray(x, dtype=float) - self.mean) / self.var

    def delta_log_h_target(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 - np.exp(-self.t)) * (x - self.mean) / self.var

    def delta_log_h_sigma(self, x):
        x = np.asarray(x, dtype=float)
        m, v = self.mean, self.var
        dv = self.sigma * (1.0 - np.exp(-2.0 * self.t))
        return dv * ((x - m) ** 2 / v - 1.0) / (2.0 * v)

    def delta_log_h(self, x, direction):
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        if d.size != 2:
            raise ConfigError("direction must have 2 components (target, sigma)")
        return d[0] * self.delta_log_h_target(x) + d[1] * self.delta_log_h_sigma(x)

    @classmethod
    def from_model(cls, model, t) -> "OUAnalytic":
        if model.name != "ou":
            raise ConfigError(f"closed form applies to the ou family, not {model.name!r}")
        if model.init.gaussian_params is None:
            raise ConfigError("ou closed form needs a Gaussian initial density")
        m0, v0 = model.init.gaussian_params
        g = model.params.gamma
        sigma0 = float(model._opts.get("sigma0", 1.0))
        return cls(t=float(t), m0=m0, v0=v0, target=float(g[0]), sigma=sigma0 + float(g[1]))


def ou_analytic(t, m0=0.0, v0=1.0, target=0.0, sigma=1.0) -> OUAnalytic:
    """Closed-form marginal quantities of the mean-reverting family."""
    if v0 <= 0 and sigma <= 0:
        raise ConfigError("need v0 > 0 or sigma > 0")
    return OUAnalytic(t=float(t), m0=float(m0), v0=float(v0), target=float(target), sigma=float(sigma))


# ---------------------------------------------------------------------------
# likelihood-ratio and one-step kernel accumulators


def _kernel_form_run(config: PathConfig, direction, form: str) -> PathEnsemble:
    """Shared EM loop accumulating a kernel-differentiation response."""
    model = config.model
    d = model.normalize_direction(direction)
    kern = model.kernel()
    pack = kern.pack_direction(d)
    L, M, N = config.n_paths, model.dim, config.n_steps
    dt = config.dt

    x0 = np.empty((L, M))
    x = np.empty((L, M))
    acc = np.empty((L, 1))
    alive_all = np.empty(L, dtype=bool)

    block = 65536
    for s in range(0, L, block):
        e = min(s + block, L)
        B = e - s
        X0 = np.empty((B, M))
        inc = np.empty((B, N, M))
        for i in range(B):
            X0[i] = model.init.sampler(initial_rng(config.seed, s + i), M)
            inc[i] = generate_increments(config.seed, s + i, N, M, dt)
        X = X0.copy()
        S = np.asarray(model.init.delta_log_h0(X0, d), dtype=float).copy()
        alive = np.ones(B, dtype=bool)
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            for n in range(N):
                t = config.t0 + n * dt
                dB = inc[:, n, :]
                F = kern.drift(t, X)
                sig = kern.sigma(t, X)
                if np.any((sig <= 0) & np.isfinite(sig) & alive):
                    raise ModelError("sigma <= 0 encountered during stepping")
                dF, _, dsig, _ = kern.delta(t, X, pack)
                if form == "sde":
                    if np.abs(dsig[alive]).max(initial=0.0) > 1e-12:
                        raise ConfigError(
                            "likelihood-ratio form requires delta_sigma == 0; "
                            "use the divergence-kernel estimator instead"
                        )
                    dS = np.einsum("bi,bi->b", dF, dB) / sig
                elif form == "one_step":
                    dS = (
                        -M * dsig / sig
                        + np.einsum("bi,bi->b", dB, dsig[:, None] * dB + dF * dt)
                        / (dt * sig)
                    )
                else:
                    raise ConfigError(f"unknown kernel form {form!r}")
                X1 = X + F * dt + sig[:, None] * dB
                bad = ~np.isfinite(X1).all(axis=-1)
                bad |= np.abs(X1).max(axis=-1) > config.blowup
                bad |= ~np.isfinite(dS)
                alive &= ~bad
                X = np.where(alive[:, None], X1, X)
                S = np.where(alive, S + dS, S)
        x0[s:e] = X0
        x[s:e] = X
        acc[s:e, 0] = S
        alive_all[s:e] = alive

    _check_exclusion(alive_all, config.max_exclusion)
    return PathEnsemble(
        x=x,
        nu=np.zeros((L, M)),
        acc=acc,
        alive=alive_all,
        x0=x0,
        t=config.t0 + N * dt,
        config=config,
        directions=d[None, :],
        mode=f"kernel_{form}",
    )


def likelihood_ratio_response(config: PathConfig, direction) -> PathEnsemble:
    """Likelihood-ratio response accumulator (drift perturbations only).

    Per path: delta log h_0(x_0) + sum_n delta_drift(x_n) . dB_n / sigma(x_n).
    Same driving noise as the divergence-kernel engine for the same seed, so
    the two estimators can be compared path by path.  Rejects perturbations
    that touch the diffusion (their increments do not vanish with dt here).
    """
    return _kernel_form_run(config, direction, "sde")


def kernel_one_step_response(config: PathConfig, direction) -> PathEnsemble:
    """One-step kernel-differentiation response, dimension factor included.

    Valid for any perturbation but only as a single-step (n_steps=1)
    validation route; the M * delta_sigma / sigma term makes it noisy in
    high dimension and divergent over many steps.
    """
    if config.n_steps != 1:
        raise ConfigError("one-step kernel form requires n_steps == 1")
    return _kernel_form_run(config, direction, "one_step")
