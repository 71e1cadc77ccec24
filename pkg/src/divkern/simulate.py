"""Euler-Maruyama ensembles with reproducible per-path randomness.

Two drivers share one contract:

* simulate_ensemble: transparent reference driver.  Loops over paths and
  steps in Python, invoking per-step hooks with (PathState, bundle, dB, dt).
  Meant for small ensembles, trajectory storage, and validating the engine.
* run_forward: the production engine.  Splits paths into fixed blocks (a
  pure function of the step count and dimension, never of the worker count),
  advances each block with a vectorized backend, and reassembles results in
  path order.  Output is bitwise independent of the number of workers.

Both freeze a path at its last finite state when it blows up (non-finite or
|x|_inf above the threshold), exclude it from statistics, and fail the run
when more than max_exclusion of paths are lost.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelError, NumericsError
from .kernels import run_block_continuous
from .kernels.discrete import DiscreteOptions, discrete_run_block
from .models import ModelInstance
from .rng import generate_increments, initial_rng
from .score import init_nu, step_nu_continuous

__all__ = [
    "PathConfig",
    "PathState",
    "PathEnsemble",
    "ScoreHook",
    "ResponseHook",
    "em_step",
    "simulate_ensemble",
    "run_forward",
]

_BLOCK_BYTES = 2**26     # target bytes for one block's increment array
_BLOCK_PATH_CAP = 2**16  # hard cap on paths per block


@dataclass
class PathConfig:
    """Everything that determines an ensemble run (and hence its output)."""

    model: ModelInstance
    dt: float
    n_steps: int
    n_paths: int
    seed: int
    alpha: float = 0.0
    t0: float = 0.0
    blowup: float = 1e8
    max_exclusion: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if float(self.alpha) < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.max_exclusion <= 1:
            raise ConfigError("max_exclusion must lie in [0, 1]")
        self.seed = int(self.seed)
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a u64, got {self.seed}")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def alpha_value(self) -> float:
        return float(self.alpha)


@dataclass
class PathState:
    """State of one path: position, covector, response accumulator, clock.

    acc starts at the gamma-derivative of log h_0 at x_0 (zero whenever the
    initial density does not depend on gamma).
    """

    x: np.ndarray
    nu: np.ndarray
    acc: float
    t: float
    path_index: int


@dataclass
class PathEnsemble:
    """Final per-path quantities of a run, in path-index order."""

    x: np.ndarray            # (L, M) final states (frozen where excluded)
    nu: np.ndarray           # (L, M) final covectors
    acc: np.ndarray          # (L, D) response accumulators, one per direction
    alive: np.ndarray        # (L,) False where the path blew up
    x0: np.ndarray           # (L, M) initial states
    t: float
    config: PathConfig
    directions: np.ndarray   # (D, n_gamma)
    mode: str = "continuous"
    trajectory: np.ndarray | None = None  # (L, N+1, M) when stored

    @property
    def n_excluded(self) -> int:
        return int((~self.alive).sum())

    @property
    def exclusion_fraction(self) -> float:
        return self.n_excluded / self.alive.shape[0]


class ScoreHook:
    """Advances the covector; run after ResponseHook within a step."""

    def __init__(self, alpha: float):
        self.alpha = float(alpha)

    def __call__(self, state: PathState, bundle, dB, dt):
        state.nu = step_nu_continuous(state.nu, bundle, dB, dt, self.alpha)


class ResponseHook:
    """Adds one response increment using the pre-update covector."""

    def __call__(self, state: PathState, bundle, dB, dt):
        from .linresp import step_accumulator

        state.acc = step_accumulator(state.acc, state.nu, bundle, dB, dt)


def em_step(x, t, dB, dt, model: ModelInstance, gamma=None) -> np.ndarray:
    """One Euler-Maruyama step, coefficients at the left endpoint."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sig = model.sigma_fn(t, x, gamma)
    if not sig > 0:
        raise ModelError(f"sigma must be positive, got {sig}")
    x1 = x + model.drift_fn(t, x, gamma) * dt + sig * np.asarray(dB, dtype=float)
    if not np.isfinite(x1).all():
        raise NumericsError("state became non-finite (path blow-up)")
    return x1


def _check_exclusion(alive: np.ndarray, max_exclusion: float):
    frac = 1.0 - alive.mean()
    if frac > max_exclusion:
        raise NumericsError(
            f"{(~alive).sum()} of {alive.shape[0]} paths blew up "
            f"({frac:.2%} > {max_exclusion:.2%} allowed)"
        )


def simulate_ensemble(
    config: PathConfig,
    hooks=None,
    direction=None,
    store_trajectory: bool = False,
    backend=None,
    workers: int = 1,
) -> PathEnsemble:
    """Run the ensemble; the reference driver when hooks or storage are asked.

    With hooks=None and no trajectory request this delegates to run_forward,
    so large plain ensembles stay fast.  Hooks are callables
    hook(state, bundle, dB, dt) applied in order at each step, before the
    position update; they see the step-n bundle and may mutate state.nu and
    state.acc.  Order matters: ResponseHook must precede ScoreHook so the
    accumulator uses the pre-update covector.
    """
    model = config.model
    if hooks is None and not store_trajectory:
        dirs = () if direction is None else (direction,)
        return run_forward(config, directions=dirs, backend=backend, workers=workers)

    hooks = list(hooks or [])
    L, M, N = config.n_paths, model.dim, config.n_steps
    dirvec = model.normalize_direction(direction) if direction is not None else None
    x = np.empty((L, M))
    nu = np.empty((L, M))
    acc = np.zeros((L, 1 if direction is not None else 0))
    x0s = np.empty((L, M))
    alive = np.ones(L, dtype=bool)
    traj = np.empty((L, N + 1, M)) if store_trajectory else None

    for p in range(L):
        x0 = model.init.sampler(initial_rng(config.seed, p), M)
        inc = generate_increments(config.seed, p, N, M, config.dt)
        state = PathState(
            x=np.array(x0, dtype=float),
            nu=init_nu(x0, model.init),
            acc=float(model.init.delta_log_h0(x0, dirvec)),
            t=config.t0,
            path_index=p,
        )
        if traj is not None:
            traj[p, 0] = state.x
        for n in range(N):
            bundle = model.bundle_fn(state.t, state.x, direction=dirvec)
            if not bundle.sigma > 0:
                raise ModelError(f"sigma must be positive, got {bundle.sigma}")
            dB = inc[n]
            try:
                for hook in hooks:
                    hook(state, bundle, dB, config.dt)
                x1 = state.x + bundle.drift * config.dt + bundle.sigma * dB
                if not np.isfinite(x1).all() or np.abs(x1).max() > config.blowup:
                    raise NumericsError("blow-up")
            except NumericsError:
                alive[p] = False
                if traj is not None:
                    traj[p, n + 1 :] = state.x
                break
            state.x = x1
            state.t = config.t0 + (n + 1) * config.dt
            if traj is not None:
                traj[p, n + 1] = state.x
        x0s[p] = x0
        x[p] = state.x
        nu[p] = state.nu
        if acc.shape[1]:
            acc[p, 0] = state.acc

    _check_exclusion(alive, config.max_exclusion)
    return PathEnsemble(
        x=x,
        nu=nu,
        acc=acc,
        alive=alive,
        x0=x0s,
        t=config.t0 + N * config.dt,
        config=config,
        directions=dirvec[None, :] if dirvec is not None else np.zeros((0, model.n_gamma)),
        trajectory=traj,
    )


def _block_bounds(n_paths: int, n_steps: int, dim: int):
    """Fixed block partition: depends only on the run shape, never on workers."""
    per_path = 8 * max(1, n_steps * dim)
    size = max(1, min(_BLOCK_BYTES // per_path, _BLOCK_PATH_CAP, n_paths))
    return [(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def _run_block(model, config, dirs, mode, backend, options, start, stop):
    """Advance paths [start, stop); returns (x0, x, nu, acc, alive)."""
    B, M, N = stop - start, model.dim, config.n_steps
    X0 = np.empty((B, M))
    inc = np.empty((B, N, M))
    for i in range(B):
        p = start + i
        X0[i] = model.init.sampler(initial_rng(config.seed, p), M)
        inc[i] = generate_increments(config.seed, p, N, M, config.dt)
    X = X0.copy()
    NU = np.asarray(model.init.score0(X0), dtype=float).reshape(B, M).copy()
    ACC = np.stack(
        [np.asarray(model.init.delta_log_h0(X0, d), dtype=float) for d in dirs],
        axis=1,
    ) if len(dirs) else np.zeros((B, 0))

    alpha = config.alpha_value
    if mode == "continuous":
        kern = model.kernel()
        packs = [kern.pack_direction(d) for d in dirs]
        alive = run_block_continuous(
            kern, X, NU, ACC, inc, config.t0, config.dt, alpha, packs,
            backend=backend, blowup=config.blowup,
        )
    elif mode == "discrete":
        alive = discrete_run_block(
            model, model.params.gamma, X, NU, ACC, inc, config.t0, config.dt,
            alpha, dirs, options=options, blowup=config.blowup,
        )
    else:
        raise ConfigError(f"mode must be continuous|discrete, got {mode!r}")
    return X0, X, NU, ACC, alive


def _block_task(args):
    return _run_block(*args)


def run_forward(
    config: PathConfig,
    directions=(),
    mode: str = "continuous",
    backend=None,
    workers: int = 1,
    discrete_options: DiscreteOptions | None = None,
) -> PathEnsemble:
    """Production ensemble run: blocked, vectorized, optionally parallel.

    directions is a sequence of parameter-space perturbations (vectors or
    int indices); the returned ensemble carries one response accumulator per
    direction.  mode selects the Euler covector/accumulator updates
    ("continuous") or the exact one-step-map bookkeeping ("discrete").
    """
    model = config.model
    if mode not in ("continuous", "discrete"):
        raise ConfigError(f"mode must be continuous|discrete, got {mode!r}")
    dirs = [model.normalize_direction(d) for d in directions]
    L, M = config.n_paths, model.dim
    blocks = _block_bounds(L, config.n_steps, M)

    x0 = np.empty((L, M))
    x = np.empty((L, M))
    nu = np.empty((L, M))
    acc = np.empty((L, len(dirs)))
    alive = np.empty(L, dtype=bool)

    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(blocks) == 1:
        results = (
            _run_block(model, config, dirs, mode, backend, discrete_options, s, e)
            for s, e in blocks
        )
        for (s, e), out in zip(blocks, results):
            x0[s:e], x[s:e], nu[s:e], acc[s:e], alive[s:e] = out
    else:
        try:
            import pickle

            pickle.dumps(model)
        except Exception as exc:
            raise ConfigError(
                "workers > 1 requires a picklable (registry) model"
            ) from exc
        tasks = [
            (model, config, dirs, mode, backend, discrete_options, s, e)
            for s, e in blocks
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (s, e), out in zip(blocks, pool.map(_block_task, tasks)):
                x0[s:e], x[s:e], nu[s:e], acc[s:e], alive[s:e] = out

    _check_exclusion(alive, config.max_exclusion)
    return PathEnsemble(
        x=x,
        nu=nu,
        acc=acc,
        alive=alive,
        x0=x0,
        t=config.t0 + config.n_steps * config.dt,
        config=config,
        directions=np.array(dirs).reshape(len(dirs), model.n_gamma),
        mode=mode,
    )
