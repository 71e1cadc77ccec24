"""SDE model families and their analytic derivative bundles.

A model is the Ito system  dx = F(t, x) dt + sigma(t, x) dB  with vector
drift F, scalar noise field sigma > 0, and a parameter vector gamma that may
enter both fields.  The estimators in this package need more than (F, sigma):
each step consumes first and second derivatives in x plus the directional
derivatives in gamma.  Those are collected in a DerivativeBundle.

Built-in families (see ``list_models``):

``ou``           dx = (g0 - x) dt + (sigma0 + g1) dB, any dimension.
``mult1d``       dx = b_t (g - x) dt + sqrt(b_t) (0.5 + exp(-(g-x)^2)) dB,
                 b_t = 1 + 3t, scalar state.
``lorenz96``     cyclic coupling + weak quadratic damping, forcing 8 + g,
                 sigma(x) = 0.5 + exp(-|x - g*1|^2 / M).
``diffproto1d``  dx = (g0 - x) dt + (0.5 + exp(-(x - g1)^2)) dB.
``diffproto5d``  Lorenz-96 coupling with one forcing parameter per coordinate
                 and the sigma center as the last parameter (n_gamma = M + 1).

All families start from an isotropic Gaussian initial density.  Batched
evaluation convention: states are (B, M) arrays, scalar fields return (B,),
vector fields (B, M), matrices (B, M, M); the time argument is a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ModelError, UnknownModelError

__all__ = [
    "ModelParams",
    "DerivativeBundle",
    "InitialDensity",
    "ModelInstance",
    "get_model",
    "list_models",
    "from_functions",
    "eval_bundle",
    "validate_bundle",
    "finite_difference_bundle",
    "fd_derivative_check",
]

_L96_DAMP = 0.01  # quadratic damping coefficient of the lorenz96 families


# ---------------------------------------------------------------------------
# containers


@dataclass
class ModelParams:
    """Parameter vector gamma plus the state dimension M."""

    gamma: np.ndarray
    dim: int

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if self.gamma.ndim != 1:
            raise ModelError("gamma must be a vector")
        self.dim = int(self.dim)
        if self.dim < 1:
            raise ModelError(f"dim must be >= 1, got {self.dim}")

    @property
    def n_gamma(self) -> int:
        return self.gamma.size


@dataclass
class DerivativeBundle:
    """Everything one estimator step needs at a single (t, x).

    The delta_* fields are directional derivatives along one direction in
    parameter space; with the zero direction they are exactly zero.
    """

    drift: np.ndarray            # (M,)
    jac_drift: np.ndarray        # (M, M), [i, j] = dF_i / dx_j
    div_drift: float
    grad_div_drift: np.ndarray   # (M,)
    sigma: float
    grad_sigma: np.ndarray       # (M,)
    hess_sigma: np.ndarray       # (M, M)
    lap_sigma: float
    delta_drift: np.ndarray      # (M,)
    div_delta_drift: float
    delta_sigma: float
    grad_delta_sigma: np.ndarray  # (M,)


def validate_bundle(b: DerivativeBundle, tol: float = 1e-10) -> None:
    """Internal-consistency checks; raises ModelError on violation."""
    if not np.isfinite(b.sigma) or b.sigma <= 0:
        raise ModelError(f"sigma must be positive and finite, got {b.sigma}")
    scale = max(1.0, float(np.abs(b.hess_sigma).max()))
    if abs(float(np.trace(b.hess_sigma)) - b.lap_sigma) > tol * scale:
        raise ModelError("lap_sigma does not match trace(hess_sigma)")
    if np.abs(b.hess_sigma - b.hess_sigma.T).max() > tol * scale:
        raise ModelError("hess_sigma is not symmetric")
    jscale = max(1.0, float(np.abs(b.jac_drift).max()))
    if abs(float(np.trace(b.jac_drift)) - b.div_drift) > tol * jscale:
        raise ModelError("div_drift does not match trace(jac_drift)")


@dataclass
class GaussianInit:
    """Isotropic Gaussian N(mean * 1, var * I); gamma-independent."""

    mean: float = 0.0
    var: float = 1.0

    def sampler(self, rng: np.random.Generator, dim: int) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal(dim)

    def score0(self, x: np.ndarray) -> np.ndarray:
        return -(np.asarray(x, dtype=float) - self.mean) / self.var

    def delta_log_h0(self, x: np.ndarray, direction=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (
            -((x - self.mean) ** 2) / (2.0 * self.var)
            - 0.5 * np.log(2.0 * np.pi * self.var)
        ).sum(axis=-1)


@dataclass
class InitialDensity:
    """Initial density h_0: a sampler plus its score and gamma-derivative.

    log_pdf and gaussian_params are optional extras used by quadrature
    oracles; estimators themselves never need the density values.
    """

    sampler: "callable"         # (rng, dim) -> (dim,)
    score0: "callable"          # x -> grad log h_0(x), batched over leading axes
    delta_log_h0: "callable"    # (x, direction) -> d/dgamma log h_0(x)
    log_pdf: "callable | None" = None     # (..., M) -> (...)
    gaussian_params: "tuple | None" = None  # (mean, var) when Gaussian

    @staticmethod
    def gaussian(mean: float = 0.0, var: float = 1.0) -> "InitialDensity":
        g = GaussianInit(float(mean), float(var))
        if g.var <= 0:
            raise ModelError("initial variance must be positive")
        return InitialDensity(
            g.sampler,
            g.score0,
            g.delta_log_h0,
            log_pdf=g.log_pdf,
            gaussian_params=(g.mean, g.var),
        )


# ---------------------------------------------------------------------------
# kernel families: batched closed-form fields shared by all backends


class OUKernel:
    """F_i = target - x_i, sigma constant."""

    def __init__(self, dim, target, sigma_const):
        self.M = int(dim)
        self.target = float(target)
        self.sigma_const = float(sigma_const)
        self.stationary = True

    def drift(self, t, X):
        return self.target - X

    def jac(self, t, X):
        B, M = X.shape
        return np.broadcast_to(-np.eye(M), (B, M, M)).copy()

    def jac_t_mult(self, t, X, V):
        return -V

    def div_drift(self, t, X):
        return np.full(X.shape[0], -float(self.M))

    def grad_div_drift(self, t, X):
        return np.zeros_like(X)

    def sigma(self, t, X):
        return np.full(X.shape[0], self.sigma_const)

    def grad_sigma(self, t, X):
        return np.zeros_like(X)

    def hess_sigma(self, t, X):
        B, M = X.shape
        return np.zeros((B, M, M))

    def hess_mult(self, t, X, V):
        return np.zeros_like(X)

    def lap_sigma(self, t, X):
        return np.zeros(X.shape[0])

    def pack_direction(self, direction):
        d = np.asarray(direction, dtype=float)
        return (float(d[0]), float(d[1]))

    def delta(self, t, X, pack):
        da, ds = pack
        B = X.shape[0]
        return (
            np.full_like(X, da),
            np.zeros(B),
            np.full(B, ds),
            np.zeros_like(X),
        )

    def additive_direction(self, pack) -> bool:
        return pack[1] == 0.0

    def cy_args(self):
        return 0, np.array([self.target, self.sigma_const]), np.zeros(0)

    def cy_dir_row(self, pack):
        return np.array(pack, dtype=float)


class Scalar1DKernel:
    """Scalar state: F = b_t (a0 - x), sigma = sqrt(b_t) (0.5 + exp(-(x-c0)^2)),
    with b_t = 1 + beta_slope * t."""

    def __init__(self, a0, c0, beta_slope=0.0):
        self.M = 1
        self.a0 = float(a0)
        self.c0 = float(c0)
        self.beta_slope = float(beta_slope)
        self.stationary = self.beta_slope == 0.0

    def _beta(self, t):
        return 1.0 + self.beta_slope * t

    def _ue(self, X):
        u = X[:, 0] - self.c0
        return u, np.exp(-u * u)

    def drift(self, t, X):
        return self._beta(t) * (self.a0 - X)

    def jac(self, t, X):
        return np.full((X.shape[0], 1, 1), -self._beta(t))

    def jac_t_mult(self, t, X, V):
        return -self._beta(t) * V

    def div_drift(self, t, X):
        return np.full(X.shape[0], -self._beta(t))

    def grad_div_drift(self, t, X):
        return np.zeros_like(X)

    def sigma(self, t, X):
        _, E = self._ue(X)
        return np.sqrt(self._beta(t)) * (0.5 + E)

    def grad_sigma(self, t, X):
        u, E = self._ue(X)
        return (-2.0 * np.sqrt(self._beta(t)) * u * E)[:, None]

    def _d2sigma(self, t, X):
        u, E = self._ue(X)
        return np.sqrt(self._beta(t)) * E * (4.0 * u * u - 2.0)

    def hess_sigma(self, t, X):
        return self._d2sigma(t, X)[:, None, None]

    def hess_mult(self, t, X, V):
        return self._d2sigma(t, X)[:, None] * V

    def lap_sigma(self, t, X):
        return self._d2sigma(t, X)

    def pack_direction(self, direction):
        d = np.asarray(direction, dtype=float)
        return (float(d[0]), float(d[1])) if d.size == 2 else (float(d[0]), float(d[0]))

    def delta(self, t, X, pack):
        da, dc = pack
        beta = self._beta(t)
        rb = np.sqrt(beta)
        u, E = self._ue(X)
        return (
            np.full_like(X, beta * da),
            np.zeros(X.shape[0]),
            2.0 * rb * u * E * dc,
            (2.0 * rb * E * (1.0 - 2.0 * u * u) * dc)[:, None],
        )

    def additive_direction(self, pack) -> bool:
        return pack[1] == 0.0

    def cy_args(self):
        return 1, np.array([self.a0, self.c0, self.beta_slope]), np.zeros(0)

    def cy_dir_row(self, pack):
        return np.array(pack, dtype=float)


class L96Kernel:
    """Cyclic Lorenz-96 coupling with weak quadratic damping:

        F_i = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + forcing_i - q x_i^2
        sigma(x) = 0.5 + exp(-|x - center * 1|^2 / M)
    """

    def __init__(self, dim, forcing, center, damp=_L96_DAMP):
        self.M = int(dim)
        if self.M < 4:
            raise ModelError("lorenz96 coupling needs dim >= 4")
        self.forcing = np.broadcast_to(np.asarray(forcing, dtype=float), (self.M,)).copy()
        self.center = float(center)
        self.damp = float(damp)
        self.stationary = True

    def _ue(self, X):
        u = X - self.center
        r2 = np.einsum("bi,bi->b", u, u)
        return u, r2, np.exp(-r2 / self.M)

    def drift(self, t, X):
        r = np.roll
        return (r(X, -1, -1) - r(X, 2, -1)) * r(X, 1, -1) - X + self.forcing - self.damp * X * X

    def jac(self, t, X):
        B, M = X.shape
        J = np.zeros((B, M, M))
        i = np.arange(M)
        J[:, i, (i + 1) % M] = X[:, (i - 1) % M]
        J[:, i, (i - 2) % M] += -X[:, (i - 1) % M]
        J[:, i, (i - 1) % M] += X[:, (i + 1) % M] - X[:, (i - 2) % M]
        J[:, i, i] += -1.0 - 2.0 * self.damp * X
        return J

    def jac_t_mult(self, t, X, V):
        r = np.roll
        return (
            r(V, 1, -1) * r(X, 2, -1)
            - r(V, -2, -1) * r(X, -1, -1)
            + r(V, -1, -1) * (r(X, -2, -1) - r(X, 1, -1))
            - (1.0 + 2.0 * self.damp * X) * V
        )

    def div_drift(self, t, X):
        return -self.M - 2.0 * self.damp * X.sum(axis=-1)

    def grad_div_drift(self, t, X):
        return np.full_like(X, -2.0 * self.damp)

    def sigma(self, t, X):
        _, _, E = self._ue(X)
        return 0.5 + E

    def grad_sigma(self, t, X):
        u, _, E = self._ue(X)
        return (-2.0 / self.M) * E[:, None] * u

    def hess_sigma(self, t, X):
        u, _, E = self._ue(X)
        M = self.M
        outer = u[:, :, None] * u[:, None, :]
        return E[:, None, None] * ((4.0 / M**2) * outer - (2.0 / M) * np.eye(M))

    def hess_mult(self, t, X, V):
        u, _, E = self._ue(X)
        M = self.M
        uv = np.einsum("bi,bi->b", u, V)
        return E[:, None] * ((4.0 / M**2) * uv[:, None] * u - (2.0 / M) * V)

    def lap_sigma(self, t, X):
        _, r2, E = self._ue(X)
        return E * ((4.0 / self.M**2) * r2 - 2.0)

    def pack_direction(self, direction):
        d = np.asarray(direction, dtype=float)
        if d.size == self.M + 1:
            return (d[: self.M].copy(), float(d[self.M]))
        # single shared parameter: forcing and center move together
        return (np.full(self.M, float(d[0])), float(d[0]))

    def delta(self, t, X, pack):
        dforcing, dcenter = pack
        B = X.shape[0]
        dF = np.broadcast_to(dforcing, X.shape).copy()
        if dcenter == 0.0:
            return dF, np.zeros(B), np.zeros(B), np.zeros_like(X)
        u, _, E = self._ue(X)
        M = self.M
        s = u.sum(axis=-1)
        dsig = (2.0 / M) * E * s * dcenter
        gdsig = (2.0 / M) * E[:, None] * (1.0 - (2.0 / M) * s[:, None] * u) * dcenter
        return dF, np.zeros(B), dsig, gdsig

    def additive_direction(self, pack) -> bool:
        return pack[1] == 0.0

    def cy_args(self):
        return 2, np.array([self.center, self.damp]), self.forcing

    def cy_dir_row(self, pack):
        return np.concatenate([pack[0], [pack[1]]])


class FDKernel:
    """Finite-difference kernel for models given only as (drift_fn, sigma_fn).

    Slow (per-row python loop); meant for validation and small studies, so
    correctness beats speed here.
    """

    def __init__(self, dim, drift_fn, sigma_fn, gamma, stationary=False):
        self.M = int(dim)
        self.drift_fn = drift_fn
        self.sigma_fn = sigma_fn
        self.gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        self.stationary = stationary
        self._cache = None

    def _rows(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float))

    def _bundle(self, t, x, direction):
        return finite_difference_bundle(
            self.drift_fn, self.sigma_fn, t, x, self.gamma, direction
        )

    def _bundles(self, t, X, direction):
        # One FD bundle per row per step.  An engine asks for many fields at
        # the same (t, X), so a single-slot memo avoids recomputing the whole
        # bundle for each field.  The state-derivative fields do not depend on
        # the direction, so a direction=None request accepts any cached entry.
        X = self._rows(X)
        key = (float(t), X.tobytes())
        dkey = None if direction is None else np.asarray(direction, dtype=float).tobytes()
        c = self._cache
        if c is not None and c[0] == key and (dkey is None or c[1] == dkey):
            return c[2]
        d = np.zeros(self.gamma.size) if direction is None else direction
        rows = [self._bundle(t, x, d) for x in X]
        self._cache = (key, np.asarray(d, dtype=float).tobytes(), rows)
        return rows

    def _stack(self, t, X, attr, direction=None):
        rows = [getattr(b, attr) for b in self._bundles(t, X, direction)]
        return np.array(rows)

    def drift(self, t, X):
        return np.array([self.drift_fn(t, x, self.gamma) for x in self._rows(X)], dtype=float)

    def jac(self, t, X):
        return self._stack(t, X, "jac_drift")

    def jac_t_mult(self, t, X, V):
        return np.einsum("bij,bi->bj", self.jac(t, X), V)

    def div_drift(self, t, X):
        return self._stack(t, X, "div_drift")

    def grad_div_drift(self, t, X):
        return self._stack(t, X, "grad_div_drift")

    def sigma(self, t, X):
        return np.array(
            [_scalar_sigma(self.sigma_fn(t, x, self.gamma)) for x in self._rows(X)]
        )

    def grad_sigma(self, t, X):
        return self._stack(t, X, "grad_sigma")

    def hess_sigma(self, t, X):
        return self._stack(t, X, "hess_sigma")

    def hess_mult(self, t, X, V):
        return np.einsum("bij,bj->bi", self.hess_sigma(t, X), V)

    def lap_sigma(self, t, X):
        return self._stack(t, X, "lap_sigma")

    def pack_direction(self, direction):
        d = np.zeros(self.gamma.size)
        d[: np.atleast_1d(direction).size] = direction
        return d

    def delta(self, t, X, pack):
        rows = self._bundles(t, X, pack)
        return (
            np.array([b.delta_drift for b in rows]),
            np.array([b.div_delta_drift for b in rows]),
            np.array([b.delta_sigma for b in rows]),
            np.array([b.grad_delta_sigma for b in rows]),
        )

    def additive_direction(self, pack) -> bool:
        return False

    def cy_args(self):
        return None


# ---------------------------------------------------------------------------
# finite differences: the independent check on every analytic bundle


def _scalar_sigma(v):
    # tolerate 0-d and 1-element returns from user callables, reject the rest
    a = np.asarray(v, dtype=float)
    if a.size != 1:
        raise ModelError(
            f"sigma_fn must return one scalar per state point, got shape {a.shape}"
        )
    return float(a.reshape(()))


def _fd_jac(fn, x, h):
    M = x.size
    cols = []
    for j in range(M):
        e = np.zeros(M)
        e[j] = h
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def _fd_grad(fn, x, h):
    M = x.size
    g = np.empty(M)
    for j in range(M):
        e = np.zeros(M)
        e[j] = h
        g[j] = (float(fn(x + e)) - float(fn(x - e))) / (2 * h)
    return g


def _fd_hess(fn, x, h):
    M = x.size
    H = np.empty((M, M))
    f0 = float(fn(x))
    for i in range(M):
        ei = np.zeros(M)
        ei[i] = h
        H[i, i] = (float(fn(x + ei)) - 2 * f0 + float(fn(x - ei))) / h**2
        for j in range(i + 1, M):
            ej = np.zeros(M)
            ej[j] = h
            H[i, j] = H[j, i] = (
                float(fn(x + ei + ej))
                - float(fn(x + ei - ej))
                - float(fn(x - ei + ej))
                + float(fn(x - ei - ej))
            ) / (4 * h**2)
    return H


def finite_difference_bundle(
    drift_fn,
    sigma_fn,
    t,
    x,
    gamma,
    direction=None,
    h_x=None,
    h_gamma=1e-6,
) -> DerivativeBundle:
    """Central-difference DerivativeBundle from plain (t, x, gamma) callables.

    Default steps: h_x = 1e-5 * (1 + |x|_inf), h_gamma = 1e-6.  Mixed second
    derivatives (div_delta_drift, grad_delta_sigma) compose both steps, so
    their round-off floor is larger; callers that check analytic bundles
    should pass a looser h_gamma (see fd_derivative_check).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    M = x.size
    if h_x is None:
        h_x = 1e-5 * (1.0 + float(np.abs(x).max()))
    if direction is None:
        direction = np.zeros(gamma.size)
    d = np.atleast_1d(np.asarray(direction, dtype=float))
    gp, gm = gamma + h_gamma * d, gamma - h_gamma * d

    F = lambda y: np.asarray(drift_fn(t, y, gamma), dtype=float)
    S = lambda y: _scalar_sigma(sigma_fn(t, y, gamma))

    jac = _fd_jac(F, x, h_x)
    div_at = lambda y: float(np.trace(_fd_jac(F, y, h_x)))
    grad_div = _fd_grad(div_at, x, h_x)
    hess = _fd_hess(S, x, h_x)
    hess = 0.5 * (hess + hess.T)

    dF = (np.asarray(drift_fn(t, x, gp)) - np.asarray(drift_fn(t, x, gm))) / (2 * h_gamma)
    dS_at = lambda y: (
        _scalar_sigma(sigma_fn(t, y, gp)) - _scalar_sigma(sigma_fn(t, y, gm))
    ) / (2 * h_gamma)
    div_dF = 0.0
    for j in range(M):
        e = np.zeros(M)
        e[j] = h_x
        step = (
            np.asarray(drift_fn(t, x + e, gp))[j]
            - np.asarray(drift_fn(t, x - e, gp))[j]
            - np.asarray(drift_fn(t, x + e, gm))[j]
            + np.asarray(drift_fn(t, x - e, gm))[j]
        )
        div_dF += step / (4 * h_x * h_gamma)

    return DerivativeBundle(
        drift=F(x),
        jac_drift=jac,
        div_drift=float(np.trace(jac)),
        grad_div_drift=grad_div,
        sigma=S(x),
        grad_sigma=_fd_grad(S, x, h_x),
        hess_sigma=hess,
        lap_sigma=float(np.trace(hess)),
        delta_drift=dF,
        div_delta_drift=float(div_dF),
        delta_sigma=dS_at(x),
        grad_delta_sigma=_fd_grad(dS_at, x, h_x),
    )


# ---------------------------------------------------------------------------
# model instances


@dataclass
class ModelInstance:
    """A concrete model: family, parameters, initial density, field callables.

    drift_fn / sigma_fn / bundle_fn are pure functions of (t, x, gamma); the
    stored params.gamma only provides the default.
    """

    name: str
    params: ModelParams
    init: InitialDensity
    stationary: bool
    _kernel_builder: "callable" = field(repr=False)
    _opts: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def n_gamma(self) -> int:
        return self.params.n_gamma

    def _gamma(self, gamma):
        if gamma is None:
            return self.params.gamma
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        if g.size != self.n_gamma:
            raise ModelError(
                f"{self.name}: gamma has length {g.size}, expected {self.n_gamma}"
            )
        return g

    def kernel(self, gamma=None):
        return self._kernel_builder(self._gamma(gamma))

    def with_gamma(self, gamma) -> "ModelInstance":
        return replace(self, params=ModelParams(self._gamma(gamma), self.dim))

    def normalize_direction(self, direction) -> np.ndarray:
        if direction is None:
            return np.zeros(self.n_gamma)
        if isinstance(direction, (int, np.integer)) and not isinstance(direction, bool):
            d = np.zeros(self.n_gamma)
            d[int(direction)] = 1.0
            return d
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        if d.size != self.n_gamma:
            raise ModelError(
                f"direction has length {d.size}, expected {self.n_gamma}"
            )
        return d

    def drift_fn(self, t, x, gamma=None):
        k = self.kernel(gamma)
        return k.drift(float(t), np.atleast_2d(np.asarray(x, dtype=float)))[0]

    def sigma_fn(self, t, x, gamma=None):
        k = self.kernel(gamma)
        return float(k.sigma(float(t), np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def bundle_fn(self, t, x, gamma=None, direction=None) -> DerivativeBundle:
        t = float(t)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.dim:
            raise ModelError(f"state has dim {x.size}, expected {self.dim}")
        k = self.kernel(gamma)
        X = x[None, :]
        pack = k.pack_direction(self.normalize_direction(direction))
        dF, divdF, dsig, gdsig = k.delta(t, X, pack)
        return DerivativeBundle(
            drift=k.drift(t, X)[0],
            jac_drift=k.jac(t, X)[0],
            div_drift=float(k.div_drift(t, X)[0]),
            grad_div_drift=k.grad_div_drift(t, X)[0],
            sigma=float(k.sigma(t, X)[0]),
            grad_sigma=k.grad_sigma(t, X)[0],
            hess_sigma=k.hess_sigma(t, X)[0],
            lap_sigma=float(k.lap_sigma(t, X)[0]),
            delta_drift=dF[0],
            div_delta_drift=float(divdF[0]),
            delta_sigma=float(dsig[0]),
            grad_delta_sigma=gdsig[0],
        )

    def __reduce__(self):
        if self.name in _REGISTRY:
            return (_rebuild_model, (self.name, self.params.gamma, self.dim, self._opts))
        raise TypeError(f"model {self.name!r} is not picklable (function-defined)")


def _rebuild_model(name, gamma, dim, opts):
    return get_model(name, gamma=gamma, dim=dim, **opts)


def eval_bundle(model: ModelInstance, t, x, direction=None, gamma=None) -> DerivativeBundle:
    """Evaluate and validate the derivative bundle at one (t, x)."""
    b = model.bundle_fn(t, x, gamma=gamma, direction=direction)
    validate_bundle(b)
    return b


# ---------------------------------------------------------------------------
# registry


def _build_ou(gamma, dim, opts):
    m0 = float(opts.get("m0", 0.0))
    v0 = float(opts.get("v0", 1.0))
    sigma0 = float(opts.get("sigma0", 1.0))
    builder = lambda g: OUKernel(dim, target=g[0], sigma_const=sigma0 + g[1])
    return builder, InitialDensity.gaussian(m0, v0), True


def _build_mult1d(gamma, dim, opts):
    builder = lambda g: Scalar1DKernel(a0=g[0], c0=g[0], beta_slope=3.0)
    return builder, InitialDensity.gaussian(0.0, 1.0), False


def _build_diffproto1d(gamma, dim, opts):
    builder = lambda g: Scalar1DKernel(a0=g[0], c0=g[1], beta_slope=0.0)
    return builder, InitialDensity.gaussian(0.0, 1.0), True


def _build_lorenz96(gamma, dim, opts):
    builder = lambda g: L96Kernel(dim, forcing=8.0 + g[0], center=g[0])
    return builder, InitialDensity.gaussian(0.0, 1.0), True


def _build_diffproto5d(gamma, dim, opts):
    builder = lambda g: L96Kernel(dim, forcing=g[:dim], center=g[dim])
    return builder, InitialDensity.gaussian(0.0, 1.0), True


# name -> (builder factory, default dim, n_gamma(dim), dim constraint)
_REGISTRY = {
    "ou": (_build_ou, 1, lambda M: 2, lambda M: M >= 1),
    "mult1d": (_build_mult1d, 1, lambda M: 1, lambda M: M == 1),
    "lorenz96": (_build_lorenz96, 40, lambda M: 1, lambda M: M >= 4),
    "diffproto1d": (_build_diffproto1d, 1, lambda M: 2, lambda M: M == 1),
    "diffproto5d": (_build_diffproto5d, 5, lambda M: M + 1, lambda M: M >= 4),
}


def list_models():
    return sorted(_REGISTRY)


def get_model(name, gamma=None, dim=None, **opts) -> ModelInstance:
    """Build a registered model family at the given parameters.

    gamma defaults to zeros of the family's parameter count; dim defaults per
    family (1 for the scalar families, 40 for lorenz96, 5 for diffproto5d).
    Extra keyword options are family-specific (ou: m0, v0, sigma0).
    """
    if name not in _REGISTRY:
        raise UnknownModelError(
            f"unknown model {name!r}; available: {', '.join(list_models())}"
        )
    factory, default_dim, n_gamma_of, dim_ok = _REGISTRY[name]
    M = int(dim) if dim is not None else default_dim
    if not dim_ok(M):
        raise ModelError(f"{name}: unsupported dim {M}")
    n_gamma = n_gamma_of(M)
    if gamma is None:
        gamma = np.zeros(n_gamma)
    params = ModelParams(gamma, M)
    if params.n_gamma != n_gamma:
        raise ModelError(
            f"{name}: gamma has length {params.n_gamma}, expected {n_gamma}"
        )
    builder, init, stationary = factory(params.gamma, M, opts)
    return ModelInstance(
        name=name,
        params=params,
        init=init,
        stationary=stationary,
        _kernel_builder=builder,
        _opts=dict(opts),
    )


def from_functions(
    drift_fn,
    sigma_fn,
    dim,
    n_gamma=1,
    gamma=None,
    init: InitialDensity | None = None,
    stationary=False,
    name="custom",
) -> ModelInstance:
    """Wrap plain (t, x, gamma) callables into a model instance.

    Derivative bundles come from central finite differences, so this path is
    slow and not picklable; use it for validation models and tests.
    """
    if gamma is None:
        gamma = np.zeros(n_gamma)
    params = ModelParams(gamma, dim)
    if init is None:
        init = InitialDensity.gaussian(0.0, 1.0)
    builder = lambda g: FDKernel(dim, drift_fn, sigma_fn, g, stationary=stationary)
    return ModelInstance(
        name=name,
        params=params,
        init=init,
        stationary=stationary,
        _kernel_builder=builder,
        _opts={},
    )


# ---------------------------------------------------------------------------
# analytic-vs-FD audit


_BUNDLE_FIELDS = [
    "drift",
    "jac_drift",
    "div_drift",
    "grad_div_drift",
    "sigma",
    "grad_sigma",
    "hess_sigma",
    "lap_sigma",
    "delta_drift",
    "div_delta_drift",
    "delta_sigma",
    "grad_delta_sigma",
]


def fd_derivative_check(
    model: ModelInstance,
    n_samples=100,
    seed=0,
    tol=1e-3,
    x_scale=0.8,
    t_max=1.0,
    h_gamma=1e-4,
) -> dict:
    """Compare analytic bundles against the finite-difference oracle.

    Returns {"max_rel": {field: err}, "passed": bool, "tol": tol}.  Errors are
    measured relative to max(1, |analytic value|), so exactly-zero analytic
    fields are judged on the FD round-off floor.  h_gamma is looser than the
    bundle-fallback default because the mixed second differences divide two
    small steps into each other.
    """
    rng = np.random.default_rng(seed)
    errs = {f: 0.0 for f in _BUNDLE_FIELDS}
    for _ in range(int(n_samples)):
        t = float(rng.uniform(0.0, t_max))
        x = x_scale * rng.standard_normal(model.dim)
        d = rng.standard_normal(model.n_gamma)
        d /= max(1.0, float(np.abs(d).max()))
        an = model.bundle_fn(t, x, direction=d)
        fd = finite_difference_bundle(
            model.drift_fn, model.sigma_fn, t, x, model.params.gamma, d, h_gamma=h_gamma
        )
        for f in _BUNDLE_FIELDS:
            a = np.asarray(getattr(an, f), dtype=float)
            b = np.asarray(getattr(fd, f), dtype=float)
            scale = max(1.0, float(np.abs(a).max()))
            errs[f] = max(errs[f], float(np.abs(a - b).max()) / scale)
    return {"max_rel": errs, "passed": max(errs.values()) < tol, "tol": tol}
