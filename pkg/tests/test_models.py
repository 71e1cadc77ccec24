import numpy as np
import pytest

from divkern import (
    InitialDensity,
    ModelError,
    UnknownModelError,
    eval_bundle,
    fd_derivative_check,
    from_functions,
    get_model,
    list_models,
)


def test_registry_lists_all_families():
    names = list_models()
    for name in ("ou", "mult1d", "lorenz96", "diffproto1d", "diffproto5d"):
        assert name in names


def test_unknown_model_raises():
    with pytest.raises(UnknownModelError):
        get_model("nosuch")


def test_ou_drift_at_origin_is_zero():
    m = get_model("ou", gamma=[0.0, 0.0], dim=3)
    b = eval_bundle(m, 0.0, np.zeros(3), direction=0)
    assert np.allclose(b.drift, 0.0)


def test_ou_bundle_constant_noise_linear_drift():
    m = get_model("ou", gamma=[0.7, 0.1], dim=4)
    b = eval_bundle(m, 0.3, np.array([0.1, -0.2, 0.5, 1.0]), direction=0)
    assert np.allclose(b.jac_drift, -np.eye(4))
    assert b.div_drift == -4.0
    assert np.allclose(b.grad_div_drift, 0.0)
    assert np.allclose(b.grad_sigma, 0.0)
    assert np.allclose(b.hess_sigma, 0.0)
    assert b.lap_sigma == 0.0
    assert b.sigma == pytest.approx(1.1)


def test_mult1d_sigma_at_origin():
    # sqrt(1 + 3t) * (0.5 + exp(-(x-c)^2)) is 1.5 at t=0, x=c=0
    m = get_model("mult1d", gamma=[0.0])
    b = eval_bundle(m, 0.0, np.zeros(1), direction=0)
    assert b.sigma == pytest.approx(1.5)
    assert b.drift == pytest.approx(0.0)


def test_lorenz96_needs_dim_4():
    with pytest.raises(ModelError):
        get_model("lorenz96", gamma=[0.0], dim=3)


@pytest.mark.parametrize(
    "name,dim,gamma",
    [
        ("ou", 3, [0.5, 0.2]),
        ("mult1d", 1, [0.3]),
        ("lorenz96", 5, [0.4]),
        ("diffproto1d", 1, [0.5, 0.25]),
        ("diffproto5d", 5, [1.0, 2.0, 3.0, 4.0, 5.0, 0.5]),
    ],
)
def test_analytic_bundle_matches_finite_differences(name, dim, gamma):
    """Every closed-form derivative field agrees with a central-difference
    oracle over 100 random (t, x, direction) draws, to relative 1e-4."""
    m = get_model(name, gamma=gamma, dim=dim)
    report = fd_derivative_check(m, n_samples=100, seed=0, tol=1e-4)
    assert report["passed"], report["max_rel"]


def test_bundle_evaluation_rejects_nonpositive_sigma():
    m = get_model("ou", gamma=[0.0, -2.0], dim=1)  # sigma = 1 - 2 < 0
    with pytest.raises(ModelError):
        eval_bundle(m, 0.0, np.zeros(1), direction=0)


def test_with_gamma_returns_fresh_instance():
    m = get_model("ou", gamma=[0.0, 0.0], dim=2)
    m2 = m.with_gamma(np.array([1.0, 0.0]))
    assert np.allclose(m.params.gamma, [0.0, 0.0])
    b = eval_bundle(m2, 0.0, np.zeros(2), direction=0)
    assert np.allclose(b.drift, 1.0)


def test_normalize_direction_index_and_vector():
    m = get_model("ou", gamma=[0.0, 0.0], dim=2)
    assert np.allclose(m.normalize_direction(1), [0.0, 1.0])
    assert np.allclose(m.normalize_direction([0.5, -0.5]), [0.5, -0.5])
    with pytest.raises(ModelError):
        m.normalize_direction([1.0, 2.0, 3.0])


def test_lorenz96_shared_parameter_moves_forcing_and_center():
    m = get_model("lorenz96", gamma=[0.2], dim=5)
    b = eval_bundle(m, 0.0, np.full(5, 0.3), direction=0)
    assert np.allclose(b.delta_drift, 1.0)
    assert b.delta_sigma != 0.0


def test_from_functions_matches_registry_ou():
    """A function-defined model (FD bundles) reproduces the closed-form ou
    fields at a handful of states."""
    target, sig = 0.4, 1.3

    def drift_fn(t, x, gamma):
        return gamma[0] + target - x

    def sigma_fn(t, x, gamma):
        return sig

    custom = from_functions(
        drift_fn, sigma_fn, dim=2, gamma=[0.0], init=InitialDensity.gaussian(0.0, 1.0)
    )
    ref = get_model("ou", gamma=[target, sig - 1.0], dim=2)
    rng = np.random.default_rng(1)
    for _ in range(5):
        x = rng.normal(size=2)
        bc = eval_bundle(custom, 0.0, x, direction=0)
        br = eval_bundle(ref, 0.0, x, direction=0)
        assert np.allclose(bc.drift, br.drift, atol=1e-9)
        assert bc.sigma == pytest.approx(br.sigma)
        assert np.allclose(bc.jac_drift, br.jac_drift, atol=1e-5)
        assert np.allclose(bc.delta_drift, br.delta_drift, atol=1e-6)


def test_gaussian_init_score_and_sampler():
    init = InitialDensity.gaussian(0.0, 1.0)
    assert np.allclose(init.score0(np.array([1.0, -2.0])), [-1.0, 2.0])
    assert init.score0(np.array([0.5]))[0] == pytest.approx(-0.5)
    init_m = InitialDensity.gaussian(0.7, 2.0)
    assert init_m.score0(np.array([0.7]))[0] == pytest.approx(0.0)
    rng = np.random.default_rng(0)
    draws = np.stack([init_m.sampler(rng, 1) for _ in range(4000)])
    assert abs(draws.mean() - 0.7) < 4 * np.sqrt(2.0 / 4000)


def test_gaussian_init_log_pdf_normalized():
    init = InitialDensity.gaussian(0.3, 0.8)
    xs = np.linspace(-8, 8, 4001)[:, None]
    dens = np.exp(init.log_pdf(xs))
    assert np.trapezoid(dens, xs[:, 0]) == pytest.approx(1.0, abs=1e-6)
