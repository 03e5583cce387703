"""KDE density/score: closed-kernel oracles, finite differences, scaling."""

import numpy as np
import pytest

from retrodiff import (
    AnalyticField,
    KdeField,
    VacuumError,
    gaussian,
    kde_density,
    kde_score,
    silverman_bandwidth,
    substream,
)
from retrodiff.density import reversal_drift, score_bandwidth
from retrodiff.models import affine_model, heat_model
from retrodiff.ou_analytic import ou_reversal_drift


def test_single_particle_peak():
    f = KdeField([[0.0]], 1.0)
    assert abs(kde_density(f, np.zeros(1)) - (2 * np.pi) ** -0.5) < 1e-12


def test_far_query_small_but_finite():
    f = KdeField([[0.0]], 1.0)
    v = kde_density(f, np.array([20.0]))
    assert 0.0 <= v < 1e-80


def test_density_matches_analytic_large_cloud():
    rng = substream(0, 50)
    X = rng.standard_normal((10**5, 1))
    f = KdeField(X, silverman_bandwidth(X))
    peak = kde_density(f, np.zeros(1))
    assert abs(peak - (2 * np.pi) ** -0.5) < 0.05 * (2 * np.pi) ** -0.5


def test_single_particle_score():
    a = 1.5
    h = 0.7
    f = KdeField([[a]], h)
    for x in (0.0, 1.0, 3.0):
        s = kde_score(f, np.array([x]))
        assert abs(s[0] + (x - a) / h**2) < 1e-9


def test_analytic_field_score_exact():
    f = AnalyticField(gaussian([0.0, 0.0], np.eye(2)))
    x = np.array([0.3, -1.2])
    assert np.allclose(kde_score(f, x), -x, atol=1e-14)


def test_score_matches_density_finite_difference():
    rng = substream(1, 51)
    X = rng.standard_normal((2000, 1))
    f = KdeField(X, silverman_bandwidth(X))
    h = 1e-5
    for x in np.linspace(-1.5, 1.5, 9):
        num = (np.log(kde_density(f, np.array([x + h])))
               - np.log(kde_density(f, np.array([x - h])))) / (2 * h)
        s = kde_score(f, np.array([x]))[0]
        assert abs(s - num) <= 1e-6 * max(1.0, abs(num))


def test_score_cloud_close_to_gaussian_score():
    rng = substream(2, 52)
    X = rng.standard_normal((10**5, 1))
    f = KdeField(X, score_bandwidth(X))
    xs = np.linspace(-1.0, 1.0, 21)[:, None]
    _, s = f.log_density_and_score(xs)
    assert np.abs(s[:, 0] + xs[:, 0]).max() < 0.1


def test_vacuum_error():
    f = KdeField([[0.0]], 0.01)
    with pytest.raises(VacuumError):
        kde_score(f, np.array([50.0]))


def test_no_overflow_far_field():
    f = KdeField([[0.0]], 1.0)
    assert kde_density(f, np.array([1e6])) == 0.0
    logp = f.log_density(np.array([1e6]))
    assert logp == -np.inf


def test_silverman_formula_oracle():
    rng = substream(3, 53)
    X = rng.standard_normal((10**4, 1))
    h = silverman_bandwidth(X)
    oracle = X.std(ddof=1) * (4.0 / (3.0 * 10**4)) ** 0.2
    assert abs(h[0] - oracle) < 1e-14
    # doubling the spread doubles h; 4x the particles shrinks it by 4^(-1/5)
    assert abs(silverman_bandwidth(2.0 * X)[0] - 2.0 * h[0]) < 1e-12
    X4 = rng.standard_normal((4 * 10**4, 1))
    ratio = silverman_bandwidth(X4)[0] / (X4.std(ddof=1) * (4.0 / (3.0 * 4e4)) ** 0.2)
    assert abs(ratio - 1.0) < 1e-12


def test_silverman_degenerate_cloud():
    with pytest.raises(ValueError, match="degenerate"):
        silverman_bandwidth(np.zeros((10, 1)))
    with pytest.raises(ValueError):
        silverman_bandwidth(np.zeros((1, 1)))


def test_scale_equivariance_of_score():
    rng = substream(4, 54)
    X = rng.standard_normal((500, 2))
    lam = 3.0
    f1 = KdeField(X, [0.3, 0.4])
    f2 = KdeField(lam * X, [lam * 0.3, lam * 0.4])
    x = np.array([0.2, -0.1])
    s1 = kde_score(f1, x)
    s2 = kde_score(f2, lam * x)
    assert np.allclose(s2, s1 / lam, rtol=1e-12)


def test_truncated_mode_agrees_with_exact():
    rng = substream(5, 55)
    X = rng.standard_normal((5000, 1))
    h = silverman_bandwidth(X)
    exact = KdeField(X, h)
    trunc = KdeField(X, h, truncation_radius=8.0)
    xs = np.linspace(-2, 2, 11)[:, None]
    pe, se = exact.log_density_and_score(xs)
    pt, st = trunc.log_density_and_score(xs)
    assert np.abs(pe - pt).max() < 1e-10
    assert np.abs(se - st).max() < 1e-8


def test_reversal_drift_constant_diffusion_is_score():
    m = heat_model(dim=1).as_diffusion_model()
    f = AnalyticField(gaussian(0.0, 1.0))
    x = np.array([[0.7], [-0.4]])
    drift = reversal_drift(m, f, 0.3, x)
    assert np.allclose(drift, -x, atol=1e-14)


def test_reversal_drift_space_dependent_sigma():
    # Sigma = 1 + x^2, analytic N(0,1) field: drift = 2x + (1+x^2)(-x) = x - x^3
    m = affine_model(0.0, 0.0, sigma_spec=("sqrt1px2", 100.0))
    f = AnalyticField(gaussian(0.0, 1.0))
    for x in (-1.5, -0.3, 0.0, 0.8, 2.0):
        v = reversal_drift(m, f, 0.2, np.array([[x]]))[0, 0]
        assert abs(v - (x - x**3)) < 1e-8
        assert abs(reversal_drift(m, f, 0.2, np.zeros((1, 1)))[0, 0]) < 1e-15


def test_reversal_drift_fd_oracle_on_div_sigma_p():
    # central-difference oracle for div(Sigma p)/p with Sigma = 1 + x^2
    m = affine_model(0.0, 0.0, sigma_spec=("sqrt1px2", 100.0))
    mix = gaussian(0.0, 1.0)
    f = AnalyticField(mix)
    h = 1e-5
    for x in (-0.9, 0.4, 1.1):
        def sp(y):
            return (1.0 + y * y) * mix.pdf(np.array([y]))
        fd = (sp(x + h) - sp(x - h)) / (2 * h) / mix.pdf(np.array([x]))
        v = reversal_drift(m, f, 0.2, np.array([[x]]))[0, 0]
        assert abs(v - fd) < 1e-8


def test_reversal_drift_matches_ou_closed_form():
    ou = heat_model(dim=1)
    m = ou.as_diffusion_model()
    nu = gaussian(0.2, 0.5)
    t = 0.4
    from retrodiff import ou_marginal

    f = AnalyticField(ou_marginal(ou, nu, 1.0 - t))
    xs = np.array([[-1.0], [0.0], [0.6]])
    a = reversal_drift(m, f, t, xs)
    b = ou_reversal_drift(ou, nu, t, xs)
    assert np.abs(a - b).max() < 1e-10
