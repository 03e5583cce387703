"""Coefficient models: ellipticity, Lipschitz estimation, piecewise rules."""

import numpy as np
import pytest

from retrodiff import (
    check_ellipticity,
    estimate_lipschitz,
    make_model,
    sigma_sigma_T,
)
from retrodiff.models import (
    DiffusionModel,
    affine_model,
    heat_model,
    piecewise_model,
    sin_drift_model,
)


def test_sigma_sigma_T_identity():
    m = heat_model(dim=2).as_diffusion_model()
    S = sigma_sigma_T(m, 0.0, np.zeros(2))
    assert np.array_equal(S, np.eye(2))


def test_sigma_sigma_T_rank_one():
    # sigma = [[1], [1]] gives the rank-1 outer product
    m = DiffusionModel(
        dim_d=2, dim_m=1,
        drift=lambda t, x: np.zeros_like(np.atleast_2d(x)),
        dispersion=lambda t, x: np.array([[1.0], [1.0]]),
    )
    S = sigma_sigma_T(m, 0.0, np.zeros(2))
    assert np.allclose(S, np.ones((2, 2)))
    assert np.linalg.matrix_rank(S) == 1


def test_sigma_sigma_T_psd_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sig = rng.uniform(-2, 2, size=(3, 2))
        m = DiffusionModel(
            dim_d=3, dim_m=2,
            drift=lambda t, x: np.zeros(3),
            dispersion=lambda t, x, s=sig: s,
        )
        S = sigma_sigma_T(m, 0.0, np.zeros(3))
        assert np.linalg.eigvalsh(S).min() >= -1e-12  # eigensolver oracle


def test_ellipticity_pass_and_fail():
    m = heat_model(dim=2).as_diffusion_model()
    pts = [(0.0, np.zeros(2)), (0.5, np.ones(2))]
    rep = check_ellipticity(m, pts, 0.5)
    assert rep.passed and abs(rep.min_eigenvalue - 1.0) < 1e-14

    deg = DiffusionModel(
        dim_d=2, dim_m=2,
        drift=lambda t, x: np.zeros(2),
        dispersion=lambda t, x: np.diag([1.0, 0.0]),
    )
    rep = check_ellipticity(deg, pts, 1e-6)
    assert not rep.passed and rep.min_eigenvalue == 0.0


def test_ellipticity_space_dependent_grid_oracle():
    # sigma(x) = sqrt(1 + x^2): Sigma >= 1, minimized at x = 0
    m = affine_model(0.0, 0.0, sigma_spec=("sqrt1px2", 100.0))
    xs = np.linspace(-2.0, 2.0, 81)
    pts = [(0.0, np.array([x])) for x in xs]
    rep = check_ellipticity(m, pts, 0.9)
    oracle = min(1.0 + x * x for x in xs)
    assert abs(rep.min_eigenvalue - oracle) < 1e-12
    assert rep.passed


def test_ellipticity_empty_sample_rejected():
    m = heat_model().as_diffusion_model()
    with pytest.raises(ValueError):
        check_ellipticity(m, [], 0.1)


def box(lo=-5.0, hi=5.0, d=1):
    return (np.full(d, lo), np.full(d, hi))


def test_lipschitz_constant_coefficients():
    m = DiffusionModel(
        dim_d=1, dim_m=1,
        drift=lambda t, x: np.zeros_like(np.asarray(x, float)),
        dispersion=lambda t, x: np.array([[2.0]]),
    )
    est = estimate_lipschitz(m, box(), [0.0, 1.0], 20, seed=0)
    assert est.K_b == 0.0
    assert np.all(est.K_sigma == 0.0)
    assert est.K == 0.0


def test_lipschitz_linear_drift_exact():
    m = affine_model(0.0, 2.0, sigma_spec=1.0)
    est = estimate_lipschitz(m, box(), [0.0], 1, seed=0)
    assert abs(est.K_b - 2.0) < 1e-15
    assert abs(est.K - 4.0) < 1e-15


def test_lipschitz_sin_drift_converges_to_one():
    # dense-grid sup oracle: sup |cos x| over the box is 1
    m = sin_drift_model(1.0, sigma_spec=1.0)
    grid_sup = np.max(np.abs(np.cos(np.linspace(-5, 5, 20001))))
    est = estimate_lipschitz(m, box(), [0.0], 400, seed=1)
    assert est.K_b <= grid_sup + 1e-12
    assert est.K_b > 0.97


def test_lipschitz_monotone_in_probes():
    m = sin_drift_model(1.0, sigma_spec=1.0)
    vals = [estimate_lipschitz(m, box(), [0.0], n, seed=7).K_b
            for n in (1, 3, 10, 30, 100)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_lipschitz_fd_fallback_matches_analytic():
    ana = sin_drift_model(1.0, sigma_spec=1.0)
    bare = DiffusionModel(
        dim_d=1, dim_m=1,
        drift=ana.drift,
        dispersion=ana.dispersion,
    )
    e1 = estimate_lipschitz(ana, box(), [0.0], 50, seed=3)
    e2 = estimate_lipschitz(bare, box(), [0.0], 50, seed=3)
    assert abs(e1.K_b - e2.K_b) < 1e-6


def test_lipschitz_degenerate_box_rejected():
    m = heat_model().as_diffusion_model()
    with pytest.raises(ValueError, match="volume"):
        estimate_lipschitz(m, (np.zeros(1), np.zeros(1)), [0.0], 5, seed=0)


def test_piecewise_interval_convention():
    pw = piecewise_model([0.0, 0.5, 1.0], rates=[-1.0, 2.0], sigmas=[1.0, 0.5])
    m = pw.as_diffusion_model()
    x = np.array([[2.0]])
    # interior points
    assert np.allclose(m.drift(0.25, x), -2.0)
    assert np.allclose(m.drift(0.75, x), 4.0)
    # breakpoint takes the left interval; 0.5 belongs to the first
    assert np.allclose(m.drift(0.5, x), -2.0)
    assert np.allclose(m.drift(1.0, x), 4.0)
    assert float(m.sigma(0.5, x)[0, 0, 0]) == 1.0
    assert float(m.sigma(0.50001, x)[0, 0, 0]) == 0.5


def test_piecewise_validation():
    with pytest.raises(ValueError, match="increasing"):
        piecewise_model([0.0, 0.6, 0.5], rates=[1.0, 1.0], sigmas=[1.0, 1.0])


def test_make_model_families():
    assert make_model("heat", dim=1).horizon == 1.0
    assert make_model("ou", C=-1.0, sigma=1.0).dim_d == 1
    assert make_model("affine", b0=[0.0], b1=[[0.5]]).name == "affine"
    assert make_model("sin-drift").name == "sin-drift"
    with pytest.raises(ValueError, match="unknown model family"):
        make_model("pde")


def test_symmetry_invariant_random_sigma():
    rng = np.random.default_rng(2)
    sig = rng.uniform(-1, 1, size=(4, 3))
    m = DiffusionModel(
        dim_d=4, dim_m=3,
        drift=lambda t, x: np.zeros(4),
        dispersion=lambda t, x: sig,
    )
    S = m.sigma_sigma_T(0.0, np.zeros(4))
    assert np.abs(S - S.T).max() < 1e-14
