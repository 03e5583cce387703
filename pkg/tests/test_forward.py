"""Forward simulation: frozen-cloud cases, CLT/chi^2 oracles, coupling."""

import io

import numpy as np
import pytest

from retrodiff import (
    DiracMixture,
    Empirical,
    TimeGrid,
    check_moment_bound,
    compute_ou_covariance,
    empirical_moments,
    euler_maruyama_path,
    export_snapshots_csv,
    gaussian,
    sample_initial,
    substream,
)
from retrodiff.models import DiffusionModel, affine_model, heat_model, ou_model


def test_sample_dirac_copies():
    ens = sample_initial(DiracMixture([[1.5]]), 5, seed=0)
    assert np.array_equal(ens.positions, np.full((5, 1), 1.5))


def test_sample_gaussian_clt():
    ens = sample_initial(gaussian(0.0, 1.0), 10**5, seed=1)
    assert abs(ens.positions.mean()) < 3.0 / np.sqrt(1e5)


def test_sample_empirical_subset():
    src = np.array([[0.0], [2.0], [4.0]])
    ens = sample_initial(Empirical(src), 64, seed=2)
    assert set(ens.positions.ravel()).issubset({0.0, 2.0, 4.0})


def test_frozen_particles_without_coefficients():
    m = DiffusionModel(
        dim_d=1, dim_m=1,
        drift=lambda t, x: np.zeros_like(np.asarray(x, float)),
        dispersion=lambda t, x: np.zeros((1, 1)),
    )
    init = sample_initial(DiracMixture([[0.7]]), 10, seed=0)
    path = euler_maruyama_path(m, init, TimeGrid(0.0, 1.0, 50), seed=0)
    assert np.array_equal(path.terminal.positions, init.positions)


def test_heat_terminal_variance_chi2():
    # chi^2 concentration: var of N(0,1)-sample variance is 2/n
    m = heat_model(dim=1).as_diffusion_model()
    init = sample_initial(DiracMixture([[0.0]]), 10**5, seed=3)
    path = euler_maruyama_path(m, init, TimeGrid(0.0, 1.0, 500), seed=3)
    v = path.terminal.positions.var(ddof=1)
    assert abs(v - 1.0) < 0.03


def test_ou_terminal_variance_matches_covariance_path():
    ou = ou_model(C=-1.0, sigma=1.0)
    oracle = compute_ou_covariance(ou.C, ou.Sigma, TimeGrid(0.0, 1.0, 1000))
    q1 = oracle.at(1.0)[0, 0]
    assert abs(q1 - (1.0 - np.exp(-2.0)) / 2.0) < 1e-9
    init = sample_initial(DiracMixture([[0.0]]), 10**5, seed=4)
    path = euler_maruyama_path(ou.as_diffusion_model(), init,
                               TimeGrid(0.0, 1.0, 1000), seed=4)
    assert abs(path.terminal.positions.var(ddof=1) - q1) < 0.02


def test_reproducibility_bitwise():
    m = heat_model(dim=2).as_diffusion_model()
    init = sample_initial(gaussian([0.0, 0.0], np.eye(2)), 500, seed=9)
    g = TimeGrid(0.0, 1.0, 100)
    a = euler_maruyama_path(m, init, g, seed=11)
    b = euler_maruyama_path(m, init, g, seed=11)
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert np.array_equal(sa.positions, sb.positions)
    c = euler_maruyama_path(m, init, g, seed=12)
    assert not np.array_equal(a.terminal.positions, c.terminal.positions)


def test_weak_order_mean_error_halves():
    # |empirical mean at T - R(T) x0| shrinks ~linearly in dt
    ou = ou_model(C=1.0, sigma=0.5)
    m = ou.as_diffusion_model()
    x0 = 1.0
    exact = np.exp(1.0) * x0
    errs = []
    for n_steps in (50, 100, 200):
        init = sample_initial(DiracMixture([[x0]]), 2 * 10**5, seed=21)
        path = euler_maruyama_path(m, init, TimeGrid(0.0, 1.0, n_steps), seed=21)
        errs.append(abs(path.terminal.positions.mean() - exact))
    assert errs[0] > errs[1] > errs[2]
    assert 1.4 < errs[0] / errs[1] < 2.9


def test_nonfinite_abort_names_particle_and_step():
    m = DiffusionModel(
        dim_d=1, dim_m=1,
        drift=lambda t, x: np.full_like(np.asarray(x, float), np.inf),
        dispersion=lambda t, x: np.zeros((1, 1)),
    )
    init = sample_initial(DiracMixture([[0.0]]), 3, seed=0)
    with pytest.raises(RuntimeError, match="particle 0 at step 1"):
        euler_maruyama_path(m, init, TimeGrid(0.0, 1.0, 10), seed=0)


def test_thinning_and_full_store():
    m = heat_model().as_diffusion_model()
    init = sample_initial(DiracMixture([[0.0]]), 10, seed=0)
    g = TimeGrid(0.0, 1.0, 1000)
    thin = euler_maruyama_path(m, init, g, seed=0)
    assert len(thin) <= 202
    full = euler_maruyama_path(m, init, g, seed=0, full_store=True)
    assert len(full) == 1001
    assert np.array_equal(thin.terminal.positions, full.terminal.positions)


def test_empirical_moments_small_cases():
    from retrodiff import ParticleEnsemble

    two = ParticleEnsemble(time=0.0, positions=np.array([[1.0], [-1.0]]))
    mean, cov = empirical_moments(two)
    assert mean[0] == 0.0 and cov[0, 0] == 2.0

    same = ParticleEnsemble(time=0.0, positions=np.full((7, 1), 3.0))
    mean, cov = empirical_moments(same)
    assert mean[0] == 3.0 and cov[0, 0] == 0.0

    with pytest.raises(ValueError):
        empirical_moments(ParticleEnsemble(time=0.0, positions=np.zeros((1, 1))))


def test_empirical_moments_clt():
    rng = substream(5, 100)
    from retrodiff import ParticleEnsemble

    ens = ParticleEnsemble(time=0.0,
                           positions=3.0 + 2.0 * rng.standard_normal((10**5, 1)))
    mean, cov = empirical_moments(ens)
    assert abs(mean[0] - 3.0) < 0.02
    assert abs(cov[0, 0] - 4.0) < 0.06


def test_moment_bound_constant_sigma_zero_drift():
    m = DiffusionModel(
        dim_d=1, dim_m=1,
        drift=lambda t, x: np.zeros_like(np.asarray(x, float)),
        dispersion=lambda t, x: np.array([[1.0]]),
        jac_drift=lambda t, x: np.zeros((1, 1)),
        jac_dispersion=lambda t, x: np.zeros((1, 1, 1)),
    )
    rep = check_moment_bound(m, [0.0], [2.0], TimeGrid(0.0, 1.0, 100), 2000, seed=0)
    # E|Z_t|^2 = |y-x|^2 exactly under synchronous coupling, K = 0
    assert rep.K == 0.0
    assert abs(rep.sup_empirical - 4.0) < 1e-12
    assert rep.passed


def test_moment_bound_linear_drift():
    m = affine_model(0.0, -1.0, sigma_spec=1.0)
    rep = check_moment_bound(m, [0.0], [1.0], TimeGrid(0.0, 1.0, 100), 2000, seed=1)
    assert abs(rep.K - 2.0) < 1e-12
    assert rep.bound == pytest.approx(np.exp(2.0))
    assert rep.sup_empirical <= rep.bound + rep.margin
    assert rep.passed


def test_moment_bound_identical_starts():
    m = affine_model(0.0, -1.0, sigma_spec=1.0)
    rep = check_moment_bound(m, [0.5], [0.5], TimeGrid(0.0, 1.0, 50), 100, seed=2)
    assert rep.sup_empirical == 0.0


def test_snapshot_csv_format():
    m = heat_model(dim=2).as_diffusion_model()
    init = sample_initial(DiracMixture([[0.0, 0.0]]), 3, seed=0)
    path = euler_maruyama_path(m, init, TimeGrid(0.0, 1.0, 4), seed=0,
                               full_store=True)
    buf = io.StringIO()
    export_snapshots_csv(path, buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "t,particle_id,x1,x2"
    assert len(lines) == 1 + 5 * 3
    t, pid, x1, x2 = lines[1].split(",")
    assert pid == "0" and float(t) == 0.0
    # 17 significant digits are representable round-trip
    val = path.terminal.positions[2, 1]
    assert float(lines[-1].split(",")[3]) == val


def test_piecewise_dispersion_variance_composition():
    # sigma = 1 on [0, 0.5], 0.5 afterwards: Var(X_1) = 0.5 + 0.5 * 0.25
    from retrodiff.models import piecewise_model

    pw = piecewise_model([0.0, 0.5, 1.0], rates=[0.0, 0.0], sigmas=[1.0, 0.5])
    init = sample_initial(DiracMixture([[0.0]]), 2 * 10**4, seed=61)
    path = euler_maruyama_path(pw.as_diffusion_model(), init,
                               TimeGrid(0.0, 1.0, 400), seed=61)
    v = path.terminal.positions.var(ddof=1)
    assert abs(v - 0.625) < 0.02
