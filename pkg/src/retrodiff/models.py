"""Diffusion coefficient models and their empirical regularity checks.

A model bundles a drift b(t, x) and a dispersion sigma(t, x) together with
optional analytic derivatives.  Evaluation is vectorized over particles:
``drift(t, x)`` takes x of shape (..., d) and returns (..., d), and
``dispersion(t, x)`` returns (..., d, m) (a constant (d, m) matrix is
accepted and broadcast).  Models are immutable after construction and all
evaluation is reentrant.
"""

import math
from dataclasses import dataclass

import numpy as np

from .streams import LIPSCHITZ_PROBE, substream


@dataclass(frozen=True)
class DiffusionModel:
    """Coefficients of a forward diffusion on [0, horizon].

    ``jac_drift(t, x) -> (d, d)`` and ``jac_dispersion(t, x) -> (d, m, d)``
    (entry [i, j, l] = d sigma_ij / d x_l) are optional; finite differences
    are used when absent.  ``div_sigma_rows(t, x) -> (..., d)`` is the row
    divergence of sigma sigma^T, used by the reversal drift.
    """

    dim_d: int
    dim_m: int
    drift: callable
    dispersion: callable
    horizon: float = 1.0
    jac_drift: callable = None
    jac_dispersion: callable = None
    div_sigma_rows: callable = None
    name: str = ""

    def sigma(self, t, x):
        s = np.asarray(self.dispersion(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        if s.shape == (self.dim_d, self.dim_m) and x.ndim > 1:
            s = np.broadcast_to(s, x.shape[:-1] + s.shape)
        return s

    def sigma_sigma_T(self, t, x):
        s = self.sigma(t, x)
        return np.einsum("...ik,...jk->...ij", s, s)

    # --- time-flipped views (reversed clock r corresponds to horizon - r) ---

    def drift_flipped(self, r, x):
        return np.asarray(self.drift(self.horizon - r, x), dtype=float)

    def sigma_flipped(self, r, x):
        return self.sigma(self.horizon - r, x)

    def sigma_sigma_T_flipped(self, r, x):
        return self.sigma_sigma_T(self.horizon - r, x)

    def div_sigma_rows_flipped(self, r, x):
        return self.div_sigma_rows_at(self.horizon - r, x)

    # --- derivatives, analytic when given, central differences otherwise ---

    def jac_drift_at(self, t, x):
        if self.jac_drift is not None:
            return np.asarray(self.jac_drift(t, x), dtype=float)
        return _fd_jacobian(lambda y: self.drift(t, y), np.asarray(x, float))

    def jac_dispersion_at(self, t, x):
        if self.jac_dispersion is not None:
            return np.asarray(self.jac_dispersion(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        cols = _fd_jacobian(lambda y: self.sigma(t, y), x)  # (d, m, d)
        return cols

    def div_sigma_rows_at(self, t, x):
        """Row divergence of Sigma = sigma sigma^T, batched over x rows."""
        if self.div_sigma_rows is not None:
            return np.asarray(self.div_sigma_rows(t, x), dtype=float)
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = np.atleast_2d(x)
        out = np.zeros_like(x2)
        for l in range(self.dim_d):
            h = np.maximum(1e-6, 1e-6 * np.abs(x2[:, l]))
            xp, xm = x2.copy(), x2.copy()
            xp[:, l] += h
            xm[:, l] -= h
            dS = (self.sigma_sigma_T(t, xp) - self.sigma_sigma_T(t, xm)) / (
                2.0 * h
            )[:, None, None]
            out += dS[:, :, l]
        return out[0] if single else out


def _fd_jacobian(fn, x):
    """Central-difference Jacobian of fn at a single point x (shape (d,))."""
    d = x.shape[0]
    f0 = np.asarray(fn(x), dtype=float)
    out = np.empty(f0.shape + (d,))
    for l in range(d):
        h = max(1e-6, 1e-6 * abs(x[l]))
        xp, xm = x.copy(), x.copy()
        xp[l] += h
        xm[l] -= h
        out[..., l] = (np.asarray(fn(xp), float) - np.asarray(fn(xm), float)) / (2 * h)
    return out


class OUModel:
    """Affine-drift model b(t, x) = C(t) x with space-independent sigma(t)."""

    def __init__(self, C_fn, sigma_fn, dim_d, dim_m=None, horizon=1.0):
        self.C_fn = C_fn
        self.sigma_fn = sigma_fn
        self.dim_d = dim_d
        self.dim_m = dim_d if dim_m is None else dim_m
        self.horizon = float(horizon)

    def C(self, t):
        return np.asarray(self.C_fn(t), dtype=float).reshape(self.dim_d, self.dim_d)

    def sigma(self, t):
        return np.asarray(self.sigma_fn(t), dtype=float).reshape(
            self.dim_d, self.dim_m
        )

    def Sigma(self, t):
        s = self.sigma(t)
        return s @ s.T

    def as_diffusion_model(self):
        d, m = self.dim_d, self.dim_m

        def drift(t, x):
            return np.asarray(x, float) @ self.C(t).T

        def dispersion(t, x):
            return self.sigma(t)

        def div_rows(t, x):
            x = np.asarray(x, dtype=float)
            shape = x.shape[:-1] + (d,) if x.ndim > 1 else (d,)
            return np.zeros(shape)

        return DiffusionModel(
            dim_d=d,
            dim_m=m,
            drift=drift,
            dispersion=dispersion,
            horizon=self.horizon,
            jac_drift=lambda t, x: self.C(t),
            jac_dispersion=lambda t, x: np.zeros((d, m, d)),
            div_sigma_rows=div_rows,
            name="ou",
        )


class PiecewiseHomogeneousModel:
    """Time-homogeneous coefficients on each interval of a partition.

    Intervals are left-open/right-closed, ]t_{k-1}, t_k], except the first
    which is [t_0, t_1]; at a breakpoint the left interval applies.
    """

    def __init__(self, breakpoints, drifts, dispersions, dim_d=1, dim_m=None):
        bp = np.asarray(breakpoints, dtype=float)
        if bp.ndim != 1 or len(bp) < 2:
            raise ValueError("need at least two breakpoints (0 and T)")
        if not (np.diff(bp) > 0).all():
            raise ValueError("breakpoints must be strictly increasing")
        if len(drifts) != len(bp) - 1 or len(dispersions) != len(bp) - 1:
            raise ValueError("one coefficient pair per interval is required")
        self.breakpoints = bp
        self.drifts = list(drifts)
        self.dispersions = list(dispersions)
        self.dim_d = dim_d
        self.dim_m = dim_d if dim_m is None else dim_m

    @property
    def horizon(self):
        return float(self.breakpoints[-1])

    def interval_index(self, t):
        bp = self.breakpoints
        if not bp[0] <= t <= bp[-1]:
            raise ValueError(f"t={t} outside [{bp[0]}, {bp[-1]}]")
        if t <= bp[1]:
            return 0
        return int(np.searchsorted(bp[1:], t, side="left"))

    def as_diffusion_model(self):
        def drift(t, x):
            return np.asarray(self.drifts[self.interval_index(t)](x), dtype=float)

        def dispersion(t, x):
            return np.asarray(
                self.dispersions[self.interval_index(t)](x), dtype=float
            )

        return DiffusionModel(
            dim_d=self.dim_d,
            dim_m=self.dim_m,
            drift=drift,
            dispersion=dispersion,
            horizon=self.horizon,
            name="piecewise",
        )


def sigma_sigma_T(model, t, x):
    """sigma sigma^T evaluated at (t, x); symmetric PSD by construction."""
    return model.sigma_sigma_T(t, x)


@dataclass
class EllipticityReport:
    epsilon: float
    min_eigenvalue: float
    argmin: tuple
    n_points: int
    passed: bool
    note: str = (
        "Hoelder regularity of the coefficients is assumed, not certified"
    )


def check_ellipticity(model, sample_points, epsilon):
    """Smallest eigenvalue of sigma sigma^T over a finite sample of (t, x).

    Passes when the sampled minimum is >= epsilon.  The sample must be
    non-empty.
    """
    pts = list(sample_points)
    if not pts:
        raise ValueError("sample_points must be non-empty")
    best = math.inf
    arg = None
    for t, x in pts:
        S = model.sigma_sigma_T(t, np.asarray(x, dtype=float))
        lam = float(np.linalg.eigvalsh(S)[0])
        if lam < best:
            best, arg = lam, (t, np.asarray(x, float))
    return EllipticityReport(
        epsilon=float(epsilon),
        min_eigenvalue=best,
        argmin=arg,
        n_points=len(pts),
        passed=best >= epsilon,
    )


@dataclass
class LipschitzEstimate:
    """Sampled suprema of coefficient Jacobian norms.

    K = 2 K_b + sum_j K_sigma_j^2 feeds the Gronwall moment bound.  The
    values are sampled lower bounds of the true suprema, never certified
    upper bounds.
    """

    K_b: float
    K_sigma: np.ndarray
    n_probes: int

    @property
    def K(self):
        return 2.0 * self.K_b + float(np.sum(self.K_sigma**2))


def estimate_lipschitz(model, domain_box, t_samples, n_probes, seed):
    """Monte Carlo estimate of the Jacobian-norm suprema over a box.

    One probe is drawn uniformly per iteration, followed by one local
    refinement draw around the current maximizer; both come from a single
    deterministic stream, so the evaluated set for n probes is a prefix of
    the set for n + k probes and the estimate is monotone in n_probes.
    """
    lo, hi = (np.asarray(v, dtype=float) for v in domain_box)
    if lo.shape != hi.shape or (hi <= lo).any():
        raise ValueError("domain_box must have positive volume")
    t_samples = list(t_samples)
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = substream(seed, LIPSCHITZ_PROBE)
    radius = 0.05 * (hi - lo)

    K_b = 0.0
    K_s = np.zeros(model.dim_m)
    best_x = None

    def visit(x):
        nonlocal K_b, K_s, best_x
        for t in t_samples:
            jb = np.linalg.norm(model.jac_drift_at(t, x))
            js = model.jac_dispersion_at(t, x)  # (d, m, d)
            col_norms = np.linalg.norm(js, axis=(0, 2))
            total = 2.0 * jb + np.sum(col_norms**2)
            if best_x is None or total > visit.best_total:
                visit.best_total = total
                best_x = x
            K_b = max(K_b, jb)
            K_s = np.maximum(K_s, col_norms)

    visit.best_total = -math.inf
    for _ in range(int(n_probes)):
        visit(rng.uniform(lo, hi))
        visit(np.clip(best_x + radius * rng.standard_normal(lo.shape), lo, hi))
    return LipschitzEstimate(K_b=float(K_b), K_sigma=K_s, n_probes=int(n_probes))


# ---------------------------------------------------------------------------
# named coefficient families (loadable from the batch-runner config file)
# ---------------------------------------------------------------------------


def _sigma_family(spec, dim):
    """Dispersion from a numeric spec: a constant, or sqrt(1+x^2) clipped."""
    if isinstance(spec, (int, float)):
        const = float(spec) * np.eye(dim)

        def disp(t, x):
            return const

        def jac(t, x):
            return np.zeros((dim, dim, dim))

        def div_rows(t, x):
            x = np.asarray(x, dtype=float)
            return np.zeros(x.shape if x.ndim > 1 else (dim,))

        return disp, jac, div_rows
    kind, clip = spec
    if kind != "sqrt1px2" or dim != 1:
        raise ValueError(f"unknown dispersion spec {spec!r}")
    c2 = float(clip) ** 2

    def disp(t, x):
        x = np.asarray(x, dtype=float)
        return np.sqrt(1.0 + np.minimum(x * x, c2))[..., None]

    def jac(t, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) < np.sqrt(c2)
        g = np.where(inside, x / np.sqrt(1.0 + np.minimum(x * x, c2)), 0.0)
        return np.asarray(g, dtype=float).reshape(1, 1, 1)

    def div_rows(t, x):
        # d/dx (1 + min(x^2, c^2)) = 2x inside the clip, 0 outside
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) < np.sqrt(c2), 2.0 * x, 0.0)

    return disp, jac, div_rows


def heat_model(dim=1, scale=1.0, horizon=1.0):
    """Zero drift, sigma = scale * I; marginals from a point are N(x0, scale^2 t I)."""
    C0 = np.zeros((dim, dim))
    s = scale * np.eye(dim)
    return OUModel(lambda t: C0, lambda t: s, dim_d=dim, horizon=horizon)


def ou_model(C, sigma, horizon=1.0):
    C = np.atleast_2d(np.asarray(C, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    return OUModel(lambda t: C, lambda t: sigma, dim_d=C.shape[0],
                   dim_m=sigma.shape[1], horizon=horizon)


def affine_model(b0, b1, sigma_spec=1.0, horizon=1.0):
    """Drift b0 + b1 x with a numeric dispersion spec (see _sigma_family)."""
    b0 = np.atleast_1d(np.asarray(b0, dtype=float))
    b1 = np.atleast_2d(np.asarray(b1, dtype=float))
    d = b0.shape[0]
    disp, jac_s, div_rows = _sigma_family(sigma_spec, d)
    return DiffusionModel(
        dim_d=d,
        dim_m=d,
        drift=lambda t, x: b0 + np.asarray(x, float) @ b1.T,
        dispersion=disp,
        horizon=horizon,
        jac_drift=lambda t, x: b1,
        jac_dispersion=jac_s,
        div_sigma_rows=div_rows,
        name="affine",
    )


def sin_drift_model(amplitude=1.0, sigma_spec=1.0, horizon=1.0):
    """One-dimensional drift a*sin(x): bounded, Lipschitz with constant |a|."""
    a = float(amplitude)
    disp, jac_s, div_rows = _sigma_family(sigma_spec, 1)
    return DiffusionModel(
        dim_d=1,
        dim_m=1,
        drift=lambda t, x: a * np.sin(np.asarray(x, float)),
        dispersion=disp,
        horizon=horizon,
        jac_drift=lambda t, x: np.atleast_2d(a * np.cos(np.asarray(x, float))),
        jac_dispersion=jac_s,
        div_sigma_rows=div_rows,
        name="sin-drift",
    )


def piecewise_model(breakpoints, rates, sigmas, horizon=None):
    """Scalar piecewise family: b = rate_k * x, sigma = const_k per interval."""
    bp = list(breakpoints)
    if horizon is not None and abs(bp[-1] - horizon) > 1e-12:
        raise ValueError("last breakpoint must equal the horizon")
    drifts = [(lambda c: (lambda x: c * np.asarray(x, float)))(c) for c in rates]
    disps = [
        (lambda s: (lambda x: np.full(np.shape(np.atleast_2d(x))[:1] + (1, 1), s)
                    if np.ndim(x) > 1 else np.array([[s]])))(float(s))
        for s in sigmas
    ]
    return PiecewiseHomogeneousModel(bp, drifts, disps, dim_d=1)


def make_model(family, **params):
    """Factory for the named coefficient families."""
    builders = {
        "heat": heat_model,
        "ou": ou_model,
        "affine": affine_model,
        "sin-drift": sin_drift_model,
        "piecewise": piecewise_model,
    }
    if family not in builders:
        raise ValueError(f"unknown model family {family!r}")
    return builders[family](**params)
