"""Initial / terminal distributions: Dirac lists, Gaussian mixtures, samples.

The characteristic transform convention used throughout is

    T(xi) = integral exp(-i <xi, x>) mu(dx),

so for a Gaussian N(m, V) it equals exp(-i<xi, m> - <V xi, xi>/2).
"""

import numpy as np
from scipy.special import logsumexp, ndtr


class DegenerateDensityError(ValueError):
    """Raised when a density (or its score) is requested from a singular law."""


def _as_weights(w, count):
    w = np.asarray(w, dtype=float)
    if w.shape != (count,):
        raise ValueError("weights length does not match component count")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must sum to 1 (within 1e-12)")
    return w / w.sum()


class GaussianMixture:
    """Finite Gaussian mixture with full covariances.

    Parameters
    ----------
    weights : (K,) non-negative, summing to 1.
    means : (K, d)
    covariances : (K, d, d) symmetric positive semi-definite.
    """

    def __init__(self, weights, means, covariances):
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covariances, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        if means.shape[0] != covs.shape[0]:
            raise ValueError("means and covariances must have equal length")
        if covs.shape[1:] != (means.shape[1], means.shape[1]):
            raise ValueError("covariance shape does not match dimension")
        sym_err = np.abs(covs - np.transpose(covs, (0, 2, 1))).max(initial=0.0)
        if sym_err > 1e-10 * (1.0 + np.abs(covs).max(initial=0.0)):
            raise ValueError("covariances must be symmetric")
        self.weights = _as_weights(weights, means.shape[0])
        self.means = means
        self.covariances = 0.5 * (covs + np.transpose(covs, (0, 2, 1)))
        self._eig = None
        scale = 1.0 + np.abs(self.covariances).max(initial=0.0)
        for V in self.covariances:
            if np.linalg.eigvalsh(V)[0] < -1e-10 * scale:
                raise ValueError("covariance is not positive semi-definite")

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return len(self.weights)

    def _factors(self):
        # eigendecompositions, shared by sampling / density / score
        if self._eig is None:
            vals, vecs = np.linalg.eigh(self.covariances)
            self._eig = (np.clip(vals, 0.0, None), vecs)
        return self._eig

    def mean(self):
        return self.weights @ self.means

    def cov(self):
        m = self.mean()
        c = np.einsum("k,kij->ij", self.weights, self.covariances)
        dm = self.means - m
        return c + np.einsum("k,ki,kj->ij", self.weights, dm, dm)

    def sample(self, n, rng):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        vals, vecs = self._factors()
        roots = vecs * np.sqrt(vals)[:, None, :]  # (K, d, d) factor L, LL^T = V
        return self.means[comp] + np.einsum("nij,nj->ni", roots[comp], z)

    def _log_component_densities(self, x):
        x = np.atleast_2d(x)
        vals, vecs = self._factors()
        if vals.min() <= 0.0:
            raise DegenerateDensityError("mixture has a singular component")
        out = np.empty((x.shape[0], self.n_components))
        for k in range(self.n_components):
            y = (x - self.means[k]) @ vecs[k]
            out[:, k] = -0.5 * (
                np.sum(y * y / vals[k], axis=1)
                + np.sum(np.log(vals[k]))
                + self.dim * np.log(2.0 * np.pi)
            )
        return out

    def logpdf(self, x):
        single = np.ndim(x) == 1
        lc = self._log_component_densities(x)
        out = logsumexp(lc, axis=1, b=self.weights[None, :])
        return out[0] if single else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def score(self, x):
        """Gradient of log density, evaluated row-wise."""
        single = np.ndim(x) == 1
        x2 = np.atleast_2d(x)
        lc = self._log_component_densities(x2)
        lw = lc + np.log(np.maximum(self.weights, 1e-300))[None, :]
        r = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        vals, vecs = self._factors()
        g = np.zeros_like(x2)
        for k in range(self.n_components):
            y = (x2 - self.means[k]) @ vecs[k]
            g += r[:, k : k + 1] * (-(y / vals[k]) @ vecs[k].T)
        return g[0] if single else g

    def cdf1d(self, x):
        if self.dim != 1:
            raise ValueError("cdf1d requires a one-dimensional mixture")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        sd = np.sqrt(self.covariances[:, 0, 0])
        if (sd <= 0).any():
            raise DegenerateDensityError("mixture has a singular component")
        z = (x[:, None] - self.means[:, 0][None, :]) / sd[None, :]
        return ndtr(z) @ self.weights

    def char_transform(self, xi):
        """exp(-i<xi,.>) transform; xi of shape (d,) or (M, d)."""
        xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
        phase = xi2 @ self.means.T                      # (M, K)
        quad = np.einsum("mi,kij,mj->mk", xi2, self.covariances, xi2)
        out = np.exp(-1j * phase - 0.5 * quad) @ self.weights
        return out[0] if np.ndim(xi) == 1 else out


class DiracMixture:
    """Weighted list of point masses."""

    def __init__(self, points, weights=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.isfinite(points).all():
            raise ValueError("points must be finite")
        if weights is None:
            weights = np.full(points.shape[0], 1.0 / points.shape[0])
        self.points = points
        self.weights = _as_weights(weights, points.shape[0])

    @property
    def dim(self):
        return self.points.shape[1]

    def mean(self):
        return self.weights @ self.points

    def sample(self, n, rng):
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.points[idx]

    def char_transform(self, xi):
        xi2 = np.atleast_2d(np.asarray(xi, dtype=float))
        out = np.exp(-1j * (xi2 @ self.points.T)) @ self.weights
        return out[0] if np.ndim(xi) == 1 else out


class Empirical:
    """Distribution given by a finite sample; sampling is bootstrap resampling."""

    def __init__(self, sample):
        sample = np.atleast_2d(np.asarray(sample, dtype=float))
        if not np.isfinite(sample).all():
            raise ValueError("sample must be finite")
        if sample.shape[0] < 1:
            raise ValueError("sample must be non-empty")
        self.points = sample

    @property
    def dim(self):
        return self.points.shape[1]

    def mean(self):
        return self.points.mean(axis=0)

    def sample(self, n, rng):
        idx = rng.integers(0, self.points.shape[0], size=n)
        return self.points[idx]


def gaussian(mean, cov):
    """Single Gaussian as a one-component mixture (scalars allowed in d=1)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov * np.eye(len(mean))
    return GaussianMixture([1.0], [mean], [cov])


def dirac(point):
    """Single point mass."""
    return DiracMixture([np.atleast_1d(np.asarray(point, dtype=float))])
