"""Kernel PCA as trace maximisation over the Stiefel manifold.

    f(x) = -(1 / 2N) sum_j Tr(x^T H_j x),   x in St(p, r)
"""

from __future__ import annotations

import numpy as np

from ..linalg import RngStream
from ..manifolds import Stiefel
from .base import Problem


class KpcaProblem(Problem):
    def __init__(self, H, r: int):
        H = np.asarray(H, dtype=np.float64)
        if H.ndim != 3 or H.shape[1] != H.shape[2] or H.shape[0] < 1:
            raise ValueError("H must be a non-empty stack of square matrices")
        if not np.allclose(H, np.swapaxes(H, 1, 2), rtol=0.0, atol=1e-12):
            raise ValueError("every H_j must be symmetric")
        self.H = 0.5 * (H + np.swapaxes(H, 1, 2))
        self.n_samples, self.p = H.shape[0], H.shape[1]
        self.r = int(r)
        self.manifold = Stiefel(self.p, self.r)
        self._keys = None

    @classmethod
    def from_samples(cls, samples, r, center=True, standardize=False):
        """``H_j = h_j h_j^T`` for each row ``h_j`` of ``samples``."""
        X = np.asarray(samples, dtype=np.float64)
        if center or standardize:
            X = X - X.mean(axis=0)
        if standardize:
            sd = X.std(axis=0)
            X = X / np.where(sd > 0, sd, 1.0)
        prob = cls(np.einsum("ni,nj->nij", X, X), r)
        prob.samples = X
        # sort key for non-IID shards: angle of each sample in the top-2 principal plane
        _, vecs = np.linalg.eigh(X.T @ X)
        s1, s2 = X @ vecs[:, -1], X @ vecs[:, -2]
        prob._keys = np.arctan2(np.abs(s2), np.abs(s1))
        return prob

    def partition_keys(self):
        return self._keys

    def loss(self, x, indices):
        idx = np.asarray(indices)
        if idx.size == 0:
            raise IndexError("empty index set")
        Hm = self.H[idx].mean(axis=0)
        return -0.5 * float(np.sum(x * (Hm @ x)))

    def loss_grad(self, x, indices):
        Hm = self.H[np.asarray(indices)].mean(axis=0)
        return -(Hm @ x)

    def compile(self, indices):
        Hm = self.H[np.asarray(indices)].mean(axis=0)

        def value(x):
            return -0.5 * float(np.sum(x * (Hm @ x)))

        def grad(x):
            return -(Hm @ x)

        def value_batch(xs):
            return -0.5 * np.sum(xs * (Hm @ xs), axis=(-2, -1))

        return value, grad, value_batch

    def mean_H(self, groups=None):
        if groups is None:
            return self.H.mean(axis=0)
        return np.mean([self.H[np.asarray(g)].mean(axis=0) for g in groups], axis=0)

    def reference_optimum(self, groups=None):
        """Spectral solution: ``f* = -(sum of top-r eigenvalues of mean H) / 2``."""
        w, v = np.linalg.eigh(self.mean_H(groups))
        top = np.argsort(w)[::-1][: self.r]
        return -0.5 * float(np.sum(w[top])), v[:, top]

    def reference_value(self, groups=None):
        return self.reference_optimum(groups)[0], True


def kpca_value(prob: KpcaProblem, x, sample_indices):
    return prob.loss(x, sample_indices)


def kpca_euclid_grad(prob: KpcaProblem, x, sample_indices):
    return prob.loss_grad(x, sample_indices)


def kpca_reference_optimum(prob: KpcaProblem, groups=None):
    return prob.reference_optimum(groups)


def synthetic_kpca_samples(n_samples, p, seed=0, decay=0.6):
    """Gaussian samples with a geometrically decaying, randomly rotated spectrum."""
    gen = RngStream(seed, (7,)).generator()
    scales = decay ** np.arange(p)
    q, _ = np.linalg.qr(gen.standard_normal((p, p)))
    return (gen.standard_normal((n_samples, p)) * scales) @ q.T


def synthetic_kpca(n_samples, p, r, seed=0, decay=0.6) -> KpcaProblem:
    return KpcaProblem.from_samples(synthetic_kpca_samples(n_samples, p, seed, decay), r)
