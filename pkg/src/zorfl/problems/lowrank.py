"""Fixed-rank matrix regression.

Each sample is a pair ``(A_s, b_s)`` with ``b_s = <A_s, X_true> + noise`` and
the loss is the mean squared residual ``mean_s (<A_s, x> - b_s)^2`` over
``x`` of rank ``R``.
"""

from __future__ import annotations

import numpy as np

from ..linalg import RngStream
from ..manifolds import FixedRank
from .base import Problem


class FixedRankRegressionProblem(Problem):
    def __init__(self, A, b, rank, gamma=0.5, truth=None, noise=0.0):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64).reshape(-1)
        if self.A.ndim != 3 or self.A.shape[0] != self.b.size:
            raise ValueError("A must be (N, p, r) with one target per sample")
        self.n_samples, self.p, self.r = self.A.shape
        self.manifold = FixedRank(self.p, self.r, rank, gamma)
        self.truth = truth
        self.noise = float(noise)
        self._flat = self.A.reshape(self.n_samples, -1)

    @classmethod
    def synthetic(cls, n_samples, p, r, rank, noise=0.0, gamma=0.5, seed=0):
        gen = RngStream(seed, (13,)).generator()
        L = gen.standard_normal((p, rank))
        Rt = gen.standard_normal((rank, r))
        truth = L @ Rt
        truth *= np.sqrt(rank) / np.linalg.norm(truth)
        A = gen.standard_normal((n_samples, p, r))
        b = np.einsum("nij,ij->n", A, truth) + noise * gen.standard_normal(n_samples)
        return cls(A, b, rank, gamma=gamma, truth=truth, noise=noise)

    def residuals(self, x, indices):
        idx = np.asarray(indices)
        return self._flat[idx] @ np.asarray(x).reshape(-1) - self.b[idx]

    def loss(self, x, indices):
        idx = np.asarray(indices)
        if idx.size == 0:
            raise IndexError("empty index set")
        res = self.residuals(x, idx)
        return float(np.mean(res * res))

    def loss_grad(self, x, indices):
        idx = np.asarray(indices)
        res = self.residuals(x, idx)
        return (2.0 / idx.size) * (res @ self._flat[idx]).reshape(self.p, self.r)

    def compile(self, indices):
        idx = np.asarray(indices)
        F, t = self._flat[idx], self.b[idx]

        def value(x):
            res = F @ x.reshape(-1) - t
            return float(np.mean(res * res))

        def grad(x):
            res = F @ x.reshape(-1) - t
            return (2.0 / idx.size) * (res @ F).reshape(self.p, self.r)

        def value_batch(xs):
            res = np.asarray(xs).reshape(len(xs), -1) @ F.T - t
            return np.mean(res * res, axis=1)

        return value, grad, value_batch

    def reference_value(self, groups=None):
        if self.noise == 0.0 and self.truth is not None:
            return 0.0, True
        return 0.0, False

    def initial_point(self, stream):
        # start near the truth-free regime but inside the rank-R stratum
        gen = stream.generator()
        R = self.manifold.rank
        x = gen.standard_normal((self.p, R)) @ gen.standard_normal((R, self.r))
        return self.manifold.project(x * (np.sqrt(R) / np.linalg.norm(x)))


def lowrank_value(prob, x, sample_indices):
    return prob.loss(x, sample_indices)


def lowrank_euclid_grad(prob, x, sample_indices):
    return prob.loss_grad(x, sample_indices)
