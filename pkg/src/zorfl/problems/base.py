from __future__ import annotations

import numpy as np

from ..estimators import OracleBase


class Problem:
    """A finite-sum objective ``f(x) = mean_j loss_j(x)`` on a manifold.

    Subclasses implement :meth:`loss` and :meth:`loss_grad` over an index set;
    :meth:`compile` may precompute per-subset quantities.
    """

    manifold = None
    n_samples = 0

    def loss(self, x, indices) -> float:
        raise NotImplementedError

    def loss_grad(self, x, indices):
        raise NotImplementedError

    def compile(self, indices):
        """Return ``(value, grad, value_batch)`` callables for a fixed subset."""
        indices = np.asarray(indices)

        def value(x):
            return self.loss(x, indices)

        def grad(x):
            return self.loss_grad(x, indices)

        def value_batch(xs):
            return np.array([value(x) for x in xs])

        return value, grad, value_batch

    def partition_keys(self):
        """Per-sample sort key for sharded (non-IID) partitions."""
        return None

    def reference_value(self, groups=None):
        """``(f_star, exact)`` for the client-averaged objective over ``groups``."""
        return 0.0, False

    def initial_point(self, stream):
        return self.manifold.random_point(stream)

    def oracle(self, indices=None, batch_size=None):
        if indices is None:
            indices = np.arange(self.n_samples)
        return SubsetOracle(self, indices, batch_size)

    def describe(self) -> dict:
        return {"problem": type(self).__name__, "manifold": self.manifold.describe(), "n_samples": self.n_samples}


class SubsetOracle(OracleBase):
    """Zeroth-order oracle for one client's shard.

    The sample ``xi`` is a minibatch of shard positions drawn uniformly with
    replacement (``batch_size=None`` makes the oracle deterministic and
    evaluates the whole shard).
    """

    def __init__(self, problem: Problem, indices, batch_size=None):
        self.problem = problem
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indices.size == 0:
            raise ValueError("empty shard")
        if batch_size is not None and int(batch_size) < 1:
            raise ValueError("batch_size must be positive")
        self.batch_size = None if batch_size is None else int(batch_size)
        self._value, self._grad, self._value_batch = problem.compile(self.indices)

    def draw(self, stream):
        if self.batch_size is None:
            return None
        return self.indices[stream.generator().integers(0, self.indices.size, size=self.batch_size)]

    def value(self, x, xi):
        if xi is None:
            return float(self._value(x))
        return float(self.problem.loss(x, xi))

    def draw_batch(self, stream, n):
        if self.batch_size is None:
            return None
        pos = stream.generator().integers(0, self.indices.size, size=(n, self.batch_size))
        return self.indices[pos]

    def value_batch(self, xs, xis):
        if xis is None:
            return np.asarray(self._value_batch(np.asarray(xs)), dtype=np.float64)
        return np.array([self.problem.loss(x, xi) for x, xi in zip(xs, xis)])

    def exact_euclid_grad(self, x):
        return self._grad(x)


class GlobalObjective:
    """Client-averaged objective ``f = (1/n) sum_i f_i`` with exact derivatives.

    Used for metrics only.
    """

    def __init__(self, problem: Problem, groups):
        self.problem = problem
        self.manifold = problem.manifold
        self.groups = [np.asarray(g, dtype=np.int64) for g in groups]
        self._parts = [problem.compile(g) for g in self.groups]
        self.f_star, self.f_star_exact = problem.reference_value(self.groups)

    def value(self, x) -> float:
        return float(sum(v(x) for v, _, _ in self._parts) / len(self._parts))

    def euclid_grad(self, x):
        g = np.zeros(self.manifold.shape)
        for _, gr, _ in self._parts:
            g += gr(x)
        return g / len(self._parts)

    def riemannian_grad(self, x):
        return self.manifold.riemannian_gradient(x, self.euclid_grad(x))
