"""Embedded matrix manifolds with metric projection.

Each manifold exposes the nearest-point projection, the orthogonal projection
onto tangent spaces, Riemannian gradients (tangent projection of the
Euclidean gradient), a retraction used only by the tangent-space baseline
estimator, and a membership residual.  ``gamma`` is the tube radius: the set is
assumed ``2*gamma``-proximally smooth, so projection is unique and Lipschitz on
``{a : dist(a, M) <= gamma}``.

``project`` and ``retract`` accept stacks ``(..., p, r)``; tangent projection
accepts a single base point with a stack of directions.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DegenerateProjection, MembershipViolation, NonTangentDirection
from .linalg import TOL_MEMBERSHIP, TOL_SVD, TOL_TANGENT, fro, inner, sym, thin_svd

DEFAULT_GAMMA = 0.5


class Manifold:
    name = "manifold"

    def __init__(self, p: int, r: int, gamma: float = DEFAULT_GAMMA):
        if p < 1 or r < 1:
            raise ValueError("dimensions must be positive")
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        self.p = int(p)
        self.r = int(r)
        self.gamma = float(gamma)

    @property
    def shape(self):
        return (self.p, self.r)

    @property
    def ambient_dim(self) -> int:
        return self.p * self.r

    def __repr__(self):
        return f"{type(self).__name__}({self.p}, {self.r})"

    def describe(self) -> str:
        return repr(self)

    def __eq__(self, other):
        return type(self) is type(other) and self.describe() == other.describe()

    def __hash__(self):
        return hash(self.describe())

    # subclasses implement these
    def project(self, a):
        raise NotImplementedError

    def _tangent(self, x, v):
        raise NotImplementedError

    def check_membership(self, a) -> float:
        raise NotImplementedError

    def _retract(self, x, s):
        return self.project(x + s)

    def _check_shape(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-2:] != self.shape:
            raise ValueError(f"{self!r}: expected trailing shape {self.shape}, got {a.shape}")
        return a

    def require_point(self, x):
        x = self._check_shape(x)
        res = self.check_membership(x)
        if res > TOL_MEMBERSHIP:
            raise MembershipViolation(f"{self!r}: point off manifold (residual {res:.3e})")
        return x

    def tangent_project(self, x, v):
        """Orthogonal projection of ``v`` onto the tangent space at ``x``."""
        x = self.require_point(x)
        v = self._check_shape(v)
        return self._tangent(x, v)

    def riemannian_gradient(self, x, euclid_grad):
        return self.tangent_project(x, euclid_grad)

    def retract(self, x, s):
        """Retraction ``Retr_x(s)`` for tangent ``s`` (polar form on Stiefel).

        ``retract(x, 0)`` returns ``x`` exactly.
        """
        x = self.require_point(x)
        s = self._check_shape(s)
        resid = fro(self._tangent(x, s) - s)
        if np.any(resid > TOL_TANGENT * np.maximum(1.0, fro(s))):
            raise NonTangentDirection(f"{self!r}: direction is not tangent (residual {np.max(resid):.3e})")
        if not np.any(s):
            return np.broadcast_to(x, s.shape).copy()
        return self._retract(x, s)

    retract_polar = retract

    def dist(self, a) -> float:
        """Euclidean distance from ``a`` to the manifold."""
        a = self._check_shape(a)
        return fro(a - self.project(a))

    def in_tube(self, a) -> bool:
        return bool(self.dist(a) <= self.gamma)

    def random_point(self, stream):
        return self.project(stream.generator().standard_normal(self.shape))

    def random_tangent(self, x, stream):
        return self.tangent_project(x, stream.generator().standard_normal(self.shape))


class Sphere(Manifold):
    """Unit Frobenius sphere in R^{p x r}."""

    name = "sphere"

    def __init__(self, p: int, r: int = 1, gamma: float = DEFAULT_GAMMA):
        super().__init__(p, r, gamma)

    def project(self, a):
        a = self._check_shape(a)
        n = fro(a)
        if np.any(n <= TOL_SVD):
            raise DegenerateProjection("sphere: cannot project the zero matrix")
        return a / n[..., None, None]

    def _tangent(self, x, v):
        return v - inner(v, x)[..., None, None] * x

    def check_membership(self, a) -> float:
        return float(abs(fro(self._check_shape(a)) - 1.0))


class Oblique(Manifold):
    """Matrices with unit-norm columns."""

    name = "oblique"

    def project(self, a):
        a = self._check_shape(a)
        n = np.linalg.norm(a, axis=-2, keepdims=True)
        if np.any(n <= TOL_SVD):
            raise DegenerateProjection("oblique: a column has zero norm")
        return a / n

    def _tangent(self, x, v):
        return v - np.sum(x * v, axis=-2, keepdims=True) * x

    def check_membership(self, a) -> float:
        a = self._check_shape(a)
        return float(np.max(np.abs(np.linalg.norm(a, axis=-2) - 1.0)))


class Stiefel(Manifold):
    """Orthonormal p x r frames, ``x^T x = I_r``."""

    name = "stiefel"

    def __init__(self, p: int, r: int, gamma: float = DEFAULT_GAMMA):
        if p < r:
            raise ValueError("Stiefel(p, r) needs p >= r")
        super().__init__(p, r, gamma)

    def project(self, a):
        # polar factor u v^T; stable near the tube boundary
        a = self._check_shape(a)
        u, s, v = thin_svd(a)
        if np.any(s[..., -1] <= TOL_SVD * np.maximum(1.0, s[..., 0])):
            raise DegenerateProjection("stiefel: input is rank deficient")
        return u @ np.swapaxes(v, -1, -2)

    def _tangent(self, x, v):
        return v - x @ sym(x.T @ v)

    def check_membership(self, a) -> float:
        a = self._check_shape(a)
        return float(np.linalg.norm(a.T @ a - np.eye(self.r)))

    def _retract(self, x, s):
        # (x + s)(I + s^T s)^{-1/2}
        w, q = np.linalg.eigh(np.eye(self.r) + np.swapaxes(s, -1, -2) @ s)
        inv_sqrt = (q / np.sqrt(w)[..., None, :]) @ np.swapaxes(q, -1, -2)
        return (x + s) @ inv_sqrt


class FixedRank(Manifold):
    """p x r matrices of rank exactly ``rank``.

    Not compact, so there is no intrinsic tube radius; ``gamma`` must be given.
    """

    name = "fixedrank"

    def __init__(self, p: int, r: int, rank: int, gamma: float):
        if not 1 <= rank <= min(p, r):
            raise ValueError("need 1 <= rank <= min(p, r)")
        super().__init__(p, r, gamma)
        self.rank = int(rank)
        warnings.warn(
            "FixedRank is non-compact; gamma is user supplied and guarantees are heuristic",
            UserWarning,
            stacklevel=2,
        )

    def __repr__(self):
        return f"FixedRank({self.p}, {self.r}, rank={self.rank}, gamma={self.gamma})"

    def project(self, a):
        a = self._check_shape(a)
        u, s, v = thin_svd(a)
        R = self.rank
        scale = np.maximum(1.0, s[..., 0])
        if np.any(s[..., R - 1] <= TOL_SVD * scale):
            raise DegenerateProjection(f"fixedrank: fewer than {R} nonzero singular values")
        if R < s.shape[-1] and np.any(s[..., R - 1] - s[..., R] <= TOL_SVD * scale):
            raise DegenerateProjection(f"fixedrank: tie at singular value {R}; projection not unique")
        return (u[..., :, :R] * s[..., None, :R]) @ np.swapaxes(v[..., :, :R], -1, -2)

    def factors(self, x):
        u, s, v = thin_svd(x)
        return u[:, : self.rank], v[:, : self.rank]

    def _tangent(self, x, v):
        U, V = self.factors(x)
        uu = U @ U.T
        vv = V @ V.T
        uv = uu @ v
        return uv + v @ vv - uv @ vv

    def check_membership(self, a) -> float:
        a = self._check_shape(a)
        s = np.linalg.svd(a, compute_uv=False)
        if s[0] == 0.0:
            return 1.0
        if self.rank >= s.size:
            return 0.0
        return float(s[self.rank] / s[0])


def make_manifold(kind: str, p: int, r: int, rank=None, gamma=None) -> Manifold:
    kind = kind.lower()
    if kind == "sphere":
        return Sphere(p, r)
    if kind == "stiefel":
        return Stiefel(p, r)
    if kind == "oblique":
        return Oblique(p, r)
    if kind == "fixedrank":
        if rank is None or gamma is None:
            raise ValueError("fixedrank needs rank and gamma")
        return FixedRank(p, r, rank, gamma)
    raise ValueError(f"unknown manifold kind {kind!r}")
