"""Zeroth-order Riemannian gradient estimators.

Two constructions are provided:

* the projection estimator, which perturbs in the ambient space with a
  direction drawn uniformly from the unit sphere of R^{p x r} and maps the
  perturbed point back with the metric projection::

      G = (p r / m) * sum_j [F(P(x + mu u_j), xi_j) - F(x, xi_j)] / mu * u_j

* the retraction baseline, which perturbs along Gaussian tangent directions
  and uses a retraction::

      G = (1 / m) * sum_j [F(Retr_x(mu u_j), xi_j) - F(x, xi_j)] / mu * u_j

Both use a single sample ``xi_j`` for the paired difference, so each call
costs exactly ``2 m`` oracle evaluations.  Sample ``j`` draws its direction
from ``stream.spawn(j).spawn(0)`` and its oracle sample from
``stream.spawn(j).spawn(1)``.

The projection estimate is not tangent; callers must not assume it is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import MissingExactGradient, SmoothingOutOfTube
from .linalg import RngStream, fro, inner, sample_gaussian, sample_unit_sphere

PROJECTION = "projection"
RETRACTION = "retraction"
VARIANTS = (PROJECTION, RETRACTION)

_BATCH_CHUNK = 50_000


@dataclass(frozen=True)
class SmoothingConfig:
    mu: float
    m: int = 1
    variant: str = PROJECTION

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if int(self.m) < 1:
            raise ValueError("m must be a positive integer")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "mu", float(self.mu))


def default_mu(p, r, n_clients=1, local_steps=1, rounds=1) -> float:
    return min(1e-4, 1.0 / (p * r * n_clients * local_steps * max(rounds, 1)))


class FunctionOracle(Protocol):
    """Stochastic zeroth-order oracle ``F(x, xi)``.

    ``draw(stream)`` materialises the sample ``xi`` for a stream and
    ``value(x, xi)`` evaluates ``F``; ``evaluate(x, stream)`` is the composition.
    Implementations may additionally offer ``draw_batch(stream, n)`` /
    ``value_batch(xs, xis)`` for vectorised diagnostics and
    ``exact_euclid_grad(x)`` (never used on optimisation paths).
    """

    def draw(self, stream: RngStream): ...

    def value(self, x: np.ndarray, xi) -> float: ...

    def evaluate(self, x: np.ndarray, stream: RngStream) -> float: ...


class OracleBase:
    """Mixin providing ``evaluate`` and batch fallbacks on top of draw/value."""

    def draw(self, stream):
        return None

    def evaluate(self, x, stream):
        return self.value(x, self.draw(stream))

    def draw_batch(self, stream, n):
        xis = [self.draw(stream.spawn(i)) for i in range(n)]
        return None if all(xi is None for xi in xis) else xis

    def value_batch(self, xs, xis):
        xs = np.asarray(xs)
        if xis is None:
            return np.array([self.value(x, None) for x in xs])
        return np.array([self.value(x, xi) for x, xi in zip(xs, xis)])


class ConstantOracle(OracleBase):
    def __init__(self, c=0.0, shape=None):
        self.c = float(c)
        self.shape = shape

    def value(self, x, xi):
        return self.c

    def value_batch(self, xs, xis):
        return np.full(np.shape(xs)[0], self.c)

    def exact_euclid_grad(self, x):
        return np.zeros_like(x)


class LinearOracle(OracleBase):
    """Deterministic ``F(x) = <c, x>``."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=np.float64)

    def value(self, x, xi):
        return float(inner(self.c, x))

    def value_batch(self, xs, xis):
        return inner(self.c, np.asarray(xs))

    def exact_euclid_grad(self, x):
        return self.c.copy()


class NoisyOracle(OracleBase):
    """Adds unbiased gradient noise: ``F(x, xi) = F0(x, xi0) + <e, x>``.

    ``e`` has i.i.d. N(0, sigma^2 / (p r)) entries, so the Euclidean gradient
    noise has ``E||e||^2 = sigma^2``.  A purely additive constant would cancel
    in the paired difference, hence the linear form.
    """

    def __init__(self, base, sigma: float, shape):
        self.base = base
        self.sigma = float(sigma)
        self.shape = tuple(shape)
        self._scale = self.sigma / np.sqrt(self.shape[0] * self.shape[1])

    def draw(self, stream):
        e = self._scale * stream.spawn(1).generator().standard_normal(self.shape)
        return (self.base.draw(stream.spawn(0)), e)

    def value(self, x, xi):
        bxi, e = xi
        return self.base.value(x, bxi) + float(inner(e, x))

    def draw_batch(self, stream, n):
        e = self._scale * stream.spawn(1).generator().standard_normal((n,) + self.shape)
        return (self.base.draw_batch(stream.spawn(0), n), e)

    def value_batch(self, xs, xis):
        bxis, e = xis
        return self.base.value_batch(xs, bxis) + inner(e, np.asarray(xs))

    def exact_euclid_grad(self, x):
        return self.base.exact_euclid_grad(x)


class CountingOracle(OracleBase):
    """Counts ``value`` calls of a wrapped oracle (one counter per owner)."""

    def __init__(self, inner_oracle):
        self.inner = inner_oracle
        self.calls = 0

    def draw(self, stream):
        return self.inner.draw(stream)

    def value(self, x, xi):
        self.calls += 1
        return self.inner.value(x, xi)

    def exact_euclid_grad(self, x):
        return exact_gradient(self.inner, x)


def exact_gradient(oracle, x):
    fn = getattr(oracle, "exact_euclid_grad", None)
    if fn is None:
        raise MissingExactGradient(f"{type(oracle).__name__} has no exact gradient")
    return fn(x)


def projection_estimate(manifold, x, oracle, mu, directions, samples):
    """Projection estimator for explicitly supplied directions and samples."""
    m = len(directions)
    scale = manifold.ambient_dim / m
    g = np.zeros(manifold.shape)
    for u, xi in zip(directions, samples):
        diff = oracle.value(manifold.project(x + mu * u), xi) - oracle.value(x, xi)
        g += (diff / mu) * u
    return scale * g


def retraction_estimate(manifold, x, oracle, mu, directions, samples):
    """Retraction baseline for explicitly supplied tangent directions."""
    m = len(directions)
    g = np.zeros(manifold.shape)
    for u, xi in zip(directions, samples):
        diff = oracle.value(manifold.retract(x, mu * u), xi) - oracle.value(x, xi)
        g += (diff / mu) * u
    return g / m


def _check_tube(manifold, cfg):
    if cfg.mu > manifold.gamma:
        raise SmoothingOutOfTube(f"mu={cfg.mu} exceeds the tube radius gamma={manifold.gamma}")


def estimate_grad_projection(manifold, x, oracle, cfg: SmoothingConfig, stream: RngStream):
    _check_tube(manifold, cfg)
    x = manifold.require_point(x)
    p, r = manifold.shape
    dirs, xis = [], []
    for j in range(cfg.m):
        sj = stream.spawn(j)
        dirs.append(sample_unit_sphere(sj.spawn(0), p, r))
        xis.append(oracle.draw(sj.spawn(1)))
    return projection_estimate(manifold, x, oracle, cfg.mu, dirs, xis)


def estimate_grad_retraction(manifold, x, oracle, cfg: SmoothingConfig, stream: RngStream):
    x = manifold.require_point(x)
    p, r = manifold.shape
    dirs, xis = [], []
    for j in range(cfg.m):
        sj = stream.spawn(j)
        dirs.append(manifold._tangent(x, sample_gaussian(sj.spawn(0), p, r)))
        xis.append(oracle.draw(sj.spawn(1)))
    return retraction_estimate(manifold, x, oracle, cfg.mu, dirs, xis)


def estimate_grad(manifold, x, oracle, cfg: SmoothingConfig, stream: RngStream):
    if cfg.variant == PROJECTION:
        return estimate_grad_projection(manifold, x, oracle, cfg, stream)
    return estimate_grad_retraction(manifold, x, oracle, cfg, stream)


# -- vectorised diagnostics ---------------------------------------------------


def _single_terms(manifold, x, oracle, mu, n, stream, variant):
    """Directions ``u`` and scalar weights ``w`` with single estimates ``w * u``."""
    x = manifold.require_point(x)
    p, r = manifold.shape
    if variant == PROJECTION:
        u = sample_unit_sphere(stream.spawn(0), p, r, size=n)
        pts = manifold.project(x + mu * u)
        scale = manifold.ambient_dim
    elif variant == RETRACTION:
        u = manifold._tangent(x, sample_gaussian(stream.spawn(0), p, r, size=n))
        pts = manifold.retract(x, mu * u)
        scale = 1.0
    else:
        raise ValueError(f"unknown variant {variant!r}")
    xis = oracle.draw_batch(stream.spawn(1), n)
    f_pert = oracle.value_batch(pts, xis)
    f_base = oracle.value_batch(np.broadcast_to(x, pts.shape), xis)
    return u, scale * (f_pert - f_base) / mu, scale


def single_sample_estimates(manifold, x, oracle, mu, n, stream, variant=PROJECTION):
    """``n`` independent single-sample (m=1) estimates stacked as ``(n, p, r)``.

    Draws all directions from one generator so Monte-Carlo probes with 1e6
    samples stay cheap; the distribution matches :func:`estimate_grad`.
    """
    u, w, _ = _single_terms(manifold, x, oracle, mu, n, stream, variant)
    return w[:, None, None] * u


def _chunks(n, size=_BATCH_CHUNK):
    start = 0
    while start < n:
        yield start, min(size, n - start)
        start += size


def mean_single_estimate(manifold, x, oracle, mu, n, stream, variant=PROJECTION, control=None):
    """Monte-Carlo mean of ``n`` single estimates.

    With ``control`` (a tangent vector ``g``) each term ``w u`` is replaced by
    ``(w - s <g, u>) u`` and ``g`` is added back.  ``E[s <g, u> u] = g`` holds
    exactly for both direction laws, so the mean is unchanged while the
    first-order part of the variance cancels.
    """
    total = np.zeros(manifold.shape)
    for c, (start, k) in enumerate(_chunks(n)):
        u, w, scale = _single_terms(manifold, x, oracle, mu, k, stream.spawn(c), variant)
        if control is not None:
            w = w - scale * inner(control, u)
        total += np.einsum("n,nij->ij", w, u)
    out = total / n
    return out if control is None else out + control


def probe_bias(manifold, x, oracle, mus, n_samples, stream, variant=PROJECTION, control_variate=True):
    """``[(mu, ||E G_mu(x) - grad f(x)||), ...]`` by Monte Carlo.

    Every ``mu`` reuses the same direction/sample draws (common random numbers).
    The control variate removes the ``O(1/sqrt(n))`` noise floor that otherwise
    swamps the bias at small ``mu``.
    """
    grad = manifold.riemannian_gradient(x, exact_gradient(oracle, x))
    out = []
    for mu in mus:
        est = mean_single_estimate(manifold, x, oracle, mu, n_samples, stream, variant, grad if control_variate else None)
        out.append((float(mu), float(fro(est - grad))))
    return out


def probe_variance(manifold, x, oracle, cfg: SmoothingConfig, n_repeats, stream):
    """Empirical ``E||G - grad f(x)||^2`` over ``n_repeats`` estimator draws."""
    grad = manifold.riemannian_gradient(x, exact_gradient(oracle, x))
    per_chunk = max(1, _BATCH_CHUNK // cfg.m)
    sq = 0.0
    for c, (start, k) in enumerate(_chunks(n_repeats, per_chunk)):
        singles = single_sample_estimates(manifold, x, oracle, cfg.mu, k * cfg.m, stream.spawn(c), cfg.variant)
        g = singles.reshape((k, cfg.m) + manifold.shape).mean(axis=1)
        sq += float(np.sum(inner(g - grad, g - grad)))
    return sq / n_repeats


def sphere_smoothing_identity(g, n_draws, stream):
    """Monte-Carlo ``p r * E[<g, u> u]`` for ``u`` uniform on the unit sphere.

    Returns ``(estimate, relative_error)``.
    """
    g = np.asarray(g, dtype=np.float64)
    p, r = g.shape
    total = np.zeros_like(g)
    for c, (start, k) in enumerate(_chunks(n_draws)):
        u = sample_unit_sphere(stream.spawn(c), p, r, size=k)
        total += np.sum(inner(g, u)[:, None, None] * u, axis=0)
    est = p * r * total / n_draws
    return est, float(fro(est - g) / fro(g))


def loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    return float(np.polyfit(lx, ly, 1)[0])
