"""Built-in invariant checks run by ``zorfl selftest``.

Each check is a zero-argument callable registered under a name; it raises
``AssertionError`` (or any exception) on failure.  Checks are small so the
whole suite runs in a few seconds.
"""

from __future__ import annotations

import traceback

import numpy as np

from .estimators import ConstantOracle, CountingOracle, SmoothingConfig, estimate_grad, sphere_smoothing_identity
from .fedsim import RunConfig, closed_form_corrections, run_centralized_zo, run_federated, trace_csv_text
from .linalg import TOL_MEMBERSHIP, RngStream, fro, inner
from .manifolds import Oblique, Sphere, Stiefel
from .problems import synthetic_kpca

CHECKS: dict = {}


def check(name):
    def register(fn):
        CHECKS[name] = fn
        return fn

    return register


def _manifolds():
    return [Sphere(5, 2), Oblique(5, 3), Stiefel(6, 3)]


def _in_tube_pairs(m, n, gen):
    for _ in range(n):
        x = m.project(gen.standard_normal(m.shape))
        a = x + 0.4 * m.gamma * gen.uniform() * _unit(gen.standard_normal(m.shape))
        y = m.project(gen.standard_normal(m.shape))
        b = y + 0.4 * m.gamma * gen.uniform() * _unit(gen.standard_normal(m.shape))
        yield a, b


def _unit(a):
    return a / fro(a)


@check("projection_idempotent")
def _projection_idempotent():
    gen = RngStream(1, (0,)).generator()
    for m in _manifolds():
        for _ in range(20):
            x = m.project(gen.standard_normal(m.shape))
            assert m.check_membership(x) <= TOL_MEMBERSHIP
            assert fro(m.project(x) - x) <= 1e-12


@check("projection_non_expansive_in_tube")
def _non_expansive():
    gen = RngStream(1, (1,)).generator()
    for m in _manifolds():
        for a, b in _in_tube_pairs(m, 100, gen):
            assert fro(m.project(a) - m.project(b)) <= 2.0 * fro(a - b) + 1e-12


@check("projection_residual_normal")
def _normal_residual():
    gen = RngStream(1, (2,)).generator()
    for m in _manifolds():
        for _ in range(20):
            a = m.project(gen.standard_normal(m.shape)) + 0.3 * m.gamma * _unit(gen.standard_normal(m.shape))
            x = m.project(a)
            res = a - x
            assert fro(m.tangent_project(x, res)) <= 1e-8 * max(1.0, fro(res))


@check("tangent_projection_idempotent")
def _tangent_idempotent():
    gen = RngStream(1, (3,)).generator()
    for m in _manifolds():
        x = m.project(gen.standard_normal(m.shape))
        v = m.tangent_project(x, gen.standard_normal(m.shape))
        assert fro(m.tangent_project(x, v) - v) <= 1e-12 * max(1.0, fro(v))


@check("sphere_smoothing_identity")
def _isotropy():
    g = RngStream(1, (4,)).generator().standard_normal((3, 2))
    _, err = sphere_smoothing_identity(g, 200_000, RngStream(1, (5,)))
    assert err <= 0.03, err


@check("constant_oracle_zero_estimate")
def _constant_zero():
    m = Stiefel(4, 2)
    x = m.project(np.eye(4, 2))
    for variant in ("projection", "retraction"):
        g = estimate_grad(m, x, ConstantOracle(3.0), SmoothingConfig(1e-3, 4, variant), RngStream(0, (1,)))
        assert not np.any(g)


def _small_run(n, tau, seed=0, rounds=6, threads=1, **kw):
    prob = synthetic_kpca(24, 5, 2, seed=3)
    cfg = RunConfig(n_clients=n, rounds=rounds, local_steps=tau, eta=0.02, smoothing=SmoothingConfig(1e-3, 2), master_seed=seed, record_wall_time=False, **kw)
    return prob, cfg, run_federated(cfg, prob, threads=threads)


@check("correction_sum_zero")
def _correction_sum():
    prob = synthetic_kpca(24, 5, 2, seed=3)
    cfg = RunConfig(n_clients=4, rounds=5, local_steps=3, eta=0.02, smoothing=SmoothingConfig(1e-3, 2), record_wall_time=False)
    sums = []

    def hook(k, x_k, x_next, clients):
        total = sum(c.correction for c in clients)
        scale = max(fro(g) for c in clients for g in c.history)
        sums.append(fro(total) / (len(clients) * max(scale, 1.0)))

    run_federated(cfg, prob, on_round=hook)
    assert max(sums) <= 1e-12, max(sums)


@check("correction_closed_form")
def _closed_form():
    prob = synthetic_kpca(24, 5, 2, seed=3)
    cfg = RunConfig(n_clients=3, rounds=5, local_steps=3, eta=0.02, smoothing=SmoothingConfig(1e-3, 2), record_wall_time=False)
    errs = []

    def hook(k, x_k, x_next, clients):
        closed = closed_form_corrections([c.history for c in clients])
        errs.append(max(fro(c.correction - cf) for c, cf in zip(clients, closed)))

    run_federated(cfg, prob, on_round=hook)
    assert max(errs) <= 1e-12, max(errs)


@check("single_client_matches_centralized")
def _single_client():
    prob = synthetic_kpca(24, 5, 2, seed=3)
    sm = SmoothingConfig(1e-3, 2)
    cfg = RunConfig(n_clients=1, rounds=8, local_steps=1, eta=0.05, eta_g=1.0, smoothing=sm, record_wall_time=False)
    fed = run_federated(cfg, prob)
    cen = run_centralized_zo(prob, sm, cfg.eta_tilde, 8, seed=0)
    assert fro(fed.x_final - cen.x_final) <= 1e-12


@check("oracle_call_accounting")
def _calls():
    _, cfg, res = _small_run(3, 2)
    assert res.oracle_calls == 2 * cfg.smoothing.m * cfg.local_steps * cfg.n_clients * cfg.rounds


@check("iterates_on_manifold")
def _hygiene():
    prob = synthetic_kpca(24, 5, 2, seed=3)
    cfg = RunConfig(n_clients=2, rounds=4, local_steps=3, eta=0.02, smoothing=SmoothingConfig(1e-3, 1), record_wall_time=False)
    worst = []
    run_federated(cfg, prob, on_round=lambda k, a, b, cl: worst.extend(prob.manifold.check_membership(c.z) for c in cl))
    assert max(worst) <= TOL_MEMBERSHIP


@check("determinism_across_threads")
def _determinism():
    _, _, a = _small_run(4, 2, threads=1)
    _, _, b = _small_run(4, 2, threads=4)
    _, _, c = _small_run(4, 2, threads=1)
    assert trace_csv_text(a.trace) == trace_csv_text(b.trace) == trace_csv_text(c.trace)


@check("estimator_counts_2m_calls")
def _estimator_calls():
    m = Sphere(4, 1)
    x = m.project(np.ones((4, 1)))
    o = CountingOracle(ConstantOracle(1.0))
    estimate_grad(m, x, o, SmoothingConfig(1e-3, 7), RngStream(0, (0,)))
    assert o.calls == 14


@check("metric_zero_at_optimum")
def _metric_zero():
    from .fedsim import gradient_mapping_sq

    prob = synthetic_kpca(24, 5, 2, seed=3)
    _, v = prob.reference_optimum()
    assert gradient_mapping_sq(prob, v, 0.1) <= 1e-10
    assert abs(inner(v, v) - 2.0) <= 1e-12


def run_checks(checks=None, out=print) -> tuple[int, int]:
    """Run every check, printing ``PASS name`` / ``FAIL name``; returns (passed, failed)."""
    checks = CHECKS if checks is None else checks
    passed = failed = 0
    for name, fn in checks.items():
        try:
            fn()
        except Exception as exc:  # a failing check must not stop the rest
            failed += 1
            where = traceback.extract_tb(exc.__traceback__)[-1]
            out(f"FAIL {name}: {type(exc).__name__}: {exc} ({where.filename}:{where.lineno})")
        else:
            passed += 1
            out(f"PASS {name}")
    out(f"{passed} passed, {failed} failed")
    return passed, failed
