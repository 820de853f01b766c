import warnings

import numpy as np
import pytest

from zorfl.errors import SmoothingOutOfTube, TubeEscape
from zorfl.estimators import SmoothingConfig
from zorfl.fedsim import (
    TRACE_HEADER,
    ClientState,
    RunConfig,
    ServerState,
    StepSizeWarning,
    client_local_round,
    closed_form_corrections,
    correction_update,
    descent_lemma_check,
    estimate_constants,
    estimate_smoothness,
    gradient_mapping_sq,
    read_trace_csv,
    run_centralized_rgd,
    run_centralized_zo,
    run_federated,
    server_aggregate,
    step_size_guard,
    trace_csv_text,
    write_metadata,
    write_trace_csv,
)
from zorfl.linalg import RngStream, fro
from zorfl.manifolds import Sphere
from zorfl.problems import KpcaProblem, synthetic_kpca
from zorfl.problems.base import GlobalObjective
from zorfl.problems.data import Partition, PartitionScheme

SM = SmoothingConfig(1e-3, 2)


def _col(*v):
    return np.array(v, dtype=float).reshape(-1, 1)


class _Scripted:
    """Estimator stand-in returning fixed values and recording where it was called."""

    def __init__(self, values):
        self.values = list(values)
        self.points = []

    def __call__(self, manifold, x, oracle, cfg, stream):
        self.points.append(x.copy())
        return self.values[len(self.points) - 1]


# -- client step --------------------------------------------------------------


def test_null_update():
    m = Sphere(2)
    x = _col(0.9, 0.2)
    cfg = RunConfig(n_clients=1, local_steps=1, eta=0.1, smoothing=SM)
    out = client_local_round(ClientState(0, np.zeros((2, 1))), x, m, None, cfg, RngStream(0), _Scripted([np.zeros((2, 1))]))
    assert np.array_equal(out.z_hat, m.project(x))
    assert np.array_equal(out.z, m.project(x))


def test_two_step_hand_trace():
    m = Sphere(2)
    cfg = RunConfig(n_clients=1, local_steps=2, eta=0.5, smoothing=SM)
    est = _Scripted([_col(0.0, 1.0), _col(1.0, 1.0)])
    c = _col(0.1, 0.0)
    out = client_local_round(ClientState(0, c), _col(2.0, 0.0), m, None, cfg, RngStream(0), est)
    # z_hat1 = (1,0) - 0.5 (0.1, 1) = (0.95, -0.5); z1 its normalisation
    zh1 = np.array([0.95, -0.5])
    z1 = zh1 / np.hypot(*zh1)
    zh2 = zh1 - 0.5 * np.array([1.1, 1.0])
    assert np.allclose(est.points[0].ravel(), [1.0, 0.0], atol=1e-15)
    assert np.allclose(est.points[1].ravel(), z1, atol=1e-15)
    assert np.allclose(out.z_hat.ravel(), zh2, atol=1e-15)
    assert np.allclose(out.z.ravel(), zh2 / np.hypot(*zh2), atol=1e-15)
    assert len(out.history) == 2


def test_shared_streams_identical_clients():
    prob = synthetic_kpca(20, 4, 1)
    idx = np.arange(20)
    cfg = RunConfig(n_clients=3, local_steps=3, eta=0.02, smoothing=SM)
    x = prob.initial_point(RngStream(0))
    outs = [client_local_round(ClientState(i, np.zeros((4, 1))), x, prob.manifold, prob.oracle(idx), cfg, RngStream(0, (0, 1))) for i in range(3)]
    for o in outs[1:]:
        assert np.array_equal(o.z_hat, outs[0].z_hat)


def test_smoothing_outside_tube_rejected():
    m = Sphere(3, gamma=0.1)
    cfg = RunConfig(n_clients=1, smoothing=SmoothingConfig(0.2, 1))
    with pytest.raises(SmoothingOutOfTube):
        client_local_round(ClientState(0, np.zeros((3, 1))), _col(1, 0, 0), m, None, cfg, RngStream(0))


# -- server -------------------------------------------------------------------


def test_aggregate_convex_step():
    m = Sphere(2)
    zs = [_col(0.9, 0.1), _col(1.0, -0.3)]
    out = server_aggregate(ServerState(_col(1.0, 0.0)), zs, 1.0, m)
    assert np.allclose(out.x, (zs[0] + zs[1]) / 2, atol=1e-15)
    assert out.round == 2


def test_aggregate_fixed_point():
    m = Sphere(2)
    x = _col(3.0, 4.0)
    px = m.project(x)
    out = server_aggregate(ServerState(x), [px, px, px], 1.7, m)
    assert np.allclose(out.x, px, atol=1e-15)


def test_aggregate_sqrt2():
    m = Sphere(2)
    out = server_aggregate(ServerState(_col(1.0, 0.0)), [_col(0.95, 0.1), _col(0.95, 0.0)], np.sqrt(2), m)
    # (1,0) + sqrt2 * ((0.95, 0.05) - (1, 0))
    assert np.allclose(out.x.ravel(), [1 - 0.05 * np.sqrt(2), 0.05 * np.sqrt(2)], atol=1e-15)


def test_aggregate_shape_mismatch():
    with pytest.raises(ValueError):
        server_aggregate(ServerState(_col(1.0, 0.0)), [_col(1.0, 0.0, 0.0)], 1.0, Sphere(2))


def test_aggregate_tube_escape():
    with pytest.raises(TubeEscape):
        server_aggregate(ServerState(_col(1.0, 0.0)), [_col(3.0, 0.0)], 1.0, Sphere(2))


# -- corrections --------------------------------------------------------------


def test_correction_formula():
    m = Sphere(2)
    cfg = RunConfig(n_clients=2, local_steps=2, eta=0.1, eta_g=2.0)
    client = ClientState(0, np.zeros((2, 1)), history=[_col(1.0, 2.0), _col(3.0, 0.0)])
    c = correction_update(client, _col(2.0, 0.0), _col(0.9, 0.1), cfg, m)
    expect = (_col(1.0, 0.0) - _col(0.9, 0.1)) / 0.4 - _col(2.0, 1.0)
    assert np.allclose(c, expect, atol=1e-14)


def test_single_client_corrections_stay_zero():
    prob = synthetic_kpca(20, 5, 2)
    cfg = RunConfig(n_clients=1, rounds=6, local_steps=3, eta=0.02, smoothing=SM)
    seen = []
    run_federated(cfg, prob, on_round=lambda k, a, b, cl: seen.append(fro(cl[0].correction)))
    assert max(seen) <= 1e-12


def _closed_form_oracle(histories):
    # independent, loop-based recomputation
    n, tau = len(histories), len(histories[0])
    out = []
    for i in range(n):
        total = np.zeros_like(histories[0][0])
        for j in range(n):
            for t in range(tau):
                total += histories[j][t] / (n * tau)
        for t in range(tau):
            total -= histories[i][t] / tau
        out.append(total)
    return out


def test_closed_form_helper_against_loops():
    gen = np.random.default_rng(0)
    hist = [[gen.standard_normal((3, 2)) for _ in range(4)] for _ in range(3)]
    for a, b in zip(closed_form_corrections(hist), _closed_form_oracle(hist)):
        assert fro(a - b) <= 1e-14


@pytest.mark.parametrize("n,tau", [(2, 1), (3, 4), (5, 2)])
def test_corrections_conserved_and_closed_form(n, tau):
    prob = synthetic_kpca(30, 5, 2, seed=2)
    cfg = RunConfig(n_clients=n, rounds=5, local_steps=tau, eta=0.02, smoothing=SM)
    errs = []

    def hook(k, x_k, x_next, clients):
        scale = max(1.0, max(fro(g) for c in clients for g in c.history))
        errs.append(fro(sum(c.correction for c in clients)) / (n * scale))
        for c, cf in zip(clients, _closed_form_oracle([c.history for c in clients])):
            errs.append(fro(c.correction - cf))

    run_federated(cfg, prob, on_round=hook)
    assert max(errs) <= 1e-12


# -- drivers ------------------------------------------------------------------


def test_zero_rounds():
    prob = synthetic_kpca(10, 4, 2)
    res = run_federated(RunConfig(n_clients=2, rounds=0, smoothing=SM), prob)
    assert res.trace == []
    x1 = prob.initial_point(RngStream(0, (2**31, 0)))
    assert np.array_equal(res.x_final, prob.manifold.project(x1))


def test_homogeneous_collapse_to_centralized():
    prob = synthetic_kpca(24, 5, 2, seed=4)
    n, K = 4, 10
    part = Partition(PartitionScheme(), 24, [np.arange(24)] * n)
    cfg = RunConfig(n_clients=n, rounds=K, local_steps=1, eta=0.03, eta_g=1.0, smoothing=SM, shared_client_streams=True, record_wall_time=False)
    xs = []
    fed = run_federated(cfg, prob, partition=part, on_round=lambda k, a, b, cl: xs.append(prob.manifold.project(b)))
    ys = []
    cen_x = None
    for k in range(1, K + 1):
        cen = run_centralized_zo(prob, SM, cfg.eta * cfg.local_steps, k, record_wall_time=False)
        ys.append(cen.x_final)
        cen_x = cen.x_final
    assert max(fro(a - b) for a, b in zip(xs, ys)) <= 1e-12
    assert fro(fed.x_final - cen_x) <= 1e-12


def test_constant_oracle_centralized_fixed():
    prob = KpcaProblem(np.zeros((4, 5, 5)), 2)
    res = run_centralized_zo(prob, SM, 0.1, 20)
    x1 = prob.manifold.project(prob.initial_point(RngStream(0, (2**31, 0))))
    assert fro(res.x_final - x1) <= 1e-14


def test_centralized_from_optimum_stays_near():
    prob = synthetic_kpca(40, 5, 2, seed=1)
    _, x_star = prob.reference_optimum()
    res = run_centralized_zo(prob, SmoothingConfig(1e-4, 10), 0.01, 50, x0=x_star)
    assert res.trace[-1].f_gap <= 1e-3 * abs(res.f_star)
    assert len(res.estimator_ms) == len(res.projection_ms) == 50


def test_oracle_accounting():
    prob = synthetic_kpca(20, 4, 2)
    cfg = RunConfig(n_clients=3, rounds=4, local_steps=2, eta=0.01, smoothing=SmoothingConfig(1e-3, 5))
    res = run_federated(cfg, prob)
    assert res.oracle_calls == 2 * 5 * 2 * 3 * 4
    assert [r.oracle_calls for r in res.trace] == [0, 60, 120, 180, 240]


def test_metric_interval_and_final_record():
    prob = synthetic_kpca(20, 4, 2)
    cfg = RunConfig(n_clients=2, rounds=7, eta=0.01, smoothing=SM, metric_interval=3)
    res = run_federated(cfg, prob)
    assert [r.round for r in res.trace] == [1, 4, 7, 8]


def test_tube_escape_reports_round():
    prob = synthetic_kpca(20, 4, 2)
    cfg = RunConfig(n_clients=2, rounds=5, eta=500.0, smoothing=SM)
    with pytest.raises(TubeEscape, match="round 1"):
        run_federated(cfg, prob)


def test_partition_size_mismatch():
    prob = synthetic_kpca(20, 4, 2)
    part = Partition(PartitionScheme(), 20, [np.arange(20)])
    with pytest.raises(ValueError):
        run_federated(RunConfig(n_clients=2, smoothing=SM), prob, partition=part)


def test_determinism_across_threads():
    prob = synthetic_kpca(30, 5, 2)
    cfg = RunConfig(n_clients=5, rounds=6, local_steps=2, eta=0.02, smoothing=SM, record_wall_time=False)
    a = trace_csv_text(run_federated(cfg, prob, threads=1).trace)
    b = trace_csv_text(run_federated(cfg, prob, threads=8).trace)
    assert a == b


def test_federated_kpca_end_to_end():
    prob = synthetic_kpca(200, 10, 2, seed=0)
    cfg = RunConfig(n_clients=4, rounds=300, local_steps=5, eta=0.01, smoothing=SmoothingConfig(1e-4, 5), metric_interval=50)
    res = run_federated(cfg, prob)
    assert res.trace[-1].f_gap <= 0.1 * res.trace[0].f_gap
    assert prob.manifold.check_membership(res.x_final) <= 1e-10


# -- gradient mapping ---------------------------------------------------------


class _LinearSphere:
    def __init__(self, c):
        self.manifold = Sphere(len(c))
        self.c = _col(*c)
        self.f_star = -fro(self.c)

    def value(self, x):
        return float(np.sum(self.c * x))

    def riemannian_grad(self, x):
        return self.manifold.riemannian_gradient(x, self.c)


def test_gradient_mapping_sphere_closed_form():
    val = gradient_mapping_sq(_LinearSphere([0.0, 1.0]), _col(1.0, 0.0), 0.1)
    assert val == pytest.approx(200.0 * (1.0 - 1.0 / np.sqrt(1.01)), rel=1e-12)


def test_gradient_mapping_at_optimum():
    prob = synthetic_kpca(30, 6, 2)
    _, x_star = prob.reference_optimum()
    assert gradient_mapping_sq(prob, x_star, 0.1) <= 1e-10


def test_gradient_mapping_small_step_limit():
    prob = synthetic_kpca(30, 6, 2)
    x = prob.manifold.random_point(RngStream(3))
    g = GlobalObjective(prob, [np.arange(30)]).riemannian_grad(x)
    assert gradient_mapping_sq(prob, x, 1e-5) == pytest.approx(fro(g) ** 2, rel=0.01)


# -- first-order reference ----------------------------------------------------


def test_rgd_converges():
    prob = synthetic_kpca(50, 6, 2, seed=5)
    obj = GlobalObjective(prob, [np.arange(50)])
    pts = [prob.manifold.random_point(RngStream(0, (i,))) for i in range(5)]
    L = estimate_smoothness(obj, pts, RngStream(1))
    res = run_centralized_rgd(prob, 0.1 / L, 5000, tol=1e-6)
    assert res.trace[-1].f_gap <= 1e-6


def test_rgd_step_from_optimum():
    prob = synthetic_kpca(30, 6, 2)
    _, x_star = prob.reference_optimum()
    res = run_centralized_rgd(prob, 0.1, 1, x0=x_star)
    assert fro(res.x_final - x_star) <= 1e-10


def test_rgd_small_step_displacement():
    prob = synthetic_kpca(30, 6, 2)
    x = prob.manifold.random_point(RngStream(1))
    d = [fro(run_centralized_rgd(prob, eta, 1, x0=x).x_final - x) for eta in (1e-4, 1e-5)]
    assert d[0] / d[1] == pytest.approx(10.0, rel=1e-2)


# -- step size diagnostics ----------------------------------------------------


def test_step_size_guard_quiet():
    cfg = RunConfig(n_clients=1, eta=0.01, eta_g=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert step_size_guard(cfg, {"M": 1, "L": 1, "chi": 1, "chi_G": 1, "L_P": 1}, 0.5) == []


def test_step_size_guard_warns():
    cfg = RunConfig(n_clients=1, eta=0.01, eta_g=1.0)
    with pytest.warns(StepSizeWarning, match="chi_G"):
        msgs = step_size_guard(cfg, {"chi_G": 1e3}, 0.5)
    assert len(msgs) == 1


def test_chi_g_stable_across_seeds():
    prob = synthetic_kpca(40, 6, 2, seed=1)
    vals = [estimate_constants(prob, SmoothingConfig(1e-3, 1), RngStream(s), n_draws=1000, n_points=3)["chi_G"] for s in range(3)]
    assert max(vals) <= 1.2 * min(vals)


def test_descent_lemma_spot_check():
    prob = synthetic_kpca(40, 6, 2, seed=1)
    out = descent_lemma_check(prob, 100, RngStream(9))
    assert out["violations"] == 0 and out["trials"] == 100 and out["L"] > 0


# -- output files -------------------------------------------------------------


def test_trace_csv_roundtrip(tmp_path):
    prob = synthetic_kpca(20, 4, 2)
    res = run_federated(RunConfig(n_clients=2, rounds=3, smoothing=SM, record_wall_time=False), prob)
    path = tmp_path / "t.csv"
    write_trace_csv(path, res.trace)
    text = path.read_text()
    assert text.splitlines()[0] == TRACE_HEADER == "round,f_gap,grad_map_sq,oracle_calls,wall_ms"
    assert read_trace_csv(path) == res.trace
    assert all(line.endswith(",0.0") for line in text.splitlines()[1:])


def test_metadata_sidecar(tmp_path):
    path = tmp_path / "m.txt"
    write_metadata(path, {"run": RunConfig(n_clients=2, smoothing=SM).as_dict(), "seed": 3})
    lines = path.read_text().splitlines()
    assert "run.n_clients = 2" in lines and "seed = 3" in lines
    assert any(line.startswith("code_version = ") for line in lines)
    assert lines == sorted(lines)
