"""Deterministic single-process federated simulation.

Round ``k`` of the federated algorithm, for clients ``i = 0..n-1``::

    z_hat = z = P(x^k)
    for t in range(tau):
        G_t   = estimator at z                       (2 m oracle calls)
        z_hat = z_hat - eta * (G_t + c_i)
        z     = P(z_hat)
    x^{k+1} = P(x^k) + eta_g * (mean_i z_hat_i - P(x^k))
    c_i     = (P(x^k) - x^{k+1}) / (eta_g eta tau) - mean_t G_t

The server iterate ``x^k`` may sit off the manifold; the output is
``P(x^{K+1})``.  Random streams are keyed by path: client ``i``, round ``k``,
local step ``t``, sample ``j`` uses ``(i, k, t, j)`` and the server uses
``(2**31, k)``, so results do not depend on execution order or thread count.
"""

from __future__ import annotations

import hashlib
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateProjection, MissingExactGradient, NumericalFailure, SmoothingOutOfTube, TubeEscape
from .estimators import CountingOracle, SmoothingConfig, estimate_grad, single_sample_estimates
from .linalg import RngStream, fro, inner
from .problems.base import GlobalObjective, Problem
from .problems.data import PartitionScheme, atomic_write_text, partition_dataset

SERVER_STREAM = 2**31
PARTITION_STREAM = 2**31 + 2
TRACE_HEADER = "round,f_gap,grad_map_sq,oracle_calls,wall_ms"


class StepSizeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RunConfig:
    n_clients: int = 4
    rounds: int = 100
    local_steps: int = 1
    eta: float = 0.01
    eta_g: float | None = None
    smoothing: SmoothingConfig = field(default_factory=lambda: SmoothingConfig(1e-4, 1))
    master_seed: int = 0
    batch_size: int | None = None
    metric_interval: int = 1
    shared_client_streams: bool = False
    record_wall_time: bool = True

    def __post_init__(self):
        for name in ("n_clients", "local_steps", "metric_interval"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if int(self.rounds) < 0:
            raise ValueError("rounds must be non-negative")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.eta_g is None:
            object.__setattr__(self, "eta_g", math.sqrt(self.n_clients))
        elif not self.eta_g > 0:
            raise ValueError("eta_g must be positive")

    @property
    def eta_tilde(self) -> float:
        return self.eta_g * self.eta * self.local_steps

    def as_dict(self) -> dict:
        d = asdict(self)
        d["smoothing"] = asdict(self.smoothing)
        d["eta_tilde"] = self.eta_tilde
        return d


@dataclass
class TraceRecord:
    round: int
    f_gap: float
    grad_map_sq: float
    oracle_calls: int
    wall_ms: float

    def csv_row(self) -> str:
        return f"{self.round},{self.f_gap!r},{self.grad_map_sq!r},{self.oracle_calls},{self.wall_ms!r}"


@dataclass
class ClientState:
    client_id: int
    correction: np.ndarray
    z_hat: np.ndarray | None = None
    z: np.ndarray | None = None
    history: list = field(default_factory=list)
    oracle_calls: int = 0


@dataclass
class ServerState:
    x: np.ndarray
    round: int = 1


@dataclass
class FederatedResult:
    trace: list
    x_final: np.ndarray
    x: np.ndarray
    clients: list
    f_star: float
    eta_tilde: float
    oracle_calls: int


@dataclass
class CentralizedResult:
    trace: list
    x_final: np.ndarray
    estimator_ms: list
    projection_ms: list
    oracle_calls: int
    f_star: float


# -- metric -------------------------------------------------------------------


def _as_objective(problem_or_objective):
    if isinstance(problem_or_objective, Problem):
        return GlobalObjective(problem_or_objective, [np.arange(problem_or_objective.n_samples)])
    return problem_or_objective


def gradient_mapping_sq(objective, x_amb, eta_tilde) -> float:
    """``||(P(x) - P(P(x) - eta_tilde * grad f(P(x)))) / eta_tilde||^2``."""
    obj = _as_objective(objective)
    if not hasattr(obj, "riemannian_grad"):
        raise MissingExactGradient("gradient mapping needs an exact gradient")
    m = obj.manifold
    px = m.project(x_amb)
    nxt = m.project(px - eta_tilde * obj.riemannian_grad(px))
    d = (px - nxt) / eta_tilde
    return float(inner(d, d))


def _record(obj, x_amb, eta_tilde, rnd, calls, wall_ms):
    px = obj.manifold.project(x_amb)
    return TraceRecord(rnd, obj.value(px) - obj.f_star, gradient_mapping_sq(obj, px, eta_tilde), calls, wall_ms)


# -- algorithm pieces ---------------------------------------------------------


def _project_in_tube(manifold, a, what):
    try:
        pa = manifold.project(a)
    except DegenerateProjection as exc:
        raise TubeEscape(f"{what}: projection failed ({exc})") from exc
    d = fro(a - pa)
    if d > manifold.gamma:
        raise TubeEscape(f"{what}: distance {d:.4g} to the manifold exceeds gamma={manifold.gamma}; step size too large")
    return pa


def client_local_round(client: ClientState, x_k, manifold, oracle, cfg: RunConfig, stream: RngStream, estimator=estimate_grad):
    """Run ``tau`` corrected local steps from ``P(x_k)``; returns the new state."""
    if cfg.smoothing.mu > manifold.gamma:
        raise SmoothingOutOfTube(f"mu={cfg.smoothing.mu} exceeds gamma={manifold.gamma}")
    start = manifold.project(x_k)
    z_hat, z = start.copy(), start.copy()
    counted = CountingOracle(oracle)
    history = []
    for t in range(cfg.local_steps):
        g = estimator(manifold, z, counted, cfg.smoothing, stream.spawn(t))
        history.append(g)
        z_hat = z_hat - cfg.eta * (g + client.correction)
        z = _project_in_tube(manifold, z_hat, f"client {client.client_id}, local step {t}")
    return ClientState(client.client_id, client.correction, z_hat, z, history, client.oracle_calls + counted.calls)


def server_aggregate(server: ServerState, client_finals, eta_g, manifold) -> ServerState:
    """``x^{k+1} = P(x^k) + eta_g (mean_i z_hat_i - P(x^k))``, summed in client order."""
    px = manifold.project(server.x)
    acc = np.zeros_like(px)
    for z in client_finals:
        z = np.asarray(z)
        if z.shape != px.shape:
            raise ValueError(f"client result has shape {z.shape}, expected {px.shape}")
        acc += z
    x_new = px + eta_g * (acc / len(client_finals) - px)
    _project_in_tube(manifold, x_new, f"server round {server.round}")
    return ServerState(x_new, server.round + 1)


def correction_update(client: ClientState, x_k, x_next, cfg: RunConfig, manifold):
    """``c_i = (P(x^k) - x^{k+1}) / (eta_g eta tau) - (1/tau) sum_t G_t``."""
    total = np.zeros(manifold.shape)
    for g in client.history:
        total += g
    return (manifold.project(x_k) - x_next) / cfg.eta_tilde - total / cfg.local_steps


def closed_form_corrections(histories):
    """Corrections implied by one round's estimator histories (no recursion).

    ``histories[i][t]`` is client ``i``'s estimate at step ``t``; returns
    ``c_i = mean_t mean_i G - mean_t G_i`` per client.
    """
    n, tau = len(histories), len(histories[0])
    mean_over_t = [sum(h[1:], h[0].copy()) / tau for h in histories]
    avg = sum(mean_over_t[1:], mean_over_t[0].copy()) / n
    return [avg - mt for mt in mean_over_t]


# -- drivers ------------------------------------------------------------------


def default_partition(problem, n_clients, seed, scheme=None):
    return partition_dataset(
        problem.n_samples, n_clients, scheme or PartitionScheme(), RngStream(seed, (PARTITION_STREAM,)), problem.partition_keys()
    )


def run_federated(cfg: RunConfig, problem, partition=None, threads=1, x0=None, oracles=None, on_round=None, estimator=estimate_grad):
    """Run ``cfg.rounds`` rounds and return the trace and ``P(x^{K+1})``.

    ``on_round(k, x_k, x_next, clients)`` is called after every round with the
    clients' post-round states (corrections already updated).
    """
    manifold = problem.manifold
    if cfg.smoothing.mu > manifold.gamma:
        raise SmoothingOutOfTube(f"mu={cfg.smoothing.mu} exceeds gamma={manifold.gamma}")
    if partition is None:
        partition = default_partition(problem, cfg.n_clients, cfg.master_seed)
    groups = partition.assignment
    if len(groups) != cfg.n_clients:
        raise ValueError("partition and config disagree on the number of clients")
    if oracles is None:
        oracles = [problem.oracle(g, cfg.batch_size) for g in groups]
    objective = GlobalObjective(problem, groups)
    x = problem.initial_point(RngStream(cfg.master_seed, (SERVER_STREAM, 0))) if x0 is None else np.array(x0, dtype=np.float64)
    server = ServerState(x, 1)
    clients = [ClientState(i, np.zeros(manifold.shape)) for i in range(cfg.n_clients)]
    trace, calls, wall = [], 0, 0.0
    eta_tilde = cfg.eta_tilde

    def wall_ms():
        return wall * 1e3 if cfg.record_wall_time else 0.0

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for k in range(1, cfg.rounds + 1):
            if (k - 1) % cfg.metric_interval == 0:
                trace.append(_record(objective, server.x, eta_tilde, k, calls, wall_ms()))
            t0 = time.perf_counter()
            x_k = server.x

            def work(i):
                sid = 0 if cfg.shared_client_streams else i
                return client_local_round(clients[i], x_k, manifold, oracles[i], cfg, RngStream(cfg.master_seed, (sid, k)), estimator)

            try:
                new = list(pool.map(work, range(cfg.n_clients))) if pool else [work(i) for i in range(cfg.n_clients)]
                server = server_aggregate(server, [c.z_hat for c in new], cfg.eta_g, manifold)
            except NumericalFailure as exc:
                raise type(exc)(f"round {k}: {exc}") from exc
            for c in new:
                c.correction = correction_update(c, x_k, server.x, cfg, manifold)
            calls += sum(c.oracle_calls - old.oracle_calls for c, old in zip(new, clients))
            clients = new
            wall += time.perf_counter() - t0
            if on_round is not None:
                on_round(k, x_k, server.x, clients)
        if cfg.rounds > 0:
            trace.append(_record(objective, server.x, eta_tilde, cfg.rounds + 1, calls, wall_ms()))
    finally:
        if pool:
            pool.shutdown()
    return FederatedResult(trace, manifold.project(server.x), server.x, clients, objective.f_star, eta_tilde, calls)


def run_centralized_zo(
    problem,
    smoothing: SmoothingConfig,
    eta,
    iterations,
    seed=0,
    x0=None,
    batch_size=None,
    indices=None,
    metric_interval=1,
    record_wall_time=True,
    estimator=estimate_grad,
):
    """Zeroth-order projected descent ``x <- P(x - eta G(x))``.

    Iteration ``k`` draws from stream ``(0, k, 0)``, the same path a single
    client uses at local step 0 of round ``k``.  Estimator and projection wall
    times are recorded separately.
    """
    manifold = problem.manifold
    idx = np.arange(problem.n_samples) if indices is None else np.asarray(indices)
    oracle = CountingOracle(problem.oracle(idx, batch_size))
    objective = GlobalObjective(problem, [idx])
    x = problem.initial_point(RngStream(seed, (SERVER_STREAM, 0))) if x0 is None else np.array(x0, dtype=np.float64)
    trace, est_ms, proj_ms = [], [], []
    wall = 0.0
    for k in range(1, iterations + 1):
        if (k - 1) % metric_interval == 0:
            trace.append(_record(objective, x, eta, k, oracle.calls, wall * 1e3 if record_wall_time else 0.0))
        t0 = time.perf_counter()
        g = estimator(manifold, x, oracle, smoothing, RngStream(seed, (0, k, 0)))
        t1 = time.perf_counter()
        try:
            x = _project_in_tube(manifold, x - eta * g, f"iteration {k}")
        except NumericalFailure as exc:
            raise type(exc)(str(exc)) from exc
        t2 = time.perf_counter()
        est_ms.append((t1 - t0) * 1e3)
        proj_ms.append((t2 - t1) * 1e3)
        wall += t2 - t0
    if iterations > 0:
        trace.append(_record(objective, x, eta, iterations + 1, oracle.calls, wall * 1e3 if record_wall_time else 0.0))
    return CentralizedResult(trace, x, est_ms, proj_ms, oracle.calls, objective.f_star)


def run_centralized_rgd(problem, eta_tilde, iterations, x0=None, seed=0, indices=None, metric_interval=1, tol=None):
    """First-order projected Riemannian gradient descent with exact gradients.

    Stops early once ``f_gap <= tol`` when ``tol`` is given.
    """
    manifold = problem.manifold
    idx = np.arange(problem.n_samples) if indices is None else np.asarray(indices)
    obj = GlobalObjective(problem, [idx])
    x = problem.initial_point(RngStream(seed, (SERVER_STREAM, 0))) if x0 is None else np.array(x0, dtype=np.float64)
    trace = []
    for k in range(1, iterations + 1):
        if (k - 1) % metric_interval == 0:
            trace.append(_record(obj, x, eta_tilde, k, 0, 0.0))
        if tol is not None and obj.value(x) - obj.f_star <= tol:
            break
        x = manifold.project(x - eta_tilde * obj.riemannian_grad(x))
    trace.append(_record(obj, x, eta_tilde, len(trace) + 1 if tol is not None else iterations + 1, 0, 0.0))
    return CentralizedResult(trace, x, [], [], 0, obj.f_star)


# -- step size diagnostics ----------------------------------------------------


def step_size_bound(constants, gamma):
    """``min{1/(24 M L), gamma/(6 max(chi_G, chi)), 1/(chi L_P)}`` over the terms available."""
    terms = {}
    M, L = constants.get("M"), constants.get("L")
    chi, chi_g, lp = constants.get("chi"), constants.get("chi_G"), constants.get("L_P")
    if M and L:
        terms["1/(24 M L)"] = 1.0 / (24.0 * M * L)
    if chi or chi_g:
        terms["gamma/(6 max(chi_G, chi))"] = gamma / (6.0 * max(chi or 0.0, chi_g or 0.0))
    if chi and lp:
        terms["1/(chi L_P)"] = 1.0 / (chi * lp)
    return terms


def step_size_guard(cfg: RunConfig, constants, gamma):
    """Compare ``eta_tilde`` with the bound; returns (and emits) warnings.

    The constants are estimates, so violations are reported, never fatal.
    """
    msgs = []
    for name, bound in step_size_bound(constants, gamma).items():
        if cfg.eta_tilde > bound:
            msg = f"eta_tilde={cfg.eta_tilde:.4g} exceeds {name}={bound:.4g}"
            msgs.append(msg)
            warnings.warn(msg, StepSizeWarning, stacklevel=2)
    return msgs


def estimate_constants(problem, smoothing: SmoothingConfig, stream: RngStream, n_draws=1000, n_points=5, oracle=None):
    """Empirical upper estimates of ``chi_G``, ``chi``, ``M`` and ``L``.

    * ``chi_G``: max norm of ``n_draws`` estimator draws at each sampled point
    * ``chi``: max Euclidean gradient norm at the sampled points
    * ``M``: max ``||P(x + u) - x|| / ||u||`` for ``||u|| <= gamma``
    * ``L``: max curvature ratio of the descent inequality over point pairs
    """
    m = problem.manifold
    oracle = oracle or problem.oracle()
    obj = GlobalObjective(problem, [np.arange(problem.n_samples)])
    pts = [problem.initial_point(stream.spawn(0).spawn(i)) for i in range(n_points)]
    chi_g = chi = M = L = 0.0
    for i, x in enumerate(pts):
        singles = single_sample_estimates(m, x, oracle, smoothing.mu, n_draws * smoothing.m, stream.spawn(1).spawn(i), smoothing.variant)
        g = singles.reshape((n_draws, smoothing.m) + m.shape).mean(axis=1)
        chi_g = max(chi_g, float(np.max(fro(g))))
        chi = max(chi, float(fro(obj.euclid_grad(x))))
        gen = stream.spawn(2).spawn(i).generator()
        for _ in range(50):
            u = gen.standard_normal(m.shape)
            u *= gen.uniform(1e-3, 1.0) * m.gamma / fro(u)
            M = max(M, float(fro(m.project(x + u) - x) / fro(u)))
    L = estimate_smoothness(obj, pts, stream.spawn(3))
    return {"chi_G": chi_g, "chi": chi, "M": M, "L": L}


def estimate_smoothness(obj, points, stream, n_pairs=200, extra_pairs=()):
    """Largest ratio seen for ``f(y) - f(x) - <grad f(x), y - x> <= L/2 ||y - x||^2``
    and ``||grad f(x) - grad f(y)|| <= L ||x - y||``."""
    m = obj.manifold
    gen = stream.generator()
    pairs = list(extra_pairs)
    for _ in range(n_pairs):
        x = points[gen.integers(len(points))] if points else m.project(gen.standard_normal(m.shape))
        y = m.project(x + gen.uniform(0.01, 1.0) * gen.standard_normal(m.shape))
        pairs.append((x, y))
    L = 0.0
    for x, y in pairs:
        d = fro(y - x)
        if d < 1e-8:
            continue
        gx, gy = obj.riemannian_grad(x), obj.riemannian_grad(y)
        L = max(L, 2.0 * (obj.value(y) - obj.value(x) - inner(gx, y - x)) / d**2, fro(gx - gy) / d)
    return float(L)


def descent_lemma_check(objective, n_trials, stream, L=None, z=None):
    """Spot-check the one-step descent inequality for ``x+ = P(x - eta v)``.

    For random ``x`` on the manifold, direction ``v`` and step ``eta`` with
    ``x - eta v`` inside the tube, checks::

        f(x+) <= f(z) + <grad f(x) - v, x+ - z> - (||x+ - x||^2 - ||z - x||^2) / (2 eta)
                 - (1/(2 eta) - 3||v||/(4 gamma)) ||z - x+||^2 + L/2 ||x+ - x||^2 + L/2 ||z - x||^2

    with ``z = x`` by default.  ``L`` defaults to an empirical estimate that
    includes the trial pairs.  Returns ``{"violations", "trials", "L"}``.
    """
    obj = _as_objective(objective)
    m = obj.manifold
    gamma = m.gamma
    gen = stream.generator()
    trials = []
    for _ in range(n_trials):
        x = m.project(gen.standard_normal(m.shape))
        v = gen.standard_normal(m.shape)
        eta = float(gen.uniform(1e-3, 0.2))
        while m.dist(x - eta * v) > gamma:
            v *= 0.5
        trials.append((x, v, eta, m.project(x - eta * v)))
    if L is None:
        L = estimate_smoothness(obj, [t[0] for t in trials], stream.spawn(1), extra_pairs=[(t[0], t[3]) for t in trials])
    bad = 0
    for x, v, eta, xp in trials:
        zz = x if z is None else z
        g = obj.riemannian_grad(x)
        rhs = (
            obj.value(zz)
            + inner(g - v, xp - zz)
            - (inner(xp - x, xp - x) - inner(zz - x, zz - x)) / (2 * eta)
            - (1 / (2 * eta) - 3 * fro(v) / (4 * gamma)) * inner(zz - xp, zz - xp)
            + 0.5 * L * inner(xp - x, xp - x)
            + 0.5 * L * inner(zz - x, zz - x)
        )
        if obj.value(xp) > rhs + 1e-12 * (1 + abs(rhs)):
            bad += 1
    return {"violations": bad, "trials": n_trials, "L": L}


# -- output -------------------------------------------------------------------


def trace_csv_text(records) -> str:
    return "\n".join([TRACE_HEADER] + [r.csv_row() for r in records]) + "\n"


def write_trace_csv(path, records):
    atomic_write_text(path, trace_csv_text(records))


def read_trace_csv(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != TRACE_HEADER:
        raise ValueError(f"{path}: not a trace file")
    out = []
    for line in lines[1:]:
        r, fg, gm, oc, wm = line.split(",")
        out.append(TraceRecord(int(r), float(fg), float(gm), int(oc), float(wm)))
    return out


def code_version_hash() -> str:
    h = hashlib.sha256()
    root = Path(__file__).resolve().parent
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def write_metadata(path, mapping):
    """Sidecar ``key = value`` file; nested dicts are flattened with dots."""
    flat = {}

    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                walk(f"{prefix}.{k}" if prefix else str(k), obj[k])
        else:
            flat[prefix] = obj

    walk("", mapping)
    flat.setdefault("code_version", code_version_hash())
    atomic_write_text(path, "".join(f"{k} = {flat[k]}\n" for k in sorted(flat)))
