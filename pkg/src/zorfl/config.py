"""Strict INI experiment configuration.

Every section and key is declared in :data:`SCHEMA`; anything else is an
error.  Values listed as sweepable accept a comma-separated list, and the
federated command varies one of them at a time around the first entries.

Example::

    [experiment]
    seeds = 0, 1

    [problem]
    kind = kpca
    data = data/iris.csv
    r = 2

    [federated]
    n_clients = 2, 8
    rounds = 200
    eta = 0.01

    [smoothing]
    mu = 1e-4
    m = 5
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimators import PROJECTION, VARIANTS, SmoothingConfig, default_mu
from .fedsim import RunConfig
from .problems.data import DIRICHLET, IID, SORTED_SHARDS, PartitionScheme

SWEEPABLE = ("n_clients", "local_steps", "m", "rank")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)

    return parse


# section -> key -> (parser, default); a default of None means "unset"
SCHEMA = {
    "experiment": {
        "name": (str, "run"),
        "seeds": (_int_list, [0]),
        "threads": (int, 1),
    },
    "problem": {
        "kind": (str, "kpca"),
        "data": (_opt(str), None),
        "asset": (_opt(str), None),
        "n_samples": (int, 20),
        "p": (int, 10),
        "r": (int, 2),
        "rank": (_int_list, [1]),
        "gamma": (_opt(float), None),
        "data_seed": (int, 0),
        "decay": (float, 0.6),
        "center": (_bool, True),
        "standardize": (_bool, False),
        "noise": (float, 0.0),
        "epsilon": (_opt(float), None),
        "c": (_opt(float), None),
    },
    "federated": {
        "n_clients": (_int_list, [4]),
        "rounds": (int, 100),
        "local_steps": (_int_list, [1]),
        "eta": (_opt(float), None),
        "eta_tilde": (_opt(float), None),
        "eta_g": (_opt(float), None),
        "partition": (str, IID),
        "shards_per_client": (int, 2),
        "alpha": (float, 1.0),
        "pool_clients": (_opt(int), None),
        "batch_size": (_opt(int), None),
        "metric_interval": (int, 1),
        "target_gap": (_opt(float), None),
    },
    "smoothing": {
        "mu": (_opt(float), None),
        "m": (_int_list, [1]),
        "variant": (str, PROJECTION),
    },
    "centralized": {
        "iterations": (int, 1000),
        "eta": (float, 0.1),
        "variants": (_str_list, list(VARIANTS)),
        "metric_interval": (int, 1),
    },
    "probe": {
        "mus": (_float_list, [0.3, 0.1, 0.03]),
        "n_samples": (int, 100_000),
        "ms": (_int_list, [1, 10, 100]),
        "mse_mu": (float, 1e-3),
        "n_repeats": (int, 2000),
        "sigma": (float, 0.0),
        "oracle": (str, "problem"),
        "variants": (_str_list, list(VARIANTS)),
        "isotropy_draws": (int, 100_000),
    },
    "output": {
        "dir": (str, "out"),
        "plot": (_bool, False),
        "record_wall_time": (_bool, False),
    },
}

PROBLEM_KINDS = ("kpca", "attack", "lowrank")


class Section(dict):
    """Dict with attribute access."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError as exc:
            raise AttributeError(name) from exc


@dataclass
class ExperimentConfig:
    sections: dict
    path: Path | None = None

    def __getattr__(self, name):
        sections = self.__dict__.get("sections", {})
        if name in sections:
            return sections[name]
        raise AttributeError(name)

    def resolve(self, value):
        """Interpret a path relative to the config file's directory."""
        p = Path(value)
        if p.is_absolute() or self.path is None:
            return p
        return self.path.parent / p

    def as_dict(self) -> dict:
        return {s: dict(v) for s, v in self.sections.items()}

    # -- derived objects -------------------------------------------------

    def partition_scheme(self) -> PartitionScheme:
        f = self.federated
        return PartitionScheme(f.partition, f.shards_per_client, f.alpha)

    def run_config(self, n_clients, local_steps, m, seed, p, r, record_wall_time=False) -> RunConfig:
        f, s = self.federated, self.smoothing
        eta_g = f.eta_g if f.eta_g is not None else math.sqrt(n_clients)
        eta = f.eta if f.eta is not None else f.eta_tilde / (eta_g * local_steps)
        mu = s.mu if s.mu is not None else default_mu(p, r, n_clients, local_steps, f.rounds)
        return RunConfig(
            n_clients=n_clients,
            rounds=f.rounds,
            local_steps=local_steps,
            eta=eta,
            eta_g=eta_g,
            smoothing=SmoothingConfig(mu, m, s.variant),
            master_seed=seed,
            batch_size=f.batch_size,
            metric_interval=f.metric_interval,
            record_wall_time=record_wall_time,
        )

    def sweep_points(self):
        """One-at-a-time sweep: ``[(label, {param: value, ...}), ...]``.

        The base point uses the first entry of every list; each further value
        of a list-valued parameter gives one more point.
        """
        lists = {
            "n_clients": self.federated.n_clients,
            "local_steps": self.federated.local_steps,
            "m": self.smoothing.m,
            "rank": self.problem.rank,
        }
        base = {k: v[0] for k, v in lists.items()}
        points = [("base", dict(base))]
        seen = {tuple(sorted(base.items()))}
        for key in SWEEPABLE:
            for v in lists[key][1:]:
                pt = dict(base, **{key: v})
                sig = tuple(sorted(pt.items()))
                if sig in seen:
                    continue
                seen.add(sig)
                points.append((f"{key}={v}", pt))
        if len(points) > 1:
            # label the base by the swept values so file names stay meaningful
            swept = [k for k in SWEEPABLE if len(lists[k]) > 1]
            points[0] = (";".join(f"{k}={base[k]}" for k in swept), points[0][1])
        return points


def _parse_value(section, key, text):
    conv, _ = SCHEMA[section][key]
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: invalid value {text!r} ({exc})") from None


def parse_config_text(text, path=None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00unused", strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    sections = {}
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
    for name, keys in SCHEMA.items():
        sec = Section({k: d for k, (_, d) in keys.items()})
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in section [{name}]")
                sec[key] = _parse_value(name, key, raw)
        sections[name] = sec
    cfg = ExperimentConfig(sections, Path(path) if path else None)
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, path)


def validate(cfg: ExperimentConfig):
    """Semantic checks, including that every referenced path exists."""
    pr, fed, sm, out = cfg.problem, cfg.federated, cfg.smoothing, cfg.output
    if pr.kind not in PROBLEM_KINDS:
        raise ConfigError(f"[problem] kind: must be one of {PROBLEM_KINDS}, got {pr.kind!r}")
    if fed.partition not in (IID, SORTED_SHARDS, DIRICHLET):
        raise ConfigError(f"[federated] partition: unknown scheme {fed.partition!r}")
    if sm.variant not in VARIANTS:
        raise ConfigError(f"[smoothing] variant: must be one of {VARIANTS}")
    for v in cfg.centralized.variants + cfg.probe.variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown estimator variant {v!r}")
    if cfg.probe.oracle not in ("problem", "constant"):
        raise ConfigError("[probe] oracle: must be 'problem' or 'constant'")
    if fed.eta is not None and fed.eta_tilde is not None:
        raise ConfigError("[federated] set only one of eta and eta_tilde")
    if fed.eta is None and fed.eta_tilde is None:
        fed["eta"] = 0.01
    for key in ("n_clients", "local_steps"):
        if not fed[key] or min(fed[key]) < 1:
            raise ConfigError(f"[federated] {key}: values must be positive integers")
    if not sm.m or min(sm.m) < 1:
        raise ConfigError("[smoothing] m: values must be positive integers")
    if not cfg.experiment.seeds:
        raise ConfigError("[experiment] seeds: at least one seed required")
    if cfg.experiment.threads < 1:
        raise ConfigError("[experiment] threads: must be positive")
    if fed.pool_clients is not None and fed.pool_clients < max(fed.n_clients):
        raise ConfigError("[federated] pool_clients: must be at least the largest n_clients")
    if fed.rounds < 0 or fed.metric_interval < 1:
        raise ConfigError("[federated] rounds must be >= 0 and metric_interval >= 1")
    if sm.mu is not None and not sm.mu > 0:
        raise ConfigError("[smoothing] mu: must be positive")
    for key in ("data", "asset"):
        if pr[key] is not None and not cfg.resolve(pr[key]).exists():
            raise ConfigError(f"[problem] {key}: path does not exist: {cfg.resolve(pr[key])}")
    if pr.kind == "lowrank" and pr.gamma is None:
        raise ConfigError("[problem] gamma: required for the fixed-rank manifold")
    if pr.kind != "lowrank" and len(pr.rank) > 1:
        raise ConfigError("[problem] rank: only the lowrank problem takes a rank sweep")
    if not isinstance(out.dir, str) or not out.dir:
        raise ConfigError("[output] dir: must be a path")


def build_problem(cfg: ExperimentConfig, rank=None):
    """Instantiate the configured problem (``rank`` overrides for sweeps)."""
    from .problems import FixedRankRegressionProblem, KpcaProblem, load_matrix_csv, load_victim_asset, synthetic_kpca

    pr = cfg.problem
    if pr.kind == "kpca":
        if pr.data is not None:
            X = load_matrix_csv(cfg.resolve(pr.data))
            if pr.r > X.shape[1]:
                raise ConfigError(f"[problem] r={pr.r} exceeds the data dimension {X.shape[1]}")
            prob = KpcaProblem.from_samples(X, pr.r, center=pr.center, standardize=pr.standardize)
        else:
            prob = synthetic_kpca(pr.n_samples, pr.p, pr.r, seed=pr.data_seed, decay=pr.decay)
        if pr.gamma is not None:
            prob.manifold.gamma = float(pr.gamma)
        return prob
    if pr.kind == "attack":
        asset = cfg.resolve(pr.asset) if pr.asset is not None else None
        return load_victim_asset(asset, epsilon=pr.epsilon, c=pr.c)
    return FixedRankRegressionProblem.synthetic(
        pr.n_samples, pr.p, pr.r, rank if rank is not None else pr.rank[0], noise=pr.noise, gamma=pr.gamma, seed=pr.data_seed
    )


def client_groups(cfg: ExperimentConfig, problem, n_clients, seed):
    """Client index sets: partition ``pool_clients`` (or ``n_clients``) shards
    and let the first ``n_clients`` participate."""
    from .fedsim import default_partition
    from .problems.data import Partition

    pool = cfg.federated.pool_clients or n_clients
    full = default_partition(problem, pool, seed, cfg.partition_scheme())
    return Partition(full.scheme, full.n_samples, [np.asarray(g) for g in full.assignment[:n_clients]])
