"""Command-line front end.

    zorfl centralized --config exp.ini [--out DIR] [--seeds 0,1] [--plot]
    zorfl federated   --config exp.ini [--out DIR] [--seeds 0,1] [--threads N] [--plot]
    zorfl probe       --config exp.ini [--out DIR] [--plot]
    zorfl selftest

Exit codes: 0 success, 1 failed check, 2 usage/config/IO error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_problem, client_groups, load_config
from .errors import ConfigError, NumericalFailure, ParseError
from .estimators import ConstantOracle, NoisyOracle, SmoothingConfig, loglog_slope, probe_bias, probe_variance, sphere_smoothing_identity
from .fedsim import SERVER_STREAM, code_version_hash, run_centralized_zo, run_federated, write_metadata, write_trace_csv
from .linalg import RngStream
from .problems.data import atomic_write_text

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _csv(header, rows) -> str:
    return "\n".join([",".join(header)] + [",".join(_fmt(v) for v in row) for row in rows]) + "\n"


def _seeds(args, cfg):
    if args.seeds:
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"--seeds: not a list of integers: {args.seeds!r}") from None
    return cfg.experiment.seeds


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else cfg.resolve(cfg.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    return out


def _plot_enabled(args, cfg):
    return bool(args.plot or cfg.output.plot)


# -- commands -----------------------------------------------------------------


def cmd_centralized(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    c = cfg.centralized
    problem = build_problem(cfg)
    p, r = problem.manifold.shape
    mu = cfg.smoothing.mu if cfg.smoothing.mu is not None else 1e-4
    rows, series = [], {}
    for seed in _seeds(args, cfg):
        for variant in c.variants:
            sm = SmoothingConfig(mu, cfg.smoothing.m[0], variant)
            res = run_centralized_zo(
                problem, sm, c.eta, c.iterations, seed=seed, metric_interval=c.metric_interval, record_wall_time=cfg.output.record_wall_time
            )
            stem = f"centralized_{variant}_seed{seed}"
            write_trace_csv(out / f"{stem}.csv", res.trace)
            write_metadata(
                out / f"{stem}.meta.txt",
                {"command": "centralized", "variant": variant, "seed": seed, "mu": mu, "m": sm.m, "config": cfg.as_dict(), "f_star": res.f_star},
            )
            est = float(np.mean(res.estimator_ms)) if res.estimator_ms else 0.0
            proj = float(np.mean(res.projection_ms)) if res.projection_ms else 0.0
            first, last = res.trace[0] if res.trace else None, res.trace[-1] if res.trace else None
            print(
                f"variant={variant} seed={seed} iterations={c.iterations} "
                f"mean_estimator_ms={est:.4f} mean_projection_ms={proj:.4f} "
                f"initial_f_gap={first.f_gap if first else float('nan'):.6g} final_f_gap={last.f_gap if last else float('nan'):.6g}"
            )
            rows.append((variant, seed, c.iterations, first.f_gap if first else 0.0, last.f_gap if last else 0.0, last.grad_map_sq if last else 0.0, res.oracle_calls))
            series[f"{variant} seed {seed}"] = res.trace
    atomic_write_text(out / "centralized_summary.csv", _csv(["variant", "seed", "iterations", "initial_f_gap", "final_f_gap", "final_grad_map_sq", "oracle_calls"], rows))
    if _plot_enabled(args, cfg):
        from .plotting import plot_traces

        plot_traces(series, out / "centralized_f_gap.png", title="centralized ZO descent", field="f_gap")
    return EXIT_OK


def _federated_point(cfg: ExperimentConfig, point, seed, threads, out, record_wall):
    label, pt = point
    problem = build_problem(cfg, rank=pt["rank"])
    p, r = problem.manifold.shape
    rc = cfg.run_config(pt["n_clients"], pt["local_steps"], pt["m"], seed, p, r, record_wall_time=record_wall)
    part = client_groups(cfg, problem, pt["n_clients"], seed)
    try:
        res = run_federated(rc, problem, part, threads=threads)
    except NumericalFailure as exc:
        raise type(exc)(f"sweep point {label}, seed {seed}: {exc}") from exc
    stem = f"federated_{_safe(label)}_seed{seed}"
    write_trace_csv(out / f"{stem}.csv", res.trace)
    meta = {"command": "federated", "point": label, "seed": seed, "run": rc.as_dict(), "config": cfg.as_dict(), "f_star": res.f_star}
    meta["partition_sizes"] = ",".join(str(len(g)) for g in part.assignment)
    write_metadata(out / f"{stem}.meta.txt", meta)
    success = problem.success_rate(res.x_final) if hasattr(problem, "success_rate") else ""
    return label, pt, seed, rc, res, success


def _safe(label):
    return "".join(ch if ch.isalnum() or ch in "-_." else "-" for ch in label.replace("=", "")) or "base"


def cmd_federated(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    threads = args.threads or cfg.experiment.threads
    seeds = _seeds(args, cfg)
    points = cfg.sweep_points()
    jobs = [(pt, s) for pt in points for s in seeds]
    # runs are independent; clients inside a run get the worker threads
    results = [_federated_point(cfg, pt, s, threads, out, cfg.output.record_wall_time) for pt, s in jobs]
    target = cfg.federated.target_gap
    rows, series = [], {}
    for label, pt, seed, rc, res, success in results:
        tr = res.trace
        # round-averaged metric over the second half of the run, where the
        # transient from the common starting point has died out
        late = tr[len(tr) // 2 :]
        avg = float(np.mean([t.grad_map_sq for t in late])) if late else 0.0
        hit = next((t.round for t in tr if target is not None and t.f_gap <= target * max(abs(res.f_star), 1e-300)), -1)
        last = tr[-1] if tr else None
        rows.append(
            (
                label,
                pt["n_clients"],
                pt["local_steps"],
                pt["m"],
                pt["rank"],
                seed,
                rc.eta,
                rc.eta_g,
                rc.eta_tilde,
                rc.smoothing.mu,
                last.f_gap if last else 0.0,
                last.grad_map_sq if last else 0.0,
                avg,
                hit,
                res.oracle_calls,
                success,
            )
        )
        series[f"{label} seed {seed}"] = tr
        print(f"point={label} seed={seed} eta_tilde={rc.eta_tilde:.6g} final_f_gap={last.f_gap if last else 0.0:.6g} " f"avg_grad_map_sq={avg:.6g}" + (f" success_rate={success:.4g}" if success != "" else ""))
    header = [
        "point",
        "n_clients",
        "local_steps",
        "m",
        "rank",
        "seed",
        "eta",
        "eta_g",
        "eta_tilde",
        "mu",
        "final_f_gap",
        "final_grad_map_sq",
        "avg_grad_map_sq",
        "rounds_to_target",
        "oracle_calls",
        "success_rate",
    ]
    atomic_write_text(out / "federated_summary.csv", _csv(header, rows))
    if _plot_enabled(args, cfg):
        from .plotting import plot_traces

        plot_traces(series, out / "federated_f_gap.png", title="federated runs", field="f_gap")
        plot_traces(series, out / "federated_grad_map_sq.png", title="federated runs", field="grad_map_sq")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    pb = cfg.probe
    problem = build_problem(cfg)
    m = problem.manifold
    seed = _seeds(args, cfg)[0]
    x = problem.initial_point(RngStream(seed, (SERVER_STREAM, 0)))
    if pb.oracle == "constant":
        base = ConstantOracle(1.0, m.shape)
    else:
        base = problem.oracle()
    noisy = NoisyOracle(base, pb.sigma, m.shape) if pb.sigma > 0 else base
    bias_rows, var_rows, bias_series, var_series = [], [], {}, {}
    for variant in pb.variants:
        bias = probe_bias(m, x, base, pb.mus, pb.n_samples, RngStream(seed, (3, 0)), variant)
        for mu, b in bias:
            bias_rows.append((variant, mu, b))
        ok = all(b > 0 for _, b in bias) and len(bias) > 1
        slope = loglog_slope(*zip(*bias)) if ok else float("nan")
        print(f"variant={variant} bias_slope={slope:.4f}")
        mses = []
        for mm in pb.ms:
            mse = probe_variance(m, x, noisy, SmoothingConfig(pb.mse_mu, mm, variant), pb.n_repeats, RngStream(seed, (3, 1, mm)))
            mses.append(mse)
            var_rows.append((variant, mm, mse))
        ok = all(v > 0 for v in mses) and len(mses) > 1
        vslope = loglog_slope(pb.ms, mses) if ok else float("nan")
        ratio = mses[0] / mses[-1] if mses[-1] > 0 else float("nan")
        print(f"variant={variant} mse_slope_in_m={vslope:.4f} mse_ratio_first_last={ratio:.4g}")
        bias_series[variant] = ([b[0] for b in bias], [b[1] for b in bias])
        var_series[variant] = (pb.ms, mses)
    g = RngStream(seed, (3, 2)).generator().standard_normal(m.shape)
    _, err = sphere_smoothing_identity(g, pb.isotropy_draws, RngStream(seed, (3, 3)))
    print(f"isotropy_relative_error={err:.4g} draws={pb.isotropy_draws}")
    atomic_write_text(out / "probe_bias.csv", _csv(["variant", "mu", "bias"], bias_rows))
    atomic_write_text(out / "probe_variance.csv", _csv(["variant", "m", "mse"], var_rows))
    write_metadata(out / "probe.meta.txt", {"command": "probe", "seed": seed, "config": cfg.as_dict(), "isotropy_relative_error": err})
    if _plot_enabled(args, cfg):
        from .plotting import plot_loglog

        if all(v > 0 for _, ys in bias_series.values() for v in ys):
            plot_loglog(bias_series, out / "probe_bias.png", "mu", "bias", "estimator bias")
        if all(v > 0 for _, ys in var_series.values() for v in ys):
            plot_loglog(var_series, out / "probe_variance.png", "m", "mse", "estimator mean squared error")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    print(f"zorfl selftest (code {code_version_hash()})")
    _, failed = run_checks()
    return EXIT_FAIL if failed else EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zorfl", description="Zeroth-order Riemannian federated learning experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--config", required=True, help="INI experiment file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--seeds", help="comma-separated seeds (overrides [experiment] seeds)")
        p.add_argument("--plot", action="store_true", help="also write PNG figures next to the CSVs")
        if threads:
            p.add_argument("--threads", type=int, default=None, help="worker threads for clients")

    common(sub.add_parser("centralized", help="centralized ZO descent, both estimators"))
    common(sub.add_parser("federated", help="federated runs with one-at-a-time sweeps"), threads=True)
    common(sub.add_parser("probe", help="estimator bias / variance / isotropy probes"))
    sub.add_parser("selftest", help="run built-in invariant checks")
    return ap


COMMANDS = {"centralized": cmd_centralized, "federated": cmd_federated, "probe": cmd_probe, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except NumericalFailure as exc:
        print(f"numerical abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
