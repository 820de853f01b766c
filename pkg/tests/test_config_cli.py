import csv

import numpy as np
import pytest

from zorfl import cli, selftest
from zorfl.config import load_config, parse_config_text
from zorfl.errors import ConfigError
from zorfl.fedsim import TRACE_HEADER, read_trace_csv

SMALL = """
[experiment]
seeds = 0, 1

[problem]
kind = kpca
n_samples = 24
p = 5
r = 2

[federated]
n_clients = {n}
local_steps = 2
rounds = {rounds}
eta = {eta}
metric_interval = 2

[smoothing]
mu = 1e-3
m = 2
"""


def _write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _small(tmp_path, n="2", rounds=4, eta=0.01):
    return _write(tmp_path, SMALL.format(n=n, rounds=rounds, eta=eta))


# -- config parsing -------------------------------------------------------------


def test_parse_lists_and_defaults(tmp_path):
    cfg = load_config(_small(tmp_path, n="2, 8"))
    assert cfg.federated.n_clients == [2, 8]
    assert cfg.experiment.seeds == [0, 1]
    assert cfg.output.plot is False and cfg.output.record_wall_time is False
    labels = [label for label, _ in cfg.sweep_points()]
    assert labels == ["n_clients=2", "n_clients=8"]


def test_empty_sweep_single_point(tmp_path):
    assert len(load_config(_small(tmp_path)).sweep_points()) == 1


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="learning_rate"):
        parse_config_text("[federated]\nlearning_rate = 0.1\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="training"):
        parse_config_text("[training]\n")


def test_bad_value():
    with pytest.raises(ConfigError, match="rounds"):
        parse_config_text("[federated]\nrounds = many\n")


def test_eta_and_eta_tilde_exclusive(tmp_path):
    text = SMALL.format(n=2, rounds=1, eta=0.1) + "eta_tilde = 0.1\n"
    text = text.replace("[smoothing]", "[smoothing]")
    bad = text.replace("metric_interval = 2\n", "metric_interval = 2\neta_tilde = 0.1\n")
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, bad))


def test_missing_data_path_rejected(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(_write(tmp_path, "[problem]\nkind = kpca\ndata = nowhere.csv\nr = 2\n"))


def test_eta_tilde_conversion(tmp_path):
    text = SMALL.format(n=4, rounds=1, eta=0.1).replace("eta = 0.1", "eta_tilde = 0.2")
    cfg = load_config(_write(tmp_path, text))
    rc = cfg.run_config(4, 2, 2, 0, 5, 2)
    assert rc.eta_tilde == pytest.approx(0.2)
    assert rc.eta == pytest.approx(0.2 / (2.0 * 2))


# -- exit codes -----------------------------------------------------------------


def test_unknown_key_exit_2(tmp_path, capsys):
    path = _write(tmp_path, "[federated]\nlearning_rate = 0.1\n")
    assert cli.main(["federated", "--config", str(path)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path, capsys):
    assert cli.main(["centralized", "--config", str(tmp_path / "none.ini")]) == 2
    assert "none.ini" in capsys.readouterr().err


def test_usage_error_exit_2():
    assert cli.main(["federated"]) == 2
    assert cli.main(["bogus"]) == 2


def test_bad_threads_exit_2(tmp_path):
    assert cli.main(["federated", "--config", str(_small(tmp_path)), "--threads", "0"]) == 2


def test_numerical_abort_exit_3(tmp_path, capsys):
    path = _small(tmp_path, eta=1000.0)
    assert cli.main(["federated", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    assert "TubeEscape" in capsys.readouterr().err


def test_selftest_clean(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    for name in selftest.CHECKS:
        assert f"PASS {name}" in out
    assert f"{len(selftest.CHECKS)} passed, 0 failed" in out


def test_selftest_injected_failure(monkeypatch, capsys):
    def too_tight():
        assert 1e-9 <= 1e-12, "tolerance violated"

    checks = dict(selftest.CHECKS)
    checks["injected_tolerance"] = too_tight
    monkeypatch.setattr(selftest, "CHECKS", checks)
    assert cli.main(["selftest"]) == 1
    out = capsys.readouterr().out
    assert "FAIL injected_tolerance" in out and "1 failed" in out


# -- outputs ----------------------------------------------------------------------


def test_federated_sweep_file_count(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["federated", "--config", str(_small(tmp_path, n="2, 8")), "--out", str(out)]) == 0
    traces = sorted(p.name for p in out.glob("federated_*_seed*.csv"))
    assert len(traces) == 4
    assert len(list(out.glob("*.meta.txt"))) == 4
    rows = list(csv.DictReader(open(out / "federated_summary.csv")))
    assert len(rows) == 4 and {r["n_clients"] for r in rows} == {"2", "8"}
    assert (out / traces[0]).read_text().splitlines()[0] == TRACE_HEADER
    assert not list(out.glob(".tmp-*"))


def test_federated_empty_sweep_single_run(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["federated", "--config", str(_small(tmp_path)), "--out", str(out), "--seeds", "3"]) == 0
    assert [p.name for p in out.glob("federated_*.csv") if "summary" not in p.name] == ["federated_base_seed3.csv"]


def test_federated_outputs_reproducible(tmp_path):
    cfg = str(_small(tmp_path))
    cli.main(["federated", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["federated", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"])
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_plot_files(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["federated", "--config", str(_small(tmp_path)), "--out", str(out), "--plot"]) == 0
    for name in ("federated_f_gap.png", "federated_grad_map_sq.png"):
        assert (out / name).read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_no_plot_by_default(tmp_path):
    out = tmp_path / "o"
    cli.main(["federated", "--config", str(_small(tmp_path)), "--out", str(out)])
    assert not list(out.glob("*.png"))


def test_centralized_iris(tmp_path, capsys, repo_root):
    out = tmp_path / "o"
    assert cli.main(["centralized", "--config", str(repo_root / "configs" / "iris_centralized.ini"), "--out", str(out)]) == 0
    for variant in ("projection", "retraction"):
        tr = read_trace_csv(out / f"centralized_{variant}_seed0.csv")
        assert tr[-1].f_gap <= 0.1 * tr[0].f_gap
    summary = list(csv.DictReader(open(out / "centralized_summary.csv")))
    assert {r["variant"] for r in summary} == {"projection", "retraction"}
    assert "mean_estimator_ms" in capsys.readouterr().out


PROBE = """
[problem]
kind = kpca
n_samples = 10
p = 4
r = 2

[probe]
mus = 0.3, 0.1
n_samples = 2000
ms = 1, 10
n_repeats = 50
oracle = {oracle}
sigma = {sigma}
isotropy_draws = 1000
variants = projection, retraction
"""


def test_probe_constant_oracle_zero(tmp_path, capsys):
    out = tmp_path / "o"
    path = _write(tmp_path, PROBE.format(oracle="constant", sigma=0.0))
    assert cli.main(["probe", "--config", str(path), "--out", str(out)]) == 0
    for name in ("probe_bias.csv", "probe_variance.csv"):
        rows = list(csv.reader(open(out / name)))[1:]
        assert rows and all(float(r[2]) == 0.0 for r in rows)
    text = capsys.readouterr().out
    assert "variant=projection" in text and "variant=retraction" in text


def test_probe_problem_oracle(tmp_path):
    out = tmp_path / "o"
    path = _write(tmp_path, PROBE.format(oracle="problem", sigma=1.0))
    assert cli.main(["probe", "--config", str(path), "--out", str(out), "--plot"]) == 0
    rows = list(csv.DictReader(open(out / "probe_variance.csv")))
    assert all(np.isfinite(float(r["mse"])) and float(r["mse"]) > 0 for r in rows)
    assert (out / "probe_variance.png").exists()
