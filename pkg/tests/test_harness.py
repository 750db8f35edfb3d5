import json
import math
import random

import mpmath
import numpy as np
import pytest
from scipy.special import gammaln

from coulombgap.errors import ConfigError, QuadratureFailure
from coulombgap.harness import cli
from coulombgap.harness.config import GapRecord, parse_config, parse_test_function
from coulombgap.harness.freeenergy import free_energy_fit, gap_records, gn_evaluate, log_partition
from coulombgap.potential import frac_part, ginibre


def write_config(tmp_path, **fields) -> str:
    data = {"potential": "ginibre-outpost", "mode": "outpost", "n": [64], "output": "out"}
    data.update(fields)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data, indent=2))
    return str(path)


def gn_direct(gaps, n: int) -> float:
    """The oscillatory term from its displayed form, with mu = e^{-c} rho^{2x}."""
    total = mpmath.mpf(0)
    for g in gaps:
        rho = mpmath.mpf(g.rho)
        x = mpmath.mpf(n * g.tau_cumulative - math.floor(n * g.tau_cumulative + 1e-12))
        c = mpmath.log(mpmath.mpf(g.delta_outer) / g.delta_inner) / 2
        mu = mpmath.e ** (-c) * rho ** (2 * x)
        total += x * mpmath.log(mu) - x * x * mpmath.log(rho)
        total += mpmath.log(mpmath.qp(-rho * mu, rho * rho)) + mpmath.log(mpmath.qp(-rho / mu, rho * rho))
    return float(total)


# -- configuration ---------------------------------------------------------------------


def test_config_defaults_and_hash():
    cfg = parse_config('{"potential": "gap", "mode": "gap", "n": [64, 128]}')
    assert cfg.n == (64, 128) and cfg.seed == 0
    assert len(cfg.hash()) == 64
    assert cfg.hash() == parse_config('{"mode": "gap", "n": [64, 128], "potential": "gap"}').hash()
    assert cfg.hash() != cfg.with_overrides(seed=1).hash()


@pytest.mark.parametrize(
    "text,line,needle",
    [
        ('{\n  "potential": "gap",\n  "mode": "gap",\n  "n": [16]\n}', 4, "at least 32"),
        ('{\n  "potential": "gap",\n  "mode": "ring",\n  "n": [64]\n}', 3, "mode"),
        ('{\n  "potential": "gap",\n  "mode": "gap",\n  "n": [64],\n  "colour": 1\n}', 5, "unknown key"),
        ('{\n  "potential": "gap",\n  "mode": "gap",\n  "n": [64],\n  "s_grid": [0, 5]\n}', 5, "log(min n)"),
        ('{\n  "potential": "gap",\n  "mode": "gap",\n  "n": [64],\n  "seed": -3\n}', 5, "seed"),
    ],
)
def test_config_errors_name_the_line(text, line, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "cfg.json")
    assert f"cfg.json:{line}:" in str(exc.value)
    assert needle in str(exc.value)


def test_config_rejects_bad_json_and_missing_keys():
    with pytest.raises(ConfigError, match="cfg.json:2"):
        parse_config('{"potential": "gap",\n "mode" "gap"}', "cfg.json")
    with pytest.raises(ConfigError, match="missing required key 'n'"):
        parse_config('{"potential": "gap", "mode": "gap"}')


def test_config_gap_records_validated():
    with pytest.raises(ConfigError, match="gaps"):
        parse_config('{"potential": "gap", "mode": "gap", "n": [64], "gaps": [[1.5, 1, 1, 0.5]]}')
    cfg = parse_config('{"potential": "gap", "mode": "gap", "n": [64], "gaps": [[0.5, 1, 2, 0.5]]}')
    assert cfg.gaps == (GapRecord(0.5, 1.0, 2.0, 0.5),)


def test_test_function_specs():
    assert parse_test_function("r^2")(np.array([3.0]))[0] == 9.0
    assert parse_test_function("1.5")(np.array([7.0]))[0] == 1.5
    with pytest.raises(ValueError):
        parse_test_function("sin")


# -- commands and exit codes ------------------------------------------------------------


def test_predict_outpost_parameters(tmp_path):
    assert cli.run(["predict", "--config", write_config(tmp_path)]) == 0
    data = json.loads((tmp_path / "out" / "predict.json").read_text())
    rec = data["results"][0]
    assert rec["theta_plus"] == pytest.approx(1 / 3, abs=1e-12)
    assert rec["q"] == pytest.approx(4 / 9, abs=1e-12)
    assert data["seed"] == 0 and len(data["config_hash"]) == 64


def test_predict_gap_oscillates(tmp_path):
    cfg = write_config(tmp_path, potential="gap", mode="gap", n=[255, 258])
    assert cli.run(["predict", "--config", cfg]) == 0
    res = json.loads((tmp_path / "out" / "predict.json").read_text())["results"]
    assert res[0]["x_n"] == pytest.approx(0.0, abs=1e-9) and res[1]["x_n"] == pytest.approx(0.4, abs=1e-9)
    # theta+ scales by rho^{2x} with rho = 2/3
    assert res[1]["theta_plus"] / res[0]["theta_plus"] == pytest.approx((2 / 3) ** 0.8, rel=1e-9)
    assert res[0]["fluct"]["r^2"]["lambda"] == pytest.approx(1.25)


def test_malformed_config_leaves_no_files(tmp_path):
    cfg = write_config(tmp_path, n=[8])
    assert cli.run(["predict", "--config", cfg]) == 2
    assert not (tmp_path / "out").exists()


def test_unreadable_config_and_bad_flags(tmp_path):
    assert cli.run(["predict", "--config", str(tmp_path / "missing.json")]) == 2
    assert cli.run(["predict"]) == 2
    assert cli.run(["predict", "--config", write_config(tmp_path), "--seed", "-1"]) == 2


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def broken(cfg, out):
        out.json("half.json", {})
        raise QuadratureFailure("integrand vanished")

    monkeypatch.setitem(cli.COMMANDS, "predict", broken)
    assert cli.run(["predict", "--config", write_config(tmp_path)]) == 3
    assert not (tmp_path / "out").exists()


def test_gap_mode_needs_gap(tmp_path):
    cfg = write_config(tmp_path, potential="ginibre-outpost", mode="gap")
    assert cli.run(["predict", "--config", cfg]) == 2


def test_norms_single_n_has_no_decay(tmp_path):
    cfg = write_config(tmp_path, n=[64], s_grid=[-1.0, 0.0, 1.0])
    assert cli.run(["norms", "--config", cfg]) == 0
    data = json.loads((tmp_path / "out" / "norms_summary.json").read_text())
    assert "decay" not in data
    assert (tmp_path / "out" / "norms_n64.csv").read_text().startswith("# schema_version=1\n")


def test_norms_decay_reported(tmp_path):
    cfg = write_config(tmp_path, n=[64, 128], s_grid=[0.0, 1.0])
    assert cli.run(["norms", "--config", cfg]) == 0
    data = json.loads((tmp_path / "out" / "norms_summary.json").read_text())
    assert len(data["decay"]["ratios"]) == 1


def test_norms_refuses_large_s(tmp_path):
    # log 32 = 3.47
    cfg = write_config(tmp_path, n=[32, 64], s_grid=[3.6])
    assert cli.run(["norms", "--config", cfg]) == 2


def test_simulate_reruns_bit_identically(tmp_path):
    cfg = write_config(tmp_path, n=[64], replicas=300, seed=77)
    assert cli.run(["simulate", "--config", cfg]) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert cli.run(["simulate", "--config", cfg]) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
    assert first == second and set(first) == {"counts_n64.csv", "simulate.json"}
    summary = json.loads(first["simulate.json"])
    assert summary["seed"] == 77 and summary["results"][0]["model"] == "heine"
    assert b"seed=77" in first["counts_n64.csv"]


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_config(tmp_path, n=[64], replicas=50, seed=1)
    assert cli.run(["simulate", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o9")]) == 0
    assert json.loads((tmp_path / "o9" / "simulate.json").read_text())["seed"] == 9


def test_thread_precedence(tmp_path, monkeypatch):
    parser = cli.build_parser()
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._threads(parser.parse_args(["predict", "--config", "x"])) == 3
    assert cli._threads(parser.parse_args(["predict", "--config", "x", "--threads", "2"])) == 2
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli._threads(parser.parse_args(["predict", "--config", "x"])) is None
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    assert cli.run(["predict", "--config", write_config(tmp_path)]) == 2


def test_threads_do_not_change_counts(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, n=[64], replicas=200, seed=5)
    assert cli.run(["simulate", "--config", cfg, "--threads", "1", "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv(cli.THREADS_ENV, "4")
    assert cli.run(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    body = lambda p: [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]  # noqa: E731
    assert body(tmp_path / "a" / "counts_n64.csv") == body(tmp_path / "b" / "counts_n64.csv")


def test_fluct_command(tmp_path):
    cfg = write_config(tmp_path, potential="gap", mode="gap", n=[64], replicas=200, test_functions=["r^2", "omega"])
    assert cli.run(["fluct", "--config", cfg]) == 0
    res = json.loads((tmp_path / "out" / "fluct.json").read_text())["results"]
    assert [r["test_function"] for r in res] == ["r^2", "omega"]
    assert res[1]["prediction"]["lambda"] == pytest.approx(1.0)
    assert all("bootstrap_se" in row for row in res[0]["cgf"])


def test_conformal_command(tmp_path):
    assert cli.run(["conformal", "--config", write_config(tmp_path)]) == 0
    data = json.loads((tmp_path / "out" / "conformal.json").read_text())
    assert data["c"] == pytest.approx(data["c_expected"], abs=1e-10)
    assert data["compat_residual"] < 1e-12 and abs(data["c_holomorphic_trace"]) < 1e-10


def test_free_energy_needs_six_sizes(tmp_path):
    assert cli.run(["free-energy", "--config", write_config(tmp_path, n=[32, 40, 48])]) == 2


def test_free_energy_command_is_labelled_exploratory(tmp_path):
    cfg = write_config(tmp_path, potential="gap", mode="gap", n=[40, 41, 42, 43, 44, 45, 46])
    assert cli.run(["free-energy", "--config", cfg]) == 0
    data = json.loads((tmp_path / "out" / "free_energy.json").read_text())
    assert data["status"] == "exploratory" and len(data["gn_terms"]) == 7
    assert "status=exploratory" in (tmp_path / "out" / "free_energy.csv").read_text()


# -- oscillatory term -------------------------------------------------------------------


def test_gn_matches_direct_formula_on_random_draws():
    rng = random.Random(12)
    for _ in range(20):
        gaps = [
            GapRecord(rng.uniform(0.05, 0.95), rng.uniform(0.2, 5.0), rng.uniform(0.2, 5.0), rng.uniform(0.05, 0.95))
            for _ in range(rng.randint(1, 3))
        ]
        n = rng.randint(32, 5000)
        assert gn_evaluate(gaps, n).value == pytest.approx(gn_direct(gaps, n), abs=1e-12)


def test_gn_symmetric_single_gap():
    rho = 0.6
    term = gn_evaluate([GapRecord(rho, 2.0, 2.0, 0.5)], 64)
    assert term.records[0].x == 0.0 and term.records[0].mu == 1.0
    assert term.value == pytest.approx(2 * float(mpmath.log(mpmath.qp(-rho, rho * rho))), abs=1e-13)


def test_gn_mu_matches_log_laplacian_ratio():
    g = GapRecord(0.7, 1.0, 4.0, 0.8)
    rec = gn_evaluate([g], 13).records[0]
    c = 0.5 * math.log(g.delta_outer / g.delta_inner)
    assert rec.x == pytest.approx(frac_part(13, 0.8))
    assert rec.mu == pytest.approx(math.exp(-c) * g.rho ** (2 * rec.x), rel=1e-14)


def test_gn_depends_on_n_only_through_fraction():
    g = [GapRecord(2 / 3, 0.8, 3.2, 0.8)]
    for n in (40, 41, 42, 43, 44):
        assert gn_evaluate(g, n).value == pytest.approx(gn_evaluate(g, n + 5).value, abs=1e-12)
    with pytest.raises(ValueError):
        gn_evaluate([GapRecord(1.2, 1.0, 1.0, 0.5)], 40)


def test_gap_record_of_gap_potential(gap_pot):
    (g,) = gap_records(gap_pot)
    assert g.rho == pytest.approx(2 / 3, abs=1e-10)
    assert g.tau_cumulative == pytest.approx(0.8, abs=1e-10)
    assert g.delta_outer / g.delta_inner == pytest.approx(4.0, rel=1e-10)


# -- free energy ------------------------------------------------------------------------


def test_ginibre_log_partition_closed_form():
    n = 50
    j = np.arange(n)
    exact = gammaln(n + 1) + np.sum(gammaln(j + 1) - (j + 1) * math.log(n))
    assert log_partition(ginibre(), n) == pytest.approx(exact, abs=1e-8)


def test_ginibre_fit_leading_coefficients():
    ns = list(range(40, 161, 8))
    j_sum = lambda n: float(np.sum(gammaln(np.arange(n) + 1) - (np.arange(n) + 1) * math.log(n)))  # noqa: E731
    log_z = [float(gammaln(n + 1)) + j_sum(n) for n in ns]
    fit = free_energy_fit(log_z, ns)
    assert fit.coefficients[0] == pytest.approx(-0.75, abs=1e-4)
    assert fit.coefficients[1] == pytest.approx(0.5, abs=1e-3)
    assert fit.correlation is None
    assert fit.rms_residual < 1e-3


def test_fit_refuses_short_lists():
    with pytest.raises(ValueError):
        free_energy_fit([1.0] * 5, [40, 41, 42, 43, 44])
