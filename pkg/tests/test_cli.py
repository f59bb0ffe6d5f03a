import csv

import pytest
import yaml

from evcap.cli import main
from evcap.config import BUNDLED

SMALL = {"moments": {"samples": 20000, "seed": 0}, "simulation": {"replications": 50, "seed": 1}}


def small_config(tmp_path, name, **changes):
    """A bundled scenario shrunk for quick runs, written to ``tmp_path``."""
    from importlib import resources

    d = yaml.safe_load(resources.files("evcap.scenarios").joinpath(f"{name}.yaml").read_text())
    d.update(SMALL)
    d["grids"] = {"occupancy": {"start": 0, "stop": 150, "step": 5}, "power": {"start": 0, "stop": 3000, "step": 100}}
    for k, v in changes.items():
        d[k] = v
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(d))
    return p


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", BUNDLED)
def test_validate_bundled(name, capsys):
    assert main(["validate", name]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_bad_ordering(tmp_path, capsys):
    p = small_config(tmp_path, "table3_dsl")
    d = yaml.safe_load(p.read_text())
    d["dsl"]["levels"][0]["price_per_kwh"] = 0.5
    p.write_text(yaml.safe_dump(d))
    assert main(["validate", str(p)]) == 2
    assert "rate/price ordering violated" in capsys.readouterr().err


def test_validate_infeasible_target(tmp_path, capsys):
    p = small_config(tmp_path, "table3_pd")
    d = yaml.safe_load(p.read_text())
    d["pd"]["omega_hr"] = 2.0
    p.write_text(yaml.safe_dump(d))
    assert main(["validate", str(p)]) == 2
    out = capsys.readouterr().out
    assert "FAIL  target dwell feasibility" in out and "x_max / R_max = 2" in out
    # every other command refuses the same scenario
    assert main(["bounds", str(p), "--out", str(tmp_path / "o")]) == 2


def test_validate_reports_both_surge_bounds(capsys):
    main(["validate", "table3_pd"])
    out = capsys.readouterr().out
    assert "bound at min impatience" in out and "bound at max impatience" in out


def test_parse_error_exit(tmp_path, capsys):
    p = tmp_path / "x.yaml"
    p.write_text("model: pd\npd: {surge_d: 2}\npopulation: {arrival_rate: 1}\n")
    assert main(["validate", str(p)]) == 2
    assert "population.demand" in capsys.readouterr().err


def test_bounds_free_parking(tmp_path, capsys):
    out = tmp_path / "fp"
    assert main(["bounds", "table3_dsl_fp", "--out", str(out)]) == 0
    rows = {r["quantity"]: r for r in read(out / "moments.csv")}
    assert float(rows["mean_rate"]["value"]) == pytest.approx(39.35, abs=1e-9)
    mean_present = float(rows["mean_present"]["value"])
    for r in read(out / "occupancy_bounds.csv"):
        if float(r["threshold"]) <= mean_present:
            assert (r["bound"], r["confidence"]) == ("1", "0")
    pmf = [float(r["probability"]) for r in read(out / "rate_pmf.csv")]
    assert pmf == pytest.approx([0.075, 0.1, 0.14, 0.685])


def test_bounds_pd_report(tmp_path, capsys):
    p = small_config(tmp_path, "table3_pd")
    assert main(["bounds", str(p), "--out", str(tmp_path / "pd")]) == 0
    out = capsys.readouterr().out
    assert "3.92" in out and "published reference" in out
    rows = {r["quantity"]: r for r in read(tmp_path / "pd" / "moments.csv")}
    assert float(rows["analytic_mean_deadline"]["value"]) == pytest.approx(3.968, abs=5e-4)
    assert float(rows["mean_deadline"]["value"]) == pytest.approx(3.968, abs=3e-3)
    assert rows["mean_deadline"]["reference"] == "3.92"
    sens = read(tmp_path / "pd" / "bound_sensitivity.csv")
    assert all(float(r["bound_low"]) <= float(r["bound"]) <= float(r["bound_high"]) for r in sens)


def test_bounds_files_and_plots(tmp_path):
    p = small_config(tmp_path, "table3_dsl")
    out = tmp_path / "d"
    assert main(["bounds", str(p), "--out", str(out), "--plot"]) == 0
    for name in ("occupancy_bounds", "active_occupancy_bounds", "power_bounds"):
        assert (out / f"{name}.csv").read_text().startswith("threshold,bound,confidence\n")
        assert (out / f"{name}.png").stat().st_size > 0


def test_simulate_deterministic(tmp_path):
    p = small_config(tmp_path, "table3_dsl")
    for d in ("a", "b"):
        assert main(["simulate", str(p), "--out", str(tmp_path / d), "--traces"]) == 0
    for name in ("occupancy_exceedance.csv", "power_exceedance.csv", "active_exceedance.csv", "percentiles.csv", "traces.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read(tmp_path / "a" / "occupancy_exceedance.csv")[0].keys() == {
        "threshold", "empirical_prob", "stderr", "bound", "confidence"}


def test_simulate_seed_flag(tmp_path):
    p = small_config(tmp_path, "table3_pd")
    main(["simulate", str(p), "--out", str(tmp_path / "a")])
    main(["simulate", str(p), "--out", str(tmp_path / "b"), "--seed", "99"])
    assert (tmp_path / "a" / "percentiles.csv").read_bytes() != (tmp_path / "b" / "percentiles.csv").read_bytes()


def test_simulate_bound_dominated(tmp_path):
    p = small_config(tmp_path, "table3_pd")
    assert main(["simulate", str(p), "--out", str(tmp_path / "s"), "--plot"]) == 0
    for kind in ("occupancy", "power"):
        for r in read(tmp_path / "s" / f"{kind}_exceedance.csv"):
            assert float(r["confidence"]) <= float(r["empirical_prob"]) + 3 * float(r["stderr"]) + 1e-12
        assert (tmp_path / "s" / f"{kind}_exceedance.png").exists()


def test_simulate_one_replication(tmp_path, capsys):
    assert main(["simulate", "table3_pd", "--replications", "1", "--out", str(tmp_path)]) == 2
    assert "at least 2" in capsys.readouterr().err


def test_numerical_failure_exit(tmp_path, capsys):
    p = small_config(tmp_path, "table3_pd", moments={"samples": 100, "seed": 0, "max_stderr": 1e-9})
    assert main(["bounds", str(p), "--out", str(tmp_path / "n")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_tune_single_value_equals_bounds(tmp_path):
    p = small_config(tmp_path, "sec42_pd")
    assert main(["bounds", str(p), "--out", str(tmp_path / "b")]) == 0
    assert main(["tune", str(p), "--param", "omega", "--values", "4", "--out", str(tmp_path / "t")]) == 0
    tune = read(tmp_path / "t" / "tune_bounds.csv")
    for kind, name in (("occupancy", "occupancy_bounds"), ("active", "active_occupancy_bounds"), ("power", "power_bounds")):
        ref = [(r["threshold"], r["bound"], r["confidence"]) for r in read(tmp_path / "b" / f"{name}.csv")]
        got = [(r["threshold"], r["bound"], r["confidence"]) for r in tune if r["kind"] == kind]
        assert got == ref


def test_tune_rate_scale(tmp_path):
    p = small_config(tmp_path, "sec42_dsl")
    assert main(["tune", str(p), "--param", "rate_scale", "--values", "1", "2", "--out", str(tmp_path), "--plot"]) == 0
    rows = read(tmp_path / "tune_moments.csv")
    er = {r["setting"]: float(r["value"]) for r in rows if r["quantity"] == "mean_rate"}
    assert er["2"] > er["1"]
    assert (tmp_path / "tune_bounds.png").exists()


@pytest.mark.parametrize(
    "name,param,values",
    [("sec42_pd", "rates", ["1,2"]), ("sec42_dsl", "omega", ["3"]), ("sec42_dsl", "colour", ["1"]),
     ("sec42_dsl", "rates", ["30,40,50"]), ("sec42_dsl", "rates", ["40,30"]), ("sec42_pd", "omega", ["1.5"])],
)
def test_tune_rejects(tmp_path, name, param, values):
    p = small_config(tmp_path, name)
    assert main(["tune", str(p), "--param", param, "--values", *values, "--out", str(tmp_path)]) == 2
