"""Command-line front end: validate a scenario, tabulate bounds, simulate, sweep.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import BoundCurve, QueueParameters, bound_curve
from .config import BUNDLED, ConfigError, ScenarioConfig, load_config
from .dsl import RatePmf, dsl_moments, rate_pmf
from .errors import ModelError, NumericalError
from .pd import QuadraticPricing, min_surge_price, safe_surge_price
from .simulator import empirical_exceedance, poisson_gof, run_ensemble, write_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
TUNE_PARAMS = ("rate_scale", "rates", "omega")
BOUND_FILES = {"occupancy": "occupancy_bounds.csv", "active": "active_occupancy_bounds.csv", "power": "power_bounds.csv"}
SENSITIVITY_SE = 3.0


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def validation_checks(cfg: ScenarioConfig) -> list[Check]:
    """Checks that need the population and the model together.

    Structural problems (a bad menu ordering, malformed fields) are already
    rejected while parsing.
    """
    checks = []
    pop = cfg.population
    for label, dist in (("demand", pop.demand), ("impatience", pop.impatience), ("dwell", pop.dwell)):
        mass = dist.total_mass()
        checks.append(Check(f"{label} distribution mass", abs(mass - 1.0) <= 1e-8, f"{mass:.12g}"))
    if cfg.facility is not None:
        f = cfg.facility
        thr = [f.switch_threshold(i, i + 1) for i in range(1, f.n_levels)]
        checks.append(Check(
            "rate/price ordering",
            True,
            "rates and prices increase, per-kWh price gap below the rate gap; switch thresholds "
            + (", ".join(f"{t:.6g}" for t in thr) or "n/a") + " $/hr",
        ))
    else:
        p = cfg.pricing
        x_max = pop.demand.upper
        limit = x_max / p.rate_cap
        feasible = p.target_dwell > limit
        checks.append(Check(
            "target dwell feasibility",
            feasible,
            f"omega = {p.target_dwell:.6g} hr must exceed x_max / R_max = {limit:.6g} hr",
        ))
        if feasible:
            lo = min_surge_price(p.target_dwell, p.rate_cap, pop.demand.lower, x_max, pop.impatience.lower)
            hi = safe_surge_price(p, p.rate_cap, pop)
            checks.append(Check("surge price vs bound at min impatience", p.surge > lo, f"D = {p.surge:.6g} > {lo:.6g}"))
            checks.append(Check(
                "surge price vs bound at max impatience (rate cap)",
                p.surge > hi,
                f"D = {p.surge:.6g} > {hi:.6g}",
            ))
    return checks


def require_valid(cfg: ScenarioConfig) -> None:
    bad = [c for c in validation_checks(cfg) if not c.passed]
    if bad:
        raise ConfigError("; ".join(f"{c.name}: {c.detail}" for c in bad))


@dataclass
class Analysis:
    cfg: ScenarioConfig
    moments: object
    params: QueueParameters
    stderr: dict
    curves: dict[str, BoundCurve]
    pmf: RatePmf | None = None
    rows: list = field(default_factory=list)  # (quantity, value, stderr, method)


def analyze(cfg: ScenarioConfig) -> Analysis:
    """Moments of the user behaviour and the bound curves over the configured grids."""
    require_valid(cfg)
    model = cfg.build_model()
    pop = cfg.population
    pmf = None
    if cfg.facility is not None:
        pmf = rate_pmf(cfg.facility, pop)
        mom = dsl_moments(cfg.facility, pop, pmf=pmf, samples=cfg.moment_samples, seed=cfg.moment_seed,
                          max_stderr=cfg.moment_max_stderr)
        se = dict(mom.stderr)
        names = ("mean_rate", "mean_rate_sq", "mean_charge_time", "mean_dwell", "mean_active")
        rows = [(n, getattr(mom, n), mom.stderr.get(n), "analytic" if n.startswith("mean_rate") else mom.method) for n in names]
    else:
        mom = model.moments(pop, samples=cfg.moment_samples, seed=cfg.moment_seed, max_stderr=cfg.moment_max_stderr)
        se = {
            "mean_dwell": mom.stderr["mean_deadline"],
            "mean_active": mom.stderr["mean_deadline"],
            "mean_rate": mom.stderr["mean_rate"],
            "mean_rate_sq": mom.stderr["mean_rate_sq"],
        }
        rows = [(n, getattr(mom, n), mom.stderr.get(n), mom.method) for n in ("mean_deadline", "mean_rate", "mean_rate_sq")]
        if mom.analytic_mean_deadline is not None:
            rows.append(("analytic_mean_deadline", mom.analytic_mean_deadline, None, "analytic"))
    params = mom.queue_parameters(pop.arrival_rate, model.rate_cap)
    rows.append(("mean_present", params.mean_present, _scaled(se.get("mean_dwell"), pop.arrival_rate), mom.method))
    rows.append(("mean_charging", params.mean_charging, _scaled(se.get("mean_active"), pop.arrival_rate), mom.method))
    curves = {
        "occupancy": bound_curve(params, cfg.occupancy_grid, "occupancy"),
        "active": bound_curve(params, cfg.occupancy_grid, "active"),
        "power": bound_curve(params, cfg.power_grid, "power"),
    }
    return Analysis(cfg, mom, params, se, curves, pmf, rows)


def _scaled(se, k):
    return None if se is None else se * k


def _fmt(v) -> str:
    return "" if v is None else f"{v:.9g}"


def _writer(path: Path):
    fh = path.open("w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_moments_csv(an: Analysis, path: Path) -> Path:
    fh, w = _writer(path)
    with fh:
        w.writerow(["quantity", "value", "stderr", "method", "reference"])
        for name, val, se, method in an.rows:
            w.writerow([name, _fmt(val), _fmt(se), method, _fmt(an.cfg.reference.get(name))])
    return path


def write_pmf_csv(pmf: RatePmf, path: Path) -> Path:
    fh, w = _writer(path)
    with fh:
        w.writerow(["level", "rate_kw", "probability"])
        for i, (r, p) in enumerate(zip(pmf.rates, pmf.probs), start=1):
            w.writerow([i, _fmt(r), _fmt(p)])
    return path


def write_sensitivity_csv(an: Analysis, path: Path) -> Path:
    """Bounds recomputed with every estimated moment moved by plus and minus three standard errors."""
    lo_p = an.params.shifted(-SENSITIVITY_SE, an.stderr)
    hi_p = an.params.shifted(SENSITIVITY_SE, an.stderr)
    fh, w = _writer(path)
    with fh:
        w.writerow(["kind", "threshold", "bound", "bound_low", "bound_high"])
        for kind, curve in an.curves.items():
            a = bound_curve(lo_p, curve.thresholds, kind).bounds
            b = bound_curve(hi_p, curve.thresholds, kind).bounds
            for t, v, x, y in zip(curve.thresholds, curve.bounds, a, b):
                w.writerow([kind, _fmt(t), _fmt(v), _fmt(min(x, y)), _fmt(max(x, y))])
    return path


def print_report(an: Analysis, out=None) -> None:
    out = out or sys.stdout
    cfg = an.cfg
    print(f"scenario {cfg.name} (model {cfg.model}), arrival rate {cfg.population.arrival_rate:g} /hr", file=out)
    if an.pmf is not None:
        pmf = ", ".join(f"{r:g} kW: {p:.5f}" for r, p in zip(an.pmf.rates, an.pmf.probs))
        print(f"  rate distribution  {pmf}", file=out)
    for name, val, se, method in an.rows:
        err = f" +/- {se:.3g}" if se is not None else ""
        print(f"  {name:<24s}{val:.6g}{err}  [{method}]", file=out)
    refs = [(k, v) for k, v in cfg.reference.items()]
    if refs:
        computed = {n: v for n, v, _, _ in an.rows}
        print("  published reference values (not reproduced exactly; shown for comparison):", file=out)
        for k, v in refs:
            c = computed.get(k)
            print(f"    {k:<22s}{v:g}" + (f"  (computed {c:.6g})" if c is not None else ""), file=out)


def _out_dir(cfg: ScenarioConfig) -> Path:
    d = Path(cfg.output_dir or f"out/{cfg.name}")
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_validate(cfg: ScenarioConfig, args) -> int:
    checks = validation_checks(cfg)
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    print("valid" if ok else "invalid")
    return EXIT_OK if ok else EXIT_CONFIG


def write_bounds(an: Analysis, out: Path) -> list[Path]:
    files = [an.curves[k].to_csv(out / name) for k, name in BOUND_FILES.items()]
    files.append(write_moments_csv(an, out / "moments.csv"))
    files.append(write_sensitivity_csv(an, out / "bound_sensitivity.csv"))
    if an.pmf is not None:
        files.append(write_pmf_csv(an.pmf, out / "rate_pmf.csv"))
    return files


def cmd_bounds(cfg: ScenarioConfig, args) -> int:
    an = analyze(cfg)
    out = _out_dir(cfg)
    files = write_bounds(an, out)
    if getattr(args, "plot", False):
        from .plotting import plot_bound_csv

        for kind, name in BOUND_FILES.items():
            files.append(plot_bound_csv(out / name, kind, out / name.replace(".csv", ".png")))
    print_report(an)
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_simulate(cfg: ScenarioConfig, args) -> int:
    an = analyze(cfg)
    sim = cfg.simulation
    stats, traces = run_ensemble(
        cfg.build_model(),
        cfg.population,
        replications=sim.replications,
        seed=sim.seed,
        t_star=sim.observation_time,
        warmup=sim.warmup,
        series_points=sim.series_points,
        return_traces=True,
    )
    out = _out_dir(cfg)
    files = []
    for kind, qty in (("occupancy", "eta"), ("active", "eta_act"), ("power", "q")):
        curve = an.curves[kind]
        ex = empirical_exceedance(stats, curve.thresholds, qty)
        path = out / f"{kind}_exceedance.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(["threshold", "empirical_prob", "stderr", "bound", "confidence"])
            for row in zip(curve.thresholds, ex.prob, ex.stderr, curve.bounds, curve.confidence):
                w.writerow([_fmt(v) for v in row])
        files.append(path)
        below = int(np.count_nonzero(ex.prob < curve.confidence - 3 * ex.stderr))
        print(f"{kind}: bound dominated at {len(curve.thresholds) - below}/{len(curve.thresholds)} grid points")
    path = out / "percentiles.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["quantity", "level", "mean", "half_width"])
        for qty, pc in (("eta", stats.eta_percentiles), ("q", stats.q_percentiles)):
            for row in zip(pc.levels, pc.mean, pc.half_width):
                w.writerow([qty] + [_fmt(v) for v in row])
    files.append(path)
    if getattr(args, "traces", False):
        files.append(write_trace_csv(traces, out / "traces.csv"))
    stat, p, cells = poisson_gof(stats.eta, an.params.mean_present)
    print(f"occupancy at t* = {stats.t_star:.6g} hr vs Poisson({an.params.mean_present:.6g}): chi2 = {stat:.4g}, "
          f"{cells} cells, p = {p:.4g}")
    if getattr(args, "plot", False):
        from .plotting import plot_exceedance_csv

        for kind in ("occupancy", "active", "power"):
            files.append(plot_exceedance_csv(out / f"{kind}_exceedance.csv", kind, out / f"{kind}_exceedance.png",
                                             out / "percentiles.csv" if kind != "active" else None))
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {text!r}") from None


def sweep_config(cfg: ScenarioConfig, param: str, value: str) -> ScenarioConfig:
    """Scenario with one tunable parameter replaced."""
    if param not in TUNE_PARAMS:
        raise ConfigError(f"--param: unknown sweep parameter {param!r} (choose from {', '.join(TUNE_PARAMS)})")
    nums = _parse_floats(value)
    if param == "omega":
        if not isinstance(cfg.pricing, QuadraticPricing):
            raise ConfigError("--param omega needs a deadline-pricing scenario")
        if len(nums) != 1:
            raise ConfigError(f"--values: omega takes one number per setting, got {value!r}")
        try:
            return replace(cfg, pricing=cfg.pricing.with_target_dwell(nums[0]))
        except ModelError as exc:
            raise ConfigError(f"--values {value}: {exc}") from None
    if cfg.facility is None:
        raise ConfigError(f"--param {param} needs a service-level scenario")
    if param == "rate_scale":
        if len(nums) != 1:
            raise ConfigError(f"--values: rate_scale takes one number per setting, got {value!r}")
        rates = cfg.facility.rates * nums[0]
    else:
        rates = nums
        if len(rates) != cfg.facility.n_levels:
            raise ConfigError(f"--values {value}: expected {cfg.facility.n_levels} comma-separated rates")
    try:
        return replace(cfg, facility=cfg.facility.with_rates(rates))
    except ModelError as exc:
        raise ConfigError(f"--values {value}: {exc}") from None


def cmd_tune(cfg: ScenarioConfig, args) -> int:
    param, values = args.param, args.values
    sweeps = [(v, sweep_config(cfg, param, v)) for v in values]
    out = _out_dir(cfg)
    bpath, mpath = out / "tune_bounds.csv", out / "tune_moments.csv"
    bfh, bw = _writer(bpath)
    mfh, mw = _writer(mpath)
    with bfh, mfh:
        bw.writerow(["param", "setting", "kind", "threshold", "bound", "confidence"])
        mw.writerow(["param", "setting", "quantity", "value", "stderr"])
        for value, c in sweeps:
            an = analyze(c)
            for kind, curve in an.curves.items():
                for t, b, conf in curve.rows():
                    bw.writerow([param, value, kind, _fmt(t), _fmt(b), _fmt(conf)])
            for name, val, se, _ in an.rows:
                mw.writerow([param, value, name, _fmt(val), _fmt(se)])
            pr = an.params
            print(f"{param} = {value}: mean present {pr.mean_present:.4g}, mean charging {pr.mean_charging:.4g}, "
                  f"mean power {pr.mean_charging * pr.mean_rate:.4g} kW")
    files = [bpath, mpath]
    if getattr(args, "plot", False):
        from .plotting import plot_tune_csv

        files.append(plot_tune_csv(bpath, out / "tune_bounds.png"))
    for f in files:
        print(f"wrote {f}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "bounds": cmd_bounds, "simulate": cmd_simulate, "tune": cmd_tune}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help=f"scenario YAML path or bundled name ({', '.join(BUNDLED)})")
    common.add_argument("--seed", type=int, help="override the moment and simulation seeds")
    common.add_argument("--out", help="output directory (default: out/<scenario name>)")
    common.add_argument("--replications", type=int, help="override the number of simulation replications")
    common.add_argument("--plot", action="store_true", help="also render PNG figures from the CSVs")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a scenario without computing anything")
    sub.add_parser("bounds", parents=[common], help="moments and bound curves")
    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo ensemble joined with the bounds")
    p.add_argument("--traces", action="store_true", help="also write every replication's time series")
    p = sub.add_parser("tune", parents=[common], help="recompute the bounds over a parameter sweep")
    p.add_argument("--param", required=True, help=f"one of {', '.join(TUNE_PARAMS)}")
    p.add_argument("--values", required=True, nargs="+", help="settings; a rate menu is comma-separated, e.g. 30,40")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.replications, args.out)
        return COMMANDS[args.command](cfg, args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
