"""Scenario configuration files (YAML) and the bundled scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .distributions import BoundedDistribution, UserPopulation, make_point, make_uniform, with_atom_at_zero
from .dsl import DslFacility, DslModel
from .errors import ModelError
from .pd import PdModel, QuadraticPricing

MODELS = ("dsl", "dsl_fp", "pd")
BUNDLED = ("table3_dsl", "table3_dsl_fp", "table3_pd", "sec42_dsl", "sec42_pd")


class ConfigError(ModelError):
    """Configuration file could not be parsed or failed validation."""


@dataclass(frozen=True)
class SimulationSettings:
    replications: int = 1000
    seed: int = 0
    warmup: float | None = None
    observation_time: float | None = None
    series_points: int = 50


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: str
    population: UserPopulation
    facility: DslFacility | None = None
    pricing: QuadraticPricing | None = None
    moment_samples: int = 1_000_000
    moment_seed: int = 0
    moment_max_stderr: float | None = None
    simulation: SimulationSettings = field(default_factory=SimulationSettings)
    occupancy_grid: np.ndarray = field(default_factory=lambda: np.arange(0.0, 101.0))
    power_grid: np.ndarray = field(default_factory=lambda: np.arange(0.0, 2501.0, 25.0))
    output_dir: str | None = None
    reference: dict = field(default_factory=dict)

    def build_model(self):
        if self.model == "pd":
            return PdModel(self.pricing)
        return DslModel(self.facility, tag=self.model)

    def with_overrides(self, seed: int | None = None, replications: int | None = None, output_dir: str | None = None) -> "ScenarioConfig":
        sim = self.simulation
        cfg = self
        if seed is not None:
            sim = replace(sim, seed=int(seed))
            cfg = replace(cfg, moment_seed=int(seed))
        if replications is not None:
            if replications < 2:
                raise ConfigError("simulation.replications: need at least 2 replications for error bars")
            sim = replace(sim, replications=int(replications))
        cfg = replace(cfg, simulation=sim)
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        return cfg


def _get(block: dict, key: str, path: str, kind=float, default: Any = ...):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected a mapping")
    if key not in block or block[key] is None:
        if default is ...:
            raise ConfigError(f"{path}.{key}: required field missing")
        return default
    try:
        val = kind(block[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {block[key]!r}") from None
    if kind is float and not math.isfinite(val):
        raise ConfigError(f"{path}.{key}: must be finite")
    return val


def _wrap(path: str, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except ModelError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_distribution(block: dict, path: str) -> BoundedDistribution:
    kind = str(block.get("kind", "uniform")) if isinstance(block, dict) else None
    if kind == "point":
        return _wrap(path, make_point, _get(block, "value", path))
    if kind != "uniform":
        raise ConfigError(f"{path}.kind: expected 'uniform' or 'point', got {kind!r}")
    base = _wrap(path, make_uniform, _get(block, "lower", path), _get(block, "upper", path))
    p0 = _get(block, "atom_at_zero", path, default=0.0)
    return _wrap(path, with_atom_at_zero, base, p0) if p0 else base


def _grid(spec, path: str) -> np.ndarray:
    if isinstance(spec, dict):
        start, stop, step = (_get(spec, k, path) for k in ("start", "stop", "step"))
        if step <= 0 or stop < start:
            raise ConfigError(f"{path}: need step > 0 and stop >= start")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        grid = start + step * np.arange(n)
    elif isinstance(spec, list):
        try:
            grid = np.array([float(v) for v in spec])
        except (TypeError, ValueError):
            raise ConfigError(f"{path}: grid values must be numbers") from None
    else:
        raise ConfigError(f"{path}: expected a list or {{start, stop, step}}")
    if grid.size == 0:
        raise ConfigError(f"{path}: grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ConfigError(f"{path}: grid must be ascending")
    return grid


def parse_config(doc: dict, default_name: str = "scenario") -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a mapping")
    model = str(doc.get("model", ""))
    if model not in MODELS:
        raise ConfigError(f"model: expected one of {', '.join(MODELS)}, got {model!r}")
    has_dsl, has_pd = "dsl" in doc, "pd" in doc
    if has_dsl and has_pd:
        raise ConfigError("exactly one of the 'dsl' and 'pd' blocks may be present")
    if model == "pd" and not has_pd:
        raise ConfigError("pd: block required for model 'pd'")
    if model != "pd" and not has_dsl:
        raise ConfigError(f"dsl: block required for model '{model}'")

    pb = doc.get("population")
    if not isinstance(pb, dict):
        raise ConfigError("population: block required")
    demand = parse_distribution(pb.get("demand"), "population.demand")
    impatience = parse_distribution(pb.get("impatience"), "population.impatience")
    if model == "dsl_fp":
        if pb.get("dwell") is not None:
            dw = parse_distribution(pb["dwell"], "population.dwell")
            if not (dw.is_point and dw.lower == 0):
                raise ConfigError("population.dwell: model 'dsl_fp' requires zero dwell")
        dwell = make_point(0.0)
    else:
        dwell = parse_distribution(pb.get("dwell"), "population.dwell")
    population = _wrap("population", UserPopulation, _get(pb, "arrival_rate", "population"), demand, impatience, dwell)

    facility = pricing = None
    if model in ("dsl", "dsl_fp"):
        db = doc["dsl"]
        levels = db.get("levels") if isinstance(db, dict) else None
        if not isinstance(levels, list) or not levels:
            raise ConfigError("dsl.levels: expected a nonempty list of {rate_kw, price_per_kwh}")
        rates = [_get(lv, "rate_kw", f"dsl.levels[{i}]") for i, lv in enumerate(levels)]
        prices = [_get(lv, "price_per_kwh", f"dsl.levels[{i}]") for i, lv in enumerate(levels)]
        fee = _get(db, "parking_fee_per_hr", "dsl", default=0.0)
        if model == "dsl_fp" and fee != 0:
            raise ConfigError("dsl.parking_fee_per_hr: model 'dsl_fp' requires a zero parking fee")
        facility = _wrap("dsl", DslFacility.from_menu, rates, prices, fee)
    else:
        b = doc["pd"]
        pricing = _wrap(
            "pd",
            QuadraticPricing,
            _get(b, "surge_d", "pd"),
            _get(b, "base_b", "pd"),
            _get(b, "omega_hr", "pd"),
            _get(b, "rate_cap_kw", "pd"),
        )

    mb = doc.get("moments") or {}
    sb = doc.get("simulation") or {}
    sim = SimulationSettings(
        replications=_get(sb, "replications", "simulation", int, 1000),
        seed=_get(sb, "seed", "simulation", int, 0),
        warmup=_get(sb, "warmup", "simulation", float, None),
        observation_time=_get(sb, "observation_time", "simulation", float, None),
        series_points=_get(sb, "series_points", "simulation", int, 50),
    )
    if sim.replications < 2:
        raise ConfigError("simulation.replications: need at least 2 replications for error bars")
    if sim.warmup is not None and sim.observation_time is not None and not sim.observation_time > sim.warmup:
        raise ConfigError("simulation.observation_time: must exceed the warmup")
    gb = doc.get("grids") or {}
    kw = {}
    if "occupancy" in gb:
        kw["occupancy_grid"] = _grid(gb["occupancy"], "grids.occupancy")
    if "power" in gb:
        kw["power_grid"] = _grid(gb["power"], "grids.power")
    samples = _get(mb, "samples", "moments", int, 1_000_000)
    if samples < 2:
        raise ConfigError("moments.samples: need at least 2")
    ref = doc.get("reference") or {}
    if not isinstance(ref, dict):
        raise ConfigError("reference: expected a mapping")
    return ScenarioConfig(
        name=str(doc.get("name", default_name)),
        model=model,
        population=population,
        facility=facility,
        pricing=pricing,
        moment_samples=samples,
        moment_seed=_get(mb, "seed", "moments", int, 0),
        moment_max_stderr=_get(mb, "max_stderr", "moments", float, None),
        simulation=sim,
        output_dir=doc.get("output_dir"),
        reference={str(k): float(v) for k, v in ref.items()},
        **kw,
    )


def load_config(source: str | Path) -> ScenarioConfig:
    """Load a scenario from a YAML path or the name of a bundled scenario."""
    path = Path(source)
    if path.is_file():
        text, name = path.read_text(), path.stem
    elif str(source) in BUNDLED:
        text = resources.files("evcap.scenarios").joinpath(f"{source}.yaml").read_text()
        name = str(source)
    else:
        raise ConfigError(f"{source}: no such file or bundled scenario ({', '.join(BUNDLED)})")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML parse error: {exc}") from None
    return parse_config(doc, default_name=name)
