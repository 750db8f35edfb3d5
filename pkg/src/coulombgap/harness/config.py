"""Experiment configuration: JSON files validated with line-precise messages."""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from ..errors import ConfigError
from ..fluctuation import RadialTestFunction, constant_function, log_function, power_function, step_function
from ..orthopoly import default_step
from ..potential import RadialPotential, gap_potential, ginibre, ginibre_outpost, scaled_potential

SCHEMA_VERSION = 1
MIN_N = 32

BUILTINS = {
    "ginibre": lambda: ginibre(),
    "ginibre-outpost": lambda: ginibre_outpost(),
    "gap": lambda: gap_potential(1.25),
}


@dataclass(frozen=True)
class GapRecord:
    """One gap of a multi-component droplet for the oscillatory term."""

    rho: float
    delta_inner: float
    delta_outer: float
    tau_cumulative: float


@dataclass(frozen=True)
class ExperimentConfig:
    potential: str
    mode: str
    n: tuple[int, ...]
    s_grid: tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    t_grid: tuple[float, ...] = (-1.0, 0.0, 1.0)
    replicas: int = 10000
    seed: int = 0
    threads: int = 1
    tau: float | None = None
    threshold: float | None = None
    test_functions: tuple[str, ...] = ("r^2",)
    ellipse: dict[str, float] = field(default_factory=dict)
    gaps: tuple[GapRecord, ...] = ()
    output: str = "out"
    base_dir: str = "."

    def load_potential(self) -> RadialPotential:
        if self.potential in BUILTINS:
            pot = BUILTINS[self.potential]()
        else:
            path = Path(self.potential)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            try:
                pot = RadialPotential.load(path)
            except FileNotFoundError as exc:
                raise ConfigError(f"potential file not found: {path}") from exc
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ConfigError(f"potential file {path} is invalid: {exc}") from exc
        if self.tau is not None:
            pot = scaled_potential(pot, self.tau)
        return pot

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data.pop("base_dir")
        data["schema_version"] = SCHEMA_VERSION
        return data

    def hash(self) -> str:
        """SHA-256 of the canonical JSON of the effective configuration."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_overrides(self, **kwargs: Any) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def parse_test_function(spec: str, pot: RadialPotential | None = None) -> RadialTestFunction:
    """'r^K', 'log', 'omega' or a numeric constant.

    'omega' needs the potential, whose default step it returns; without a
    potential only the syntax is checked.
    """
    text = spec.strip().replace(" ", "")
    if text.startswith("r^"):
        try:
            return power_function(float(text[2:]))
        except ValueError:
            raise ValueError(f"bad exponent in {spec!r}") from None
    if text in ("log", "logr"):
        return log_function()
    if text == "omega":
        if pot is None:
            return constant_function(0.0)
        return step_function(default_step(pot))
    try:
        return constant_function(float(text))
    except ValueError:
        raise ValueError(f"unknown test function {spec!r}; use r^K, log, omega or a number") from None


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return None if m is None else text.count("\n", 0, m.start()) + 1


class _Checker:
    def __init__(self, text: str, source: str) -> None:
        self.text = text
        self.source = source

    def fail(self, key: str, msg: str) -> ConfigError:
        line = _line_of(self.text, key)
        where = f"{self.source}:{line}" if line is not None else self.source
        return ConfigError(f"{where}: {key}: {msg}")

    def number(self, key: str, value: Any) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise self.fail(key, f"expected a finite number, got {value!r}")
        return float(value)

    def integer(self, key: str, value: Any, lo: int | None = None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.fail(key, f"expected an integer, got {value!r}")
        if lo is not None and value < lo:
            raise self.fail(key, f"must be at least {lo}, got {value}")
        return value


_KNOWN = {
    "schema_version", "potential", "mode", "n", "s_grid", "t_grid", "replicas", "seed", "threads",
    "tau", "threshold", "test_functions", "ellipse", "gaps", "output",
}


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> ExperimentConfig:
    """Parse and validate a JSON configuration.

    Errors name the source and the line of the offending key.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}:1: top level must be an object")
    ck = _Checker(text, source)
    for key in raw:
        if key not in _KNOWN:
            raise ck.fail(key, "unknown key")
    if raw.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ck.fail("schema_version", f"unsupported version {raw['schema_version']!r}")
    for key in ("potential", "mode", "n"):
        if key not in raw:
            raise ConfigError(f"{source}: missing required key {key!r}")
    pot = raw["potential"]
    if not isinstance(pot, str) or not pot:
        raise ck.fail("potential", "expected a builtin name or a file path")
    mode = raw["mode"]
    if mode not in ("outpost", "gap"):
        raise ck.fail("mode", f"expected 'outpost' or 'gap', got {mode!r}")
    ns = raw["n"]
    if isinstance(ns, int) and not isinstance(ns, bool):
        ns = [ns]
    if not isinstance(ns, list) or not ns:
        raise ck.fail("n", "expected a nonempty list of integers")
    n_vals = tuple(ck.integer("n", v, MIN_N) for v in ns)
    kwargs: dict[str, Any] = {"potential": pot, "mode": mode, "n": n_vals, "base_dir": base_dir}
    for key in ("s_grid", "t_grid"):
        if key in raw:
            vals = raw[key]
            if not isinstance(vals, list):
                raise ck.fail(key, "expected a list of numbers")
            kwargs[key] = tuple(ck.number(key, v) for v in vals)
    s_cap = math.log(min(n_vals))
    if any(abs(s) > s_cap for s in kwargs.get("s_grid", ExperimentConfig.s_grid)):
        raise ck.fail("s_grid", f"|s| must not exceed log(min n) = {s_cap:.4f}")
    if "replicas" in raw:
        kwargs["replicas"] = ck.integer("replicas", raw["replicas"], 0)
    if "seed" in raw:
        seed = ck.integer("seed", raw["seed"], 0)
        if seed >= 2**64:
            raise ck.fail("seed", "must fit in 64 bits")
        kwargs["seed"] = seed
    if "threads" in raw:
        kwargs["threads"] = ck.integer("threads", raw["threads"], 1)
    for key in ("tau", "threshold"):
        if raw.get(key) is not None:
            val = ck.number(key, raw[key])
            if val <= 0.0:
                raise ck.fail(key, "must be positive")
            kwargs[key] = val
    if "test_functions" in raw:
        tf = raw["test_functions"]
        if not isinstance(tf, list) or not all(isinstance(x, str) for x in tf):
            raise ck.fail("test_functions", "expected a list of strings")
        for spec in tf:
            try:
                parse_test_function(spec)
            except ValueError as exc:
                raise ck.fail("test_functions", str(exc)) from exc
        kwargs["test_functions"] = tuple(tf)
    if "ellipse" in raw:
        el = raw["ellipse"]
        if not isinstance(el, dict):
            raise ck.fail("ellipse", "expected an object")
        allowed = {"t", "rho", "delta2", "inner_scale", "belt"}
        for k, v in el.items():
            if k not in allowed:
                raise ck.fail("ellipse", f"unknown field {k!r}")
            ck.number("ellipse", v)
        kwargs["ellipse"] = {k: float(v) for k, v in el.items()}
    if "gaps" in raw:
        gl = raw["gaps"]
        if not isinstance(gl, list):
            raise ck.fail("gaps", "expected a list of [rho, delta_inner, delta_outer, tau] records")
        recs = []
        for item in gl:
            if not isinstance(item, list) or len(item) != 4:
                raise ck.fail("gaps", f"record {item!r} must have four numbers")
            rho, di, do, tau = (ck.number("gaps", v) for v in item)
            if not (0.0 < rho < 1.0) or di <= 0.0 or do <= 0.0 or not (0.0 < tau < 1.0):
                raise ck.fail("gaps", f"record {item!r} needs 0<rho<1, positive Laplacians and 0<tau<1")
            recs.append(GapRecord(rho, di, do, tau))
        kwargs["gaps"] = tuple(recs)
    if "output" in raw:
        if not isinstance(raw["output"], str):
            raise ck.fail("output", "expected a directory path")
        kwargs["output"] = raw["output"]
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    return parse_config(text, str(p), str(p.parent))
