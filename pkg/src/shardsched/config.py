"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from fractions import Fraction
from pathlib import Path

from .adversary import parse_rate


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


SCHEDULERS = ("bds", "fds")
STRATEGIES = ("single_epoch_burst", "uniform_random", "theorem1")
COLORINGS = ("greedy", "heavy_light")
HOME_RULES = ("neighborhood", "access")
PRIORITIES = ("schedule", "epoch_end")


@dataclass
class RunConfig:
    scheduler: str = "bds"
    topology: str = "uniform"  # uniform | line | file:<path>
    s: int = 16
    k: int = 4
    rho: Fraction = Fraction(1, 72)
    b: int = 2
    rounds: int = 1000
    seed: int = 0
    strategy: str = "single_epoch_burst"
    c: int = 4  # epoch constant: E0 = c * ceil(log2 s)
    c1: float = 1.0  # latency constant of the distributed bound
    retry_aborts: bool = False
    burst_epoch: int = 1  # burst window index, in units of E0 rounds
    abort_prob: float = 0.0  # chance that a subtransaction's condition fails
    accounts_per_shard: int = 1
    coloring: str = "greedy"
    home_rule: str = "neighborhood"
    priority: str = "schedule"
    growth_threshold: float = 0.01
    trace_file: str = ""  # replay this injection trace instead of generating one
    csv: str = ""
    summary: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.scheduler in SCHEDULERS, "scheduler", f"expected one of {SCHEDULERS}, got {self.scheduler!r}")
        need(self.topology in ("uniform", "line") or self.topology.startswith("file:"),
             "topology", f"expected uniform, line or file:<path>, got {self.topology!r}")
        need(self.s >= 1, "s", "need at least one shard")
        need(self.k >= 1, "k", "must be >= 1")
        try:
            self.rho = parse_rate(self.rho)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError("rho", str(exc)) from None
        need(0 <= self.rho <= 1, "rho", f"must lie in [0, 1], got {self.rho}")
        need(self.b >= 1, "b", "must be a positive integer")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(self.strategy in STRATEGIES, "strategy", f"expected one of {STRATEGIES}")
        need(self.strategy != "theorem1" or self.rho > 0, "rho", "theorem1 needs a positive rate")
        need(self.c >= 1, "c", "must be >= 1")
        need(self.c1 > 0, "c1", "must be positive")
        need(self.burst_epoch >= 0, "burst_epoch", "must be >= 0")
        need(0.0 <= self.abort_prob <= 1.0, "abort_prob", "must lie in [0, 1]")
        need(self.accounts_per_shard >= 1, "accounts_per_shard", "must be >= 1")
        need(self.coloring in COLORINGS, "coloring", f"expected one of {COLORINGS}")
        need(self.home_rule in HOME_RULES, "home_rule", f"expected one of {HOME_RULES}")
        need(self.priority in PRIORITIES, "priority", f"expected one of {PRIORITIES}")
        need(self.growth_threshold >= 0, "growth_threshold", "must be >= 0")
        need(not (self.scheduler == "bds" and self.topology == "line" and self.s > 2),
             "topology", "the basic scheduler needs a uniform topology")
        return self

    @property
    def log_s(self) -> int:
        return max(1, math.ceil(math.log2(self.s))) if self.s > 1 else 1

    @property
    def E0(self) -> int:
        return self.c * self.log_s

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def coerce(name: str, raw: str):
    if name not in _TYPES:
        raise ConfigError(name, "unknown field")
    kind = _TYPES[name]
    raw = str(raw).strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {raw!r}")
            return low in ("true", "1", "yes")
        if kind == "Fraction":
            return parse_rate(raw)
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(name, str(exc)) from None
    return raw


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        values[key] = coerce(key, val)
    return values


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """File values first, then ``overrides`` (flags) on top."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    for key, val in overrides.items():
        if val is not None:
            values[key] = coerce(key, val) if isinstance(val, str) else val
    return RunConfig(**values)
