"""Flat ``key = value`` scenario files.

    # base market
    R = 15
    p = 10
    c = 8
    l = 3
    r = 0.5
    lambda = 10
    mu = 12

    [solver]
    problem = provider-dynamic
    span = 200

    [sweep]
    axis = p
    grid = 5:14:1

    [sim]
    replications = 20
    seed = 7

Blank lines and ``#`` comments are ignored.  Unknown keys, duplicate keys
and invalid values are reported with the line they occur on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .optimize import Problem
from .sim import SimConfig
from .utility import Scenario, ScenarioError

SCENARIO_KEYS = {"R": "R", "p": "p", "c": "c", "l": "l", "r": "r", "lambda": "lam", "mu": "mu"}
SECTION_KEYS = {
    "solver": {"problem": str, "span": int},
    "sweep": {"axis": str, "grid": str, "problems": str},
    "sim": {"horizon": int, "warmup": float, "replications": int, "seed": int, "batch_count": int},
}
# placeholder service rate for commands that scan mu themselves
PLACEHOLDER_MU = 1.0


class ScenarioFileError(ValueError):
    def __init__(self, message: str, path: str = "<string>", line: int = 0):
        loc = f"{path}:{line}" if line else path
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.line = line


@dataclass
class ScenarioFile:
    scenario: Scenario
    solver: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    lines: dict[str, int] = field(default_factory=dict)
    digest: str = ""
    has_mu: bool = True

    def sim_config(self, **overrides) -> SimConfig:
        opts = {**self.sim, **{k: v for k, v in overrides.items() if v is not None}}
        return SimConfig(**opts)

    @property
    def problem(self) -> Problem | None:
        name = self.solver.get("problem")
        return Problem(name) if name else None


def parse_grid(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma list; ``inf`` allowed in lists."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range grid needs start:stop:step, got {text!r}")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int((stop - start) / step + 1e-9) + 1
        return [round(start + i * step, 12) for i in range(max(count, 0))]
    return [float(x) for x in text.split(",") if x.strip()]


def _number(raw: str, key: str, path: str, line: int, kind=float):
    try:
        return kind(raw)
    except ValueError:
        raise ScenarioFileError(f"{key}: expected {kind.__name__}, got {raw!r}", path, line) from None


def parse_text(text: str, path: str = "<string>", require_mu: bool = True) -> ScenarioFile:
    section = None
    values: dict[str, float] = {}
    extras: dict[str, dict] = {name: {} for name in SECTION_KEYS}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ScenarioFileError(f"malformed section header {stripped!r}", path, lineno)
            section = stripped[1:-1].strip()
            if section not in SECTION_KEYS:
                raise ScenarioFileError(f"unknown section [{section}]", path, lineno)
            continue
        if "=" not in stripped:
            raise ScenarioFileError(f"expected 'key = value', got {stripped!r}", path, lineno)
        key, val = (part.strip() for part in stripped.split("=", 1))
        qualified = key if section is None else f"{section}.{key}"
        if qualified in lines:
            raise ScenarioFileError(f"duplicate key {key!r} (first on line {lines[qualified]})", path, lineno)
        lines[qualified] = lineno
        if section is None:
            if key not in SCENARIO_KEYS:
                raise ScenarioFileError(f"unknown key {key!r}; expected one of {', '.join(SCENARIO_KEYS)}", path, lineno)
            values[SCENARIO_KEYS[key]] = _number(val, key, path, lineno)
        else:
            kinds = SECTION_KEYS[section]
            if key not in kinds:
                raise ScenarioFileError(f"unknown key {key!r} in [{section}]", path, lineno)
            extras[section][key] = _number(val, key, path, lineno, kinds[key]) if kinds[key] is not str else val

    missing = [k for k, attr in SCENARIO_KEYS.items() if attr not in values and (attr != "mu" or require_mu)]
    if missing:
        raise ScenarioFileError(f"missing key(s): {', '.join(missing)}", path)
    has_mu = "mu" in values
    values.setdefault("mu", PLACEHOLDER_MU)
    try:
        scenario = Scenario(**values)
    except ScenarioError as exc:
        name = {v: k for k, v in SCENARIO_KEYS.items()}.get(exc.field or "", exc.field)
        raise ScenarioFileError(str(exc), path, lines.get(name, 0)) from None
    if "problem" in extras["solver"]:
        try:
            Problem(extras["solver"]["problem"])
        except ValueError:
            raise ScenarioFileError(
                f"unknown problem {extras['solver']['problem']!r}", path, lines["solver.problem"]
            ) from None
    try:
        SimConfig(**extras["sim"])
    except ValueError as exc:
        line = min((n for k, n in lines.items() if k.startswith("sim.")), default=0)
        raise ScenarioFileError(str(exc), path, line) from None
    digest = hashlib.sha256(canonical(scenario).encode()).hexdigest()[:16]
    return ScenarioFile(scenario, extras["solver"], extras["sweep"], extras["sim"], lines, digest, has_mu)


def canonical(s: Scenario) -> str:
    return " ".join(f"{k}={getattr(s, attr)!r}" for k, attr in SCENARIO_KEYS.items())


def load(path: str | Path, require_mu: bool = True) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioFileError(f"cannot read: {exc.strerror}", str(path)) from None
    return parse_text(text, str(path), require_mu)


def dumps(s: Scenario) -> str:
    return "".join(f"{k} = {getattr(s, attr)!r}\n" for k, attr in SCENARIO_KEYS.items())
