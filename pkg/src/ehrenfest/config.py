"""Experiment configuration: loading, validation, kernel/profile construction
and CSV output with a provenance line."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import yaml

from .errors import ConfigError, ValidationError
from .kernel import RateKernel, builtin_function

COMMANDS = ("hydro", "simulate", "clt", "ldp", "martingale", "acceptance")
TEST_FUNCTIONS = {"one": "constant(1)", "linear": "affine(0,1)", "sin": "sinusoid(0,1)"}
TRIAL_NAMES = ("constant", "linear-x", "sin-x")

PROVENANCE_PREFIX = "# provenance: "


@dataclass
class ExperimentConfig:
    command: str
    kernel: dict = field(default_factory=lambda: {"type": "constant", "value": 1.0})
    phi: str = "constant(1)"
    n: int = 100
    m: int = 200
    dt: float = 1e-3
    horizon: float = 1.0
    sample_times: Optional[list] = None
    replicas: int = 1
    seed: int = 0
    threads: int = 1
    # hydro
    method: str = "rk4"
    # clt
    test_function: str = "linear"
    s_steps: int = 100
    # ldp
    path_csv: Optional[str] = None
    dpsi_csv: Optional[str] = None
    trial_family: list = field(default_factory=lambda: list(TRIAL_NAMES))
    tilt: str = "sinusoid(0,0.3)"
    # martingale
    control: str = "affine(0,0.2)"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a possibly nested mapping; unknown keys are reported."""
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if key in COMMANDS and isinstance(value, dict):
                flat.update(value)  # command-specific section
            else:
                flat[key] = value
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(flat) - names)
        if "command" not in flat:
            raise ConfigError(["missing 'command'"] + [f"unknown key {k!r}" for k in unknown])
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        cfg = cls(**flat)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolved_sample_times(self) -> list:
        return [float(self.horizon)] if self.sample_times is None else [float(t) for t in self.sample_times]

    def validate(self) -> None:
        """Raise :class:`ConfigError` listing every problem found."""
        p = []
        if self.command not in COMMANDS:
            p.append(f"command must be one of {COMMANDS}, got {self.command!r}")
        for name in ("n", "m", "replicas", "threads", "s_steps"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                p.append(f"{name} must be a positive integer, got {v!r}")
        if isinstance(self.m, int) and self.m < 2:
            p.append("m must be >= 2")
        for name in ("dt", "horizon"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not v > 0:
                p.append(f"{name} must be positive, got {v!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            p.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        if self.sample_times is not None:
            try:
                ts = np.asarray(self.sample_times, dtype=float).reshape(-1)
                if ts.size and (ts[0] < 0 or (isinstance(self.horizon, (int, float)) and ts[-1] > self.horizon)):
                    p.append("sample_times must lie in [0, horizon]")
                if ts.size > 1 and np.any(np.diff(ts) <= 0):
                    p.append("sample_times must be strictly increasing")
            except (TypeError, ValueError):
                p.append("sample_times must be a list of numbers")
        if self.method not in ("rk4", "expm"):
            p.append(f"method must be rk4 or expm, got {self.method!r}")
        if self.test_function not in TEST_FUNCTIONS:
            p.append(f"test_function must be one of {sorted(TEST_FUNCTIONS)}")
        bad = [t for t in self.trial_family if t not in TRIAL_NAMES]
        if bad or not self.trial_family:
            p.append(f"trial_family entries must be from {TRIAL_NAMES}")
        for name in ("phi", "tilt", "control"):
            try:
                builtin_function(getattr(self, name))
            except ValidationError as exc:
                p.append(f"{name}: {exc}")
        p.extend(_kernel_problems(self.kernel))
        for name in ("path_csv", "dpsi_csv"):
            v = getattr(self, name)
            if v is not None and not Path(v).is_file():
                p.append(f"{name} {v!r} does not exist")
        if p:
            raise ConfigError(p)


def _kernel_problems(desc) -> list:
    if not isinstance(desc, dict) or "type" not in desc:
        return ["kernel must be a mapping with a 'type'"]
    kind = desc["type"]
    if kind == "constant":
        v = desc.get("value", 1.0)
        return [] if isinstance(v, (int, float)) and v > 0 else ["kernel value must be positive"]
    if kind == "product":
        out = []
        for key in ("lambda1", "lambda2"):
            try:
                builtin_function(desc.get(key, ""))
            except ValidationError as exc:
                out.append(f"kernel {key}: {exc}")
        return out
    if kind == "table":
        path = desc.get("path")
        return [] if path and Path(path).is_file() else [f"kernel table {path!r} does not exist"]
    return [f"unknown kernel type {kind!r}"]


def build_kernel(desc: dict) -> RateKernel:
    kind = desc["type"]
    if kind == "constant":
        return RateKernel.constant(float(desc.get("value", 1.0)))
    if kind == "product":
        return RateKernel.product(builtin_function(desc["lambda1"]), builtin_function(desc["lambda2"]))
    if kind == "table":
        return RateKernel.table(np.loadtxt(desc["path"], delimiter=",", comments="#", ndmin=2))
    raise ConfigError([f"unknown kernel type {kind!r}"])


def parse_kernel_flag(text: str) -> dict:
    """``constant:c``, ``product:<expr>;<expr>`` or ``table:<path>``."""
    kind, _, rest = text.partition(":")
    if kind == "constant":
        return {"type": "constant", "value": float(rest or 1.0)}
    if kind == "product":
        l1, _, l2 = rest.partition(";")
        return {"type": "product", "lambda1": l1.strip(), "lambda2": l2.strip()}
    if kind == "table":
        return {"type": "table", "path": rest}
    raise ConfigError([f"cannot parse kernel flag {text!r}"])


def load_config(path) -> dict:
    """Read a YAML or JSON config file into a mapping."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], cfg: Optional[ExperimentConfig] = None,
              seed: Optional[int] = None) -> Path:
    """Write a CSV whose first line is a provenance comment, then the header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prov = {
        "config": cfg.to_dict() if cfg is not None else None,
        "sha256": cfg.config_hash() if cfg is not None else None,
        "seed": seed if seed is not None else (cfg.seed if cfg is not None else None),
    }
    with open(path, "w", newline="") as fh:
        fh.write(PROVENANCE_PREFIX + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_provenance(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith(PROVENANCE_PREFIX):
        raise ValidationError(f"{path} has no provenance line")
    return json.loads(first[len(PROVENANCE_PREFIX):])


def read_csv(path) -> tuple[list, list]:
    """Return ``(header, rows)`` skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]
