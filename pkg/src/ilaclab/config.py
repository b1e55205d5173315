"""Experiment configuration stored as an INI document.

Layout::

    [experiment]      kind, realizations, master_seed, workers, out_dir
    [box]             dimension, side_length, boundary, max_sites
    [distribution]    kind, a1, b1, a2, b2, v0, v1, p
    [<kind>]          parameters of the chosen experiment kind

Floats are written with ``repr`` so a config survives a write/read cycle
unchanged.
"""

from __future__ import annotations

import configparser
import enum
import hashlib
import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .lattice import BoxSpec, DistributionError, LatticeError, PotentialDistribution


class ConfigError(ValueError):
    pass


class Kind(str, enum.Enum):
    DOS = "dos"
    ILAC = "ilac"
    RHO = "rho"
    CORNERS = "corners"
    TAILS = "tails"
    VERIFY21 = "verify21"
    VERIFY31 = "verify31"
    COVARIANCE = "covariance"


def _floats(text: str) -> list[float]:
    text = text.strip()
    return [float(t) for t in text.split(",")] if text else []


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


# name -> (parser, formatter, default)
_FLOATS = (_floats, _fmt_floats)
_INT = (int, str)
_FLOAT = (float, repr)
_STR = (str, str)

KIND_PARAMS: dict[Kind, dict[str, tuple[Any, Any, Any]]] = {
    Kind.DOS: {"estimator": (*_STR, "count_per_volume"), "bins": (*_INT, 0)},
    Kind.ILAC: {"bins": (*_INT, 0)},
    Kind.RHO: {"bins": (*_INT, 0)},
    Kind.CORNERS: {"a_grid": (*_FLOATS, [0.05, 0.1, 0.2])},
    Kind.TAILS: {
        "delta_grid": (*_FLOATS, []),
        "edge": (*_STR, "lower"),
        "side": (*_STR, "two_sided"),
        "sign": (*_INT, 1),
    },
    Kind.VERIFY21: {
        "a_grid": (*_FLOATS, [round(0.05 * k, 2) for k in range(1, 21)]),
        "max_exclusion": (*_FLOAT, 0.05),
    },
    Kind.VERIFY31: {"delta_grid": (*_FLOATS, [])},
    Kind.COVARIANCE: {
        "torus_dimension": (*_INT, 1),
        "torus_size": (*_INT, 16),
        "families": (*_INT, 50),
    },
}


_CHOICES = {
    "estimator": ("count_per_volume", "local_at_site"),
    "edge": ("lower", "upper"),
    "side": ("two_sided", "right", "left"),
    "sign": (1, -1),
}


def _validate_params(kind: Kind, params: dict) -> None:
    for name, allowed in _CHOICES.items():
        if name in params and params[name] not in allowed:
            raise ConfigError(f"{kind.value}.{name} must be one of {allowed}, got {params[name]!r}")
    for name in ("a_grid", "delta_grid"):
        if any(v <= 0 for v in params.get(name, [])):
            raise ConfigError(f"{kind.value}.{name} entries must be positive")
    if params.get("bins", 0) < 0:
        raise ConfigError("bins must be non-negative")
    if kind == Kind.COVARIANCE:
        if params["torus_size"] < 3 or params["families"] < 1:
            raise ConfigError("covariance needs torus_size >= 3 and families >= 1")
        if not 1 <= params["torus_dimension"] <= 3:
            raise ConfigError("torus_dimension must be 1, 2 or 3")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: Kind
    box: BoxSpec = field(default_factory=lambda: BoxSpec(1, 100))
    distribution: PotentialDistribution = field(
        default_factory=lambda: PotentialDistribution.uniform(0.0, 1.0)
    )
    realizations: int = 10
    master_seed: int = 0
    workers: int = 1
    out_dir: str = "out"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.realizations < 1:
            raise ConfigError("realizations must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        schema = KIND_PARAMS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.kind.value}: {sorted(unknown)}")
        resolved = {
            name: list(spec[2]) if isinstance(spec[2], list) else spec[2]
            for name, spec in schema.items()
        }
        resolved.update(self.params)
        _validate_params(self.kind, resolved)
        object.__setattr__(self, "params", resolved)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {
            "kind": self.kind.value,
            "realizations": str(self.realizations),
            "master_seed": str(self.master_seed),
            "workers": str(self.workers),
            "out_dir": self.out_dir,
        }
        cp["box"] = {
            "dimension": str(self.box.dimension),
            "side_length": str(self.box.side_length),
            "boundary": self.box.boundary.value,
            "max_sites": str(self.box.max_sites),
        }
        dist = self.distribution
        section = {"kind": dist.kind.value, "p": repr(float(dist.p))}
        for name in ("a1", "b1", "a2", "b2", "v0", "v1"):
            value = getattr(dist, name)
            if value is not None:
                section[name] = repr(float(value))
        cp["distribution"] = section
        schema = KIND_PARAMS[self.kind]
        cp[self.kind.value] = {name: schema[name][1](value) for name, value in self.params.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        """Hash of everything that determines the numbers (not workers or paths)."""
        canonical = replace(self, workers=1, out_dir="")
        return hashlib.sha256(canonical.to_ini().encode()).hexdigest()

    def as_dict(self) -> dict:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_string(self.to_ini())
        return {s: dict(cp[s]) for s in cp.sections()}

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        try:
            exp = cp["experiment"]
            kind = Kind(exp["kind"])
            box = BoxSpec(1, 100)
            if cp.has_section("box"):
                s = cp["box"]
                box = BoxSpec(
                    int(s.get("dimension", "1")),
                    int(s.get("side_length", "100")),
                    s.get("boundary", "dirichlet"),
                    int(s.get("max_sites", "20000")),
                )
            dist = PotentialDistribution.uniform(0.0, 1.0)
            if cp.has_section("distribution"):
                s = cp["distribution"]
                kw = {n: float(s[n]) for n in ("a1", "b1", "a2", "b2", "v0", "v1", "p") if n in s}
                dist = PotentialDistribution(s.get("kind", "uniform"), **kw)
            params = {}
            if cp.has_section(kind.value):
                schema = KIND_PARAMS[kind]
                for name, raw in cp[kind.value].items():
                    if name not in schema:
                        raise ConfigError(f"unknown parameter {name!r} in [{kind.value}]")
                    params[name] = schema[name][0](raw)
            return cls(
                kind=kind,
                box=box,
                distribution=dist,
                realizations=int(exp.get("realizations", "10")),
                master_seed=int(exp.get("master_seed", "0")),
                workers=int(exp.get("workers", "1")),
                out_dir=exp.get("out_dir", "out"),
                params=params,
            )
        except ConfigError:
            raise
        except (KeyError, ValueError, LatticeError, DistributionError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")
