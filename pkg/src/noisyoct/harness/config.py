"""Experiment configuration: INI-style sections parsed with configparser.

Example::

    [gate]
    name = hadamard
    cycles = 2

    [noise]
    kind = phase
    gammas = geom 1e-5 1e-2 12
    pilot = chain

    [propagator]
    dt = 0.1
    m_points = 7
    krylov_dim = 3

    [optimizer]
    lam = 1.0
    max_iters = 2000
    target_infidelity = 1e-4

``pilot = baseline`` re-optimizes every noise rate from the noiseless
field; ``pilot = chain`` walks the grid from the largest rate down, seeding
each point with the field optimized at the previous (larger) rate.
Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..gates import GATE_BUILDERS
from ..krotov import OptimizationConfig
from ..liouville import NoiseModel
from ..propagator import PropagatorConfig

__all__ = ["ConfigError", "ExperimentConfig", "parse_grid", "load_config"]


class ConfigError(ValueError):
    pass


def parse_grid(text):
    """Whitespace/comma separated values and ``geom lo hi n`` / ``lin lo hi n``
    runs, concatenated in order (``0 geom 1e-5 1e-2 12`` is valid)."""
    parts = text.replace(",", " ").split()
    if not parts:
        raise ConfigError("empty gamma grid")
    chunks, i = [], 0
    try:
        while i < len(parts):
            if parts[i] in ("geom", "lin"):
                if len(parts) < i + 4:
                    raise ConfigError(f"grid spec needs 'kind lo hi n': {text!r}")
                lo, hi, n = float(parts[i + 1]), float(parts[i + 2]), int(parts[i + 3])
                if n < 1:
                    raise ConfigError("grid needs at least one point")
                if parts[i] == "geom":
                    if lo <= 0 or hi <= 0:
                        raise ConfigError("geometric grid bounds must be positive")
                    chunks.append(np.geomspace(lo, hi, n))
                else:
                    chunks.append(np.linspace(lo, hi, n))
                i += 4
            else:
                chunks.append(np.array([float(parts[i])]))
                i += 1
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None
    values = np.concatenate(chunks)
    if np.any(values < 0):
        raise ConfigError("noise rates must be non-negative")
    return values


def _number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


_SECTIONS = {
    "gate": {"name"},
    "noise": {"kind", "gammas", "pilot"},
    "propagator": {f.name for f in fields(PropagatorConfig)},
    "optimizer": {f.name for f in fields(OptimizationConfig)},
    "guess": {"source", "fwhm", "seed", "perturbation"},
    "run": {"workers"},
    "trajectory": {"gamma"},
    "staged": {"noise_kind", "gammas", "series_gammas", "stage2_iters"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; ``text()`` is the canonical serialization."""

    gate: str = "hadamard"
    gate_params: dict = field(default_factory=dict)
    noise_kind: str = "phase"
    gammas: tuple = (0.0,)
    pilot: str = "baseline"
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    optimizer: OptimizationConfig = field(default_factory=OptimizationConfig)
    guess_source: str = "analytic"
    guess_amplitudes: dict = field(default_factory=dict)
    fwhm: float = None
    seed: int = 0
    perturbation: float = 0.0
    workers: int = 1
    trajectory_gamma: float = 1e-3
    staged_noise_kind: str = "phase"
    staged_gammas: tuple = (0.0,)
    series_gammas: tuple = ()
    stage2_iters: int = None

    def __post_init__(self):
        if self.gate not in GATE_BUILDERS:
            raise ConfigError(f"unknown gate {self.gate!r}; choose from {sorted(GATE_BUILDERS)}")
        for kind in (self.noise_kind, self.staged_noise_kind):
            if kind not in ("none", "amplitude", "phase"):
                raise ConfigError(f"unknown noise kind {kind!r}")
        if self.pilot not in ("baseline", "chain"):
            raise ConfigError(f"pilot must be 'baseline' or 'chain', not {self.pilot!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.perturbation < 0:
            raise ConfigError("perturbation must be non-negative")

    def spec(self):
        try:
            return GATE_BUILDERS[self.gate](**self.gate_params)
        except TypeError as exc:
            raise ConfigError(f"bad gate parameters: {exc}") from None

    def noise(self, gamma, kind=None):
        kind = kind or self.noise_kind
        return NoiseModel(kind if gamma else "none", float(gamma) if kind != "none" else 0.0)

    def with_gate(self, gate, **params):
        return replace(self, gate=gate, gate_params=params, guess_amplitudes={})

    def text(self):
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["gate"] = {"name": self.gate, **{k: repr(v) for k, v in sorted(self.gate_params.items())}}
        cp["noise"] = {"kind": self.noise_kind, "pilot": self.pilot,
                       "gammas": " ".join(repr(float(g)) for g in self.gammas)}
        cp["propagator"] = {f.name: repr(getattr(self.propagator, f.name)) for f in fields(PropagatorConfig)}
        opt = {}
        for f in fields(OptimizationConfig):
            val = getattr(self.optimizer, f.name)
            if f.name == "lam" and isinstance(val, dict):
                opt.update({f"lam.{k}": repr(float(v)) for k, v in sorted(val.items())})
            elif isinstance(val, str):
                opt[f.name] = val
            else:
                opt[f.name] = repr(val)
        cp["optimizer"] = opt
        guess = {"source": self.guess_source, "seed": str(self.seed),
                 "perturbation": repr(self.perturbation)}
        if self.fwhm is not None:
            guess["fwhm"] = repr(self.fwhm)
        guess.update({f"amplitude.{k}": repr(float(v)) for k, v in sorted(self.guess_amplitudes.items())})
        cp["guess"] = guess
        cp["run"] = {"workers": str(self.workers)}
        cp["trajectory"] = {"gamma": repr(self.trajectory_gamma)}
        staged = {"noise_kind": self.staged_noise_kind,
                  "gammas": " ".join(repr(float(g)) for g in self.staged_gammas),
                  "series_gammas": " ".join(repr(float(g)) for g in self.series_gammas)}
        if self.stage2_iters is not None:
            staged["stage2_iters"] = str(self.stage2_iters)
        cp["staged"] = staged
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self):
        """SHA-256 of the canonical text; stored in checkpoints as provenance."""
        return hashlib.sha256(self.text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        for section in cp.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key in cp[section]:
                base = key.split(".", 1)[0]
                ok = key in _SECTIONS[section] or (section == "gate") \
                    or (section == "optimizer" and base == "lam") \
                    or (section == "guess" and base == "amplitude")
                if not ok:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
        kw = {}
        try:
            if cp.has_section("gate"):
                g = dict(cp["gate"])
                kw["gate"] = g.pop("name", "hadamard")
                kw["gate_params"] = {k: _number(v) for k, v in g.items()}
            if cp.has_section("noise"):
                n = cp["noise"]
                kw["noise_kind"] = n.get("kind", "phase")
                kw["pilot"] = n.get("pilot", "baseline")
                if "gammas" in n:
                    kw["gammas"] = tuple(parse_grid(n["gammas"]))
            if cp.has_section("propagator"):
                p = cp["propagator"]
                kw["propagator"] = PropagatorConfig(**{k: _number(v) for k, v in p.items()})
            if cp.has_section("optimizer"):
                o = dict(cp["optimizer"])
                opt = {}
                lam_ch = {k.split(".", 1)[1]: float(o.pop(k)) for k in list(o) if k.startswith("lam.")}
                for k, v in o.items():
                    opt[k] = v if k == "stepper" else _number(v)
                if lam_ch:
                    opt["lam"] = lam_ch
                kw["optimizer"] = OptimizationConfig(**opt)
            if cp.has_section("guess"):
                g = cp["guess"]
                kw["guess_source"] = g.get("source", "analytic")
                if "fwhm" in g:
                    kw["fwhm"] = float(g["fwhm"])
                kw["seed"] = int(g.get("seed", 0))
                kw["perturbation"] = float(g.get("perturbation", 0.0))
                kw["guess_amplitudes"] = {k.split(".", 1)[1]: float(v) for k, v in g.items()
                                          if k.startswith("amplitude.")}
            if cp.has_section("run"):
                kw["workers"] = int(cp["run"].get("workers", 1))
            if cp.has_section("trajectory"):
                kw["trajectory_gamma"] = float(cp["trajectory"].get("gamma", 1e-3))
            if cp.has_section("staged"):
                s = cp["staged"]
                kw["staged_noise_kind"] = s.get("noise_kind", "phase")
                if "gammas" in s:
                    kw["staged_gammas"] = tuple(parse_grid(s["gammas"]))
                if s.get("series_gammas", "").strip():
                    kw["series_gammas"] = tuple(parse_grid(s["series_gammas"]))
                if "stage2_iters" in s:
                    kw["stage2_iters"] = int(s["stage2_iters"])
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kw)


def load_config(path):
    try:
        with open(path) as fh:
            return ExperimentConfig.from_text(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
