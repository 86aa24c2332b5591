"""Run configuration: a YAML document with one block per pipeline stage.

Grammar (all blocks optional except ``system``)::

    system:    {name: viscous_psystem, parameters: {c3: 1.0, c1: -1.0}}
    profile:   {kind: duffing | orbit | constant, amplitude: 0.5, q: [0, 0], num_points: 128,
                tol: 1.0e-12, guess: {u0: [0.7, 0.0], s: -0.5, direction: 1, t_max: 400},
                state: [0.0], period: 6.283185307179586}
    spectral:  {N: 128, num_uniform: 41, decades: 4, per_decade: 3, branches: 8}
    lowfreq:   {directions: [amplitude, q1, q2], step: 1.0e-3, ladder_count: 6,
                ladder_hi: 1.0e-2, ladder_lo: 1.0e-3, contour_points: 32}
    linear:    {periods: 64, N: 64, epsilon: null, times: [...], p: [2, .inf]}
    nonlinear: {periods: 64, nodes_per_period: 64, dt: 0.02, scheme: exponential-integrator,
                horizon: 20.0, snapshot_every: 0.5, K_norm: 4, growth_amplitude: 1.0e-6,
                growth_window: [1.0, 20.0],
                perturbation: {shape: gaussian, amplitude: 1.0e-3, width: null, center: null, mix: [1.0]}}
    output:    {directory: runs/duffing, formats: [json, csv]}

The output directory may be overridden by the PERWAVE_OUT environment variable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .model import SYSTEMS
from .nonlinear import SCHEMES

STAGES = ("profile", "spectrum", "lowfreq", "linear", "nonlinear")


@dataclass(frozen=True)
class SystemBlock:
    name: str
    parameters: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ProfileBlock:
    kind: str = "duffing"
    amplitude: float = 0.5
    q: tuple = (0.0, 0.0)
    num_points: int = 128
    tol: float = 1e-12
    guess: dict = field(default_factory=dict)
    state: tuple = (0.0,)
    period: float = 2 * np.pi


@dataclass(frozen=True)
class SpectralBlock:
    N: int = 128
    num_uniform: int = 41
    decades: int = 4
    per_decade: int = 3
    branches: int = 8


@dataclass(frozen=True)
class LowfreqBlock:
    directions: tuple = ("amplitude", "q1", "q2")
    step: float = 1e-3
    ladder_count: int = 6
    ladder_hi: float = 1e-2
    ladder_lo: float = 1e-3
    contour_points: int = 32


@dataclass(frozen=True)
class LinearBlock:
    periods: int = 64
    N: int = 64
    epsilon: float | None = None
    times: tuple = tuple(float(t) for t in np.geomspace(10, 300, 12))
    p: tuple = (2.0, float("inf"))


@dataclass(frozen=True)
class NonlinearBlock:
    periods: int = 64
    nodes_per_period: int = 64
    dt: float = 0.02
    scheme: str = "exponential-integrator"
    horizon: float = 20.0
    snapshot_every: float = 0.5
    K_norm: int = 4
    growth_amplitude: float = 1e-6
    growth_window: tuple = (1.0, 20.0)
    perturbation: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "runs/default"
    formats: tuple = ("json", "csv")


@dataclass(frozen=True)
class RunConfig:
    system: SystemBlock
    profile: ProfileBlock = field(default_factory=ProfileBlock)
    spectral: SpectralBlock = field(default_factory=SpectralBlock)
    lowfreq: LowfreqBlock = field(default_factory=LowfreqBlock)
    linear: LinearBlock = field(default_factory=LinearBlock)
    nonlinear: NonlinearBlock = field(default_factory=NonlinearBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=_jsonable))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def out_dir(self) -> Path:
        return Path(os.environ.get("PERWAVE_OUT") or self.output.directory)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _block(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"block {name!r} must be a mapping")
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"block {name!r}: {exc}") from exc


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> RunConfig:
    """Fail-fast checks of every block before any computation."""
    _check(cfg.system.name in SYSTEMS, f"unknown system {cfg.system.name!r}; known: {sorted(SYSTEMS)}")
    p = cfg.profile
    _check(p.kind in ("duffing", "orbit", "constant"), f"profile.kind {p.kind!r} not recognised")
    _check(p.num_points >= 16 and p.num_points % 2 == 0, "profile.num_points must be even and >= 16")
    _check(0 < p.tol < 1e-6, "profile.tol must lie in (0, 1e-6)")
    if p.kind == "duffing":
        _check(cfg.system.name == "viscous_psystem", "profile.kind duffing needs the viscous_psystem")
        _check(0 < p.amplitude < 1, "Duffing amplitude must lie in (0, 1)")
    if p.kind == "orbit":
        _check("u0" in p.guess, "profile.guess.u0 is required for kind orbit")
    sp = cfg.spectral
    _check(sp.N >= 16 and sp.N % 2 == 0, "spectral.N must be even and >= 16")
    _check(sp.branches >= 1, "spectral.branches must be positive")
    lf = cfg.lowfreq
    _check(0 < lf.step < 0.1, "lowfreq.step must lie in (0, 0.1)")
    _check(0 < lf.ladder_lo < lf.ladder_hi <= 0.1, "lowfreq ladder needs 0 < ladder_lo < ladder_hi <= 0.1")
    lin = cfg.linear
    _check(lin.periods >= 2 and lin.N >= 16 and lin.N % 2 == 0, "linear block needs periods >= 2 and even N >= 16")
    _check(len(lin.times) >= 8 and all(t > 0 for t in lin.times), "linear.times needs >= 8 positive samples")
    nl = cfg.nonlinear
    _check(nl.scheme in SCHEMES, f"nonlinear.scheme must be one of {SCHEMES}")
    _check(nl.nodes_per_period % 4 == 0, "nonlinear.nodes_per_period must be divisible by 4")
    _check(nl.dt > 0 and nl.horizon > 0, "nonlinear.dt and horizon must be positive")
    _check(0 < nl.growth_amplitude < 1e-3, "nonlinear.growth_amplitude must be small (< 1e-3)")
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    extra = set(raw) - {"system", "profile", "spectral", "lowfreq", "linear", "nonlinear", "output"}
    if extra:
        raise ConfigError(f"unknown blocks: {sorted(extra)}")
    sysraw = raw.get("system")
    if not isinstance(sysraw, dict) or "name" not in sysraw:
        raise ConfigError("system block with a name is required")
    cfg = RunConfig(
        system=SystemBlock(str(sysraw["name"]), dict(sysraw.get("parameters") or {})),
        profile=_block(ProfileBlock, raw.get("profile"), "profile"),
        spectral=_block(SpectralBlock, raw.get("spectral"), "spectral"),
        lowfreq=_block(LowfreqBlock, raw.get("lowfreq"), "lowfreq"),
        linear=_block(LinearBlock, raw.get("linear"), "linear"),
        nonlinear=_block(NonlinearBlock, raw.get("nonlinear"), "nonlinear"),
        output=_block(OutputBlock, raw.get("output"), "output"),
    )
    return validate(cfg)
