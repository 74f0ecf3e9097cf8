"""Pipeline configuration: nested dataclasses with YAML/JSON round-trip."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import defaults
from .exceptions import ConfigError
from .mc import McConfig
from .model import TwipParams

CONTROLLERS = ("lqr", "mpc", "ctmpc")


def _matrix(M):
    return [[float(v) for v in row] for row in np.atleast_2d(np.asarray(M, dtype=float))]


def _bounds_out(bounds):
    return [None if b is None or math.isinf(b) else float(b) for b in bounds]


@dataclass
class LqrSettings:
    Q: list = field(default_factory=lambda: _matrix(defaults.LQR_Q))
    R: list = field(default_factory=lambda: _matrix(defaults.LQR_R))
    u_max: float = defaults.U_MAX

    def __post_init__(self):
        try:
            self.Q, self.R = _matrix(self.Q), _matrix(self.R)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"lqr weights must be numeric matrices: {e}") from None
        if np.shape(self.Q) != (4, 4) or np.shape(self.R) != (1, 1):
            raise ConfigError("lqr.Q must be 4x4 and lqr.R 1x1")
        if not self.u_max > 0:
            raise ConfigError(f"lqr.u_max must be positive, got {self.u_max}")


@dataclass
class MpcSettings:
    horizon: int = defaults.HORIZON
    slack_weight: float = defaults.MPC_SLACK_WEIGHT
    #: ``|x_i| <= bound``; ``None`` leaves a component unconstrained.
    state_bounds: list = field(default_factory=lambda: _bounds_out(defaults.STATE_BOUNDS))

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon}")
        if not self.slack_weight > 0:
            raise ConfigError("slack_weight must be positive")
        if len(self.state_bounds) != 4:
            raise ConfigError("state_bounds needs one entry per state")
        self.state_bounds = _bounds_out(self.state_bounds)
        if any(b is not None and not b > 0 for b in self.state_bounds):
            raise ConfigError("state bounds must be positive")

    def bounds_array(self):
        return tuple(np.inf if b is None else b for b in self.state_bounds)


@dataclass
class CtmpcSettings:
    alpha: float = defaults.TUBE_ALPHA
    w_max: float = defaults.W_MAX
    slack_weight: float = defaults.CTMPC_SLACK_WEIGHT

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"ctmpc.alpha must lie in (0, 1), got {self.alpha}")
        if not self.w_max >= 0:
            raise ConfigError("ctmpc.w_max must be non-negative")
        if not self.slack_weight > 0:
            raise ConfigError("ctmpc.slack_weight must be positive")


@dataclass
class CertificationSettings:
    margin: float = defaults.GAMMA_MARGIN
    safety: float = defaults.RHO_SAFETY
    r_max: float = 1.0
    n_sphere: int = 100_000
    n_ball: int = 10_000
    n_bisect: int = 20
    seed: int = 0
    validation_samples: int = 1_000_000
    validation_seed: int = 1
    decrease_samples: int = 100_000

    def __post_init__(self):
        for name in ("margin", "safety"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"certification.{name} must lie in (0, 1)")
        if not self.r_max > 0:
            raise ConfigError("certification.r_max must be positive")
        for name in ("n_sphere", "n_ball", "n_bisect", "validation_samples", "decrease_samples"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(f"certification.{name} must be a positive integer")


@dataclass
class McSettings:
    n_samples: int = defaults.MC_SAMPLES
    horizon: float = defaults.MC_HORIZON
    seed: int = 0
    ranges: dict = field(default_factory=lambda: {k: list(v) for k, v in defaults.MC_RANGES.items()})
    controller: str = "lqr"
    threads: int = 1
    disturbance: bool = False

    def __post_init__(self):
        self.ranges = {k: [float(v) for v in r] for k, r in self.ranges.items()}
        if self.controller not in CONTROLLERS + ("all",):
            raise ConfigError(f"unknown controller {self.controller!r}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ConfigError("mc.threads must be a positive integer")

    def controllers(self):
        return list(CONTROLLERS) if self.controller == "all" else [self.controller]

    def to_mc_config(self, Ts, w_max, substeps=defaults.SUBSTEPS) -> McConfig:
        return McConfig(ranges={k: tuple(v) for k, v in self.ranges.items()},
                        n_samples=self.n_samples, horizon=self.horizon, Ts=Ts, substeps=substeps,
                        seed=self.seed, disturbance=self.disturbance, w_max=w_max)


@dataclass
class PipelineConfig:
    model: dict = field(default_factory=lambda: TwipParams().to_dict())
    Ts: float = defaults.TS
    substeps: int = defaults.SUBSTEPS
    lqr: LqrSettings = field(default_factory=LqrSettings)
    mpc: MpcSettings = field(default_factory=MpcSettings)
    ctmpc: CtmpcSettings = field(default_factory=CtmpcSettings)
    certification: CertificationSettings = field(default_factory=CertificationSettings)
    mc: McSettings = field(default_factory=McSettings)
    out: str = "out"

    def __post_init__(self):
        try:
            self.model = TwipParams.from_dict(self.model).to_dict()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid model parameters: {e}") from None
        if not self.Ts > 0:
            raise ConfigError("Ts must be positive")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps}")
        try:
            self.mc.to_mc_config(self.Ts, self.ctmpc.w_max, self.substeps)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid mc settings: {e}") from None

    @property
    def params(self) -> TwipParams:
        return TwipParams.from_dict(self.model)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        nested = {"lqr": LqrSettings, "mpc": MpcSettings, "ctmpc": CtmpcSettings,
                  "certification": CertificationSettings, "mc": McSettings}
        unknown = set(data) - set(sections)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in nested:
                kwargs[key] = _build(nested[key], value, key)
            elif key == "model":
                merged = TwipParams().to_dict()
                extra = set(value or {}) - set(merged)
                if extra:
                    raise ConfigError(f"unknown model parameters: {sorted(extra)}")
                merged.update(value or {})
                kwargs[key] = merged
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def section_hash(self, *keys) -> str:
        """Content hash of the named top-level sections."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, value, name):
    if value is None:
        return cls()
    if not isinstance(value, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid {name!r} section: {e}") from None


def parse_config(text: str) -> PipelineConfig:
    """Parse YAML (or JSON) text into a validated :class:`PipelineConfig`."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse configuration: {e}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    return PipelineConfig.from_dict(data)


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from None
    return parse_config(text)
