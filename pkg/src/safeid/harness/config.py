"""Experiment configuration (JSON in, validated dataclass out)."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from safeid.model import SystemParams
from safeid.noise import NoiseSpec, support_halfwidth
from safeid.sets import Box, EmptySetError, UncertaintySet

MODES = ("lqr-regulation", "lq-tracking", "linear-baseline")
RMPC_MODES = ("lqr-regulation", "lq-tracking")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    modes: list[str] = field(default_factory=lambda: list(RMPC_MODES))
    mode: str = "lq-tracking"
    A_true: list = field(default_factory=lambda: [[1.2]])
    B_true: list = field(default_factory=lambda: [[0.9]])
    A0: list = field(default_factory=lambda: [[1.1]])
    B0: list = field(default_factory=lambda: [[1.0]])
    theta0_lower: list = field(default_factory=lambda: [[1.0, 0.9]])
    theta0_upper: list = field(default_factory=lambda: [[1.2, 1.1]])
    w: dict = field(default_factory=lambda: {"family": "uniform_box", "dim": 1, "a": 1.0})
    eta_family: str = "scaled_sign"
    sigma_eta_grid: list = field(default_factory=lambda: [0.2, 0.4, 0.6, 0.8])
    T_grid: list = field(default_factory=lambda: [250, 500, 1000, 2000, 4000])
    repeats: int = 15
    horizon: int = 5
    x_bound: list = field(default_factory=lambda: [10.0])
    u_bound: list = field(default_factory=lambda: [10.0])
    Q: list = field(default_factory=lambda: [[1.0]])
    R: list = field(default_factory=lambda: [[1.0]])
    tracking_amplitude: float = 8.0
    tracking_scale: float = 100.0
    delta: float = 0.05
    seed: int = 0
    x0: list = field(default_factory=lambda: [0.0])
    envelope_T: int = 1000
    bmsb_sigma_eta: float = 0.5
    bmsb_times: list = field(default_factory=lambda: [10, 50, 200])
    bmsb_L: int = 16
    bmsb_H: int = 5
    bmsb_M: int = 10_000
    out: str = "results"

    # -- derived objects ----------------------------------------------------
    @property
    def true_system(self) -> SystemParams:
        return SystemParams(self.A_true, self.B_true)

    @property
    def nominal(self) -> SystemParams:
        return SystemParams(self.A0, self.B0)

    @property
    def theta0(self) -> UncertaintySet:
        return UncertaintySet.from_bounds(self.theta0_lower, self.theta0_upper)

    @property
    def w_dist(self) -> NoiseSpec:
        return NoiseSpec.from_dict(self.w)

    def eta_dist(self, sigma_eta: float) -> NoiseSpec:
        m = self.nominal.m
        if sigma_eta == 0:
            return NoiseSpec.zero(m)
        if self.eta_family == "scaled_sign":
            return NoiseSpec.scaled_sign(sigma_eta, m)
        if self.eta_family == "uniform_box":
            # halfwidth chosen so that the per-coordinate std equals sigma_eta
            return NoiseSpec.uniform_box(sigma_eta * np.sqrt(3.0), m)
        if self.eta_family == "uniform_sphere":
            return NoiseSpec.uniform_sphere(sigma_eta * np.sqrt(m), m)
        raise ConfigError(f"unsupported excitation family {self.eta_family!r}")

    @property
    def X(self) -> Box:
        return Box.symmetric(self.x_bound)

    @property
    def U(self) -> Box:
        return Box.symmetric(self.u_bound)

    @property
    def W_box(self) -> Box:
        return Box.symmetric(support_halfwidth(self.w_dist))

    def H_box(self, sigma_eta: float) -> Box:
        return Box.symmetric(support_halfwidth(self.eta_dist(sigma_eta)))

    # -- (de)serialisation ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # -- validation -----------------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        """Check shapes, grids and that every tightened set is nonempty."""
        from safeid.harness.experiments import rmpc_config
        from safeid.rmpc import TerminalSetError, derive_gain_and_terminal, max_feasible_excitation

        try:
            true, nom, th0 = self.true_system, self.nominal, self.theta0
            w = self.w_dist
            X, U = self.X, self.U
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from None
        for m in list(self.modes) + [self.mode]:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; expected one of {MODES}")
        if not self.modes or not self.sigma_eta_grid or not self.T_grid:
            raise ConfigError("modes, sigma_eta_grid and T_grid must be nonempty")
        if self.repeats < 1:
            raise ConfigError("repeats must be at least 1")
        if any(int(T) != T or T < 1 for T in self.T_grid):
            raise ConfigError("T_grid entries must be positive integers")
        if any(s < 0 for s in self.sigma_eta_grid):
            raise ConfigError("sigma_eta values must be nonnegative")
        if not 0 < self.delta < 1 / 3:
            raise ConfigError("delta must lie in (0, 1/3)")
        if true.A.shape != nom.A.shape or true.B.shape != nom.B.shape:
            raise ConfigError("true and nominal systems have different shapes")
        if th0.center.shape != true.theta.shape:
            raise ConfigError("theta0 bounds have the wrong shape")
        if w.dim != true.n or X.dim != true.n or U.dim != true.m or len(self.x0) != true.n:
            raise ConfigError("noise, constraint or initial-state dimensions do not match the system")
        if not X.contains(self.x0):
            raise ConfigError("x0 violates the state constraint")

        needs_rmpc = any(m in RMPC_MODES for m in list(self.modes) + [self.mode])
        if needs_rmpc:
            for s in self.sigma_eta_grid:
                try:
                    derive_gain_and_terminal(rmpc_config(self, s))
                except (EmptySetError, TerminalSetError) as exc:
                    limit = max_feasible_excitation(rmpc_config(self, 0.0))
                    raise ConfigError(
                        f"sigma_eta={s} leaves no feasible tightened set ({exc}); "
                        f"largest feasible excitation halfwidth is {limit:.4g}"
                    ) from None
        return self
