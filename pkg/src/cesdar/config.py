"""Experiment and solver configuration records plus their JSON round trip."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .exceptions import ConfigurationError

__all__ = ["SolverConfig", "TuningConfig", "ExperimentConfig"]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of one support-detection-and-root-finding run.

    sparsity ``T`` is the active-set size, ``tau`` in (0, 1] balances the
    primal iterate against the dual step inside the detection keys.
    """

    sparsity: int
    tau: float = 0.5
    max_iter: int = 50
    kkt_tol: float = 1e-8
    # Inner surrogate solve: absolute tolerance on the dual-scale residual
    # and a round cap. The defaults drive the root far below kkt_tol.
    surrogate_tol: float = 1e-12
    surrogate_max_rounds: int = 200

    def __post_init__(self):
        if self.sparsity < 1:
            raise ConfigurationError(f"sparsity must be >= 1, got {self.sparsity}")
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        if self.max_iter < 1:
            raise ConfigurationError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.kkt_tol <= 0:
            raise ConfigurationError("kkt_tol must be positive")


@dataclass(frozen=True)
class TuningConfig:
    """Sweep settings for the adaptive (HBIC-scored) variant."""

    step: int = 1
    machines: int = 1
    j_override: int | None = None
    tau: float = 0.5
    max_iter: int = 50
    kkt_tol: float = 1e-8

    def __post_init__(self):
        if self.step < 1:
            raise ConfigurationError(f"step must be a positive integer, got {self.step}")
        if self.machines < 1:
            raise ConfigurationError(f"machines must be >= 1, got {self.machines}")
        if self.j_override is not None and self.j_override < 1:
            raise ConfigurationError("j_override must be >= 1 when set")


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation cell: data shape, algorithm knobs, and replication."""

    algorithm: str = "cesdar"
    n: int = 1000
    p: int = 100
    s: int = 10
    sparsity: int = 10
    machines: int = 1
    tau: float = 0.5
    signal_ratio: float = 20.0
    noise_sd: float = 1.0
    n_test: int = 1000
    replicates: int = 100
    base_seed: int = 0
    max_iter: int = 50
    step: int = 1
    example: int | None = None
    scale: float = 1.0
    label: str = ""

    _ALGOS = ("esdar", "cesdar", "ecesdar", "acesdar")

    def __post_init__(self):
        if self.algorithm not in self._ALGOS:
            raise ConfigurationError(
                f"unknown algorithm {self.algorithm!r}; expected one of {self._ALGOS}"
            )
        if self.s > self.p:
            raise ConfigurationError(f"s={self.s} exceeds p={self.p}")
        if self.machines < 1 or self.machines > self.n:
            raise ConfigurationError(f"machines must lie in [1, n], got {self.machines}")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(sparsity=self.sparsity, tau=self.tau, max_iter=self.max_iter)

    def tuning_config(self) -> TuningConfig:
        return TuningConfig(
            step=self.step, machines=self.machines, tau=self.tau, max_iter=self.max_iter
        )

    def to_json(self) -> str:
        data = dataclasses.asdict(self)
        return json.dumps(data, sort_keys=True, separators=(", ", ": "))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config JSON must be a flat object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)
