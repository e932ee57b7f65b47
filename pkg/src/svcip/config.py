"""Run configuration shared by the time loop and the command line."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .assembly import CIPParameters

SCHEMES = ("sv-cip", "sv-plain", "th-graddiv")
SAMPLE_INTERVAL = 0.1


@dataclass
class RunConfig:
    """Experiment description; defaults reproduce the reference study (k=2, nu=1e-8, T=4)."""

    scheme: str = "sv-cip"
    k: int = 2
    N: int = 6
    nu: float = 1e-8
    T: float = 4.0
    delta1: float = 1e-2
    delta2: float = 1e-4
    delta3: float = 1e-3
    u_floor: float = 1e-8
    gamma_gd: float = 0.05
    dt: float | None = None  # None selects the automatic policy
    theta: float = 0.5
    global_h: bool = False
    perturbation: float = 0.0
    load_degree: int | None = None
    N_list: list[int] = field(default_factory=lambda: [6, 12, 24, 48])

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.T < 0:
            raise ValueError("T must be non-negative")
        n_samples = self.T / SAMPLE_INTERVAL
        if abs(n_samples - round(n_samples)) > 1e-9:
            raise ValueError("T must be a multiple of the 0.1 sampling interval")
        if self.dt is not None:
            if not self.dt > 0:
                raise ValueError("dt must be positive")
            m = SAMPLE_INTERVAL / self.dt
            if abs(m - round(m)) > 1e-9:
                raise ValueError("dt must divide the 0.1 sampling interval")
        if self.gamma_gd < 0:
            raise ValueError("gamma_gd must be non-negative")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        self.cip_parameters()

    def cip_parameters(self) -> CIPParameters:
        return CIPParameters(self.delta1, self.delta2, self.delta3, self.u_floor, self.global_h)

    @property
    def divergence_free(self) -> bool:
        return self.scheme.startswith("sv")

    def steps_per_sample(self, h: float) -> int:
        """Time steps per 0.1 sampling interval.

        The automatic policy takes ``min(0.05, theta * h**((k + 1/2) / 2))`` and
        rounds the step down to the next divisor of 0.1.
        """
        if self.dt is not None:
            return int(round(SAMPLE_INTERVAL / self.dt))
        raw = min(0.05, self.theta * h ** ((self.k + 0.5) / 2))
        return int(math.ceil(SAMPLE_INTERVAL / raw - 1e-12))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
