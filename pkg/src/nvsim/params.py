"""Physical constants and field configuration.

Units throughout the package: MHz for energies and rates, Gauss for fields,
microseconds for times, radians for angles. Hamiltonians are in frequency
units (h = 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class NvParams:
    """Spin-Hamiltonian constants of the NV centre and its 14N nucleus."""

    D: float = 2870.0
    D_es: float = 1430.0
    Q: float = -4.945
    gamma_e: float = 2.802
    gamma_n: float = 0.308e-3
    A_zz: float = -2.162
    A_perp: float = -2.62
    A_zz_es: float = 40.0
    A_perp_es: float = 23.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.gamma_e <= 0:
            raise ValueError("gamma_e must be positive")

    def replace(self, **changes) -> "NvParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NvParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown NvParams fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class FieldConfig:
    """Static field of magnitude ``B`` at angle ``theta`` to the NV axis.

    The field lies in the z-x plane unless ``phi`` (azimuth) is given.
    """

    B: float
    theta: float
    phi: float = field(default=0.0)

    def __post_init__(self):
        if not (math.isfinite(self.B) and self.B >= 0):
            raise ValueError(f"B must be finite and >= 0, got {self.B!r}")
        if not (0.0 <= self.theta <= math.pi / 2 + 1e-12):
            raise ValueError(f"theta must lie in [0, pi/2], got {self.theta!r}")

    @classmethod
    def from_degrees(cls, B: float, theta_deg: float, phi_deg: float = 0.0) -> "FieldConfig":
        return cls(B, math.radians(theta_deg), math.radians(phi_deg))

    @property
    def B_parallel(self) -> float:
        return self.B * math.cos(self.theta)

    @property
    def B_perp(self) -> float:
        return self.B * math.sin(self.theta)

    @property
    def vector(self) -> tuple[float, float, float]:
        """Cartesian components (Bx, By, Bz) in the NV frame."""
        bp = self.B_perp
        return (bp * math.cos(self.phi), bp * math.sin(self.phi), self.B_parallel)

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)
