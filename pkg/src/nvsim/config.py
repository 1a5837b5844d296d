"""Experiment configuration: TOML files validated against pydantic models.

Every section is optional and falls back to the defaults below; unknown keys
are rejected. ``python3 -m nvsim.config <path>`` writes the JSON schema.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Literal, Optional

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .params import FieldConfig, NvParams
from .photophysics import RateSet

FamilyTag = Literal["a-", "b-", "c-", "d-", "a+", "b+", "c+", "d+"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ParamsSection(_Section):
    """Overrides of the spin-Hamiltonian constants (MHz, MHz/G)."""

    D: float = 2870.0
    D_es: float = 1430.0
    Q: float = -4.945
    gamma_e: float = Field(2.802, gt=0)
    gamma_n: float = 0.308e-3
    A_zz: float = -2.162
    A_perp: float = -2.62
    A_zz_es: float = 40.0
    A_perp_es: float = 23.0

    def build(self) -> NvParams:
        return NvParams(**self.model_dump())


class FieldSection(_Section):
    B: float = Field(82.71, ge=0, le=500, description="field magnitude (G)")
    theta_deg: float = Field(10.2, ge=0, le=90, description="angle to the NV axis (deg)")

    def build(self) -> FieldConfig:
        return FieldConfig.from_degrees(self.B, self.theta_deg)


class RatesSection(_Section):
    set: Literal["set1", "set2"] = "set1"
    k_las: Optional[float] = Field(None, gt=0, description="pumping rate (MHz)")
    k_las_fraction: float = Field(0.01, gt=0, description="k_Las as a fraction of k_PL")
    gamma_las: Optional[float] = Field(None, gt=0, description="target repolarization rate (MHz)")

    @model_validator(mode="after")
    def _one_rate(self):
        if self.k_las is not None and self.gamma_las is not None:
            raise ValueError("give at most one of k_las and gamma_las")
        return self

    def build(self) -> RateSet:
        from .photophysics import k_las_for_gamma
        rs = RateSet.preset(self.set, k_las=self.k_las, k_las_fraction=self.k_las_fraction)
        if self.gamma_las is not None:
            rs = rs.with_k_las(k_las_for_gamma(self.gamma_las, rs))
        return rs


class SpectrumSection(_Section):
    branches: list[Literal["+", "-"]] = ["+"]
    linewidth_mhz: float = Field(0.237, gt=0, description="Gaussian FWHM (MHz)")
    contrast: float = Field(0.1, gt=0, le=1)
    axis: Literal["x", "y"] = "x"
    margin_mhz: float = Field(3.0, ge=0)
    points: int = Field(2001, ge=2)
    min_intensity: float = Field(1e-3, ge=0, description="weakest line reported, relative to the strongest")
    merge_mhz: Optional[float] = Field(None, gt=0, description="lines closer than this merge; default FWHM/2")


class RatioSection(_Section):
    B_values: list[float] = [57.0, 75.0, 82.0]
    numerator: FamilyTag = "a-"
    denominator: Literal["1-", "2-", "3-", "1+", "2+", "3+"] = "2-"
    theta_min_deg: float = Field(84.0, ge=0, lt=90)
    theta_max_deg: float = Field(89.7, ge=0, lt=90)
    points: int = Field(58, ge=2)
    axes: list[Literal["x", "y"]] = ["x", "y"]

    @field_validator("B_values")
    @classmethod
    def _b_range(cls, v):
        if not v or any(not (0 <= b <= 500) for b in v):
            raise ValueError("B_values must be non-empty and within [0, 500] G")
        return v


class PolarizationSection(_Section):
    B_values: list[float] = [50.0, 100.0, 150.0]
    sets: list[Literal["set1", "set2"]] = ["set1", "set2"]
    theta_points: int = Field(19, ge=2)
    level: Literal[7, 21] = 7
    normalize: Literal["ground", "total"] = "ground"
    envelope: bool = True

    @field_validator("B_values")
    @classmethod
    def _b_range(cls, v):
        if not v or any(not (0 <= b <= 500) for b in v):
            raise ValueError("B_values must be non-empty and within [0, 500] G")
        return v


class DepolarizationSection(_Section):
    n_samples: int = Field(400, ge=16)
    discard: float = Field(0.05, ge=0, lt=0.5)
    horizon_us: Optional[float] = Field(None, gt=0)
    envelope_gamma_las: list[float] = []
    envelope_corners: Literal["axes", "full"] = "axes"
    a_perp_es_range: list[float] = [20.0, 26.0]


class CptSection(_Section):
    omega_a_mhz: float = Field(0.0306, gt=0)
    omega_1_mhz: float = Field(0.0129, gt=0)
    gamma_las: float = Field(0.018, gt=0)
    e2g1_fraction: float = Field(0.1, ge=0)
    g2g1_fraction: float = Field(0.05, ge=0)
    dephasing_ge: Optional[float] = Field(None, ge=0)
    half_span_mhz: float = Field(0.06, gt=0, description="two-photon detuning range +-half_span")
    points: int = Field(601, ge=16)
    odmr_depth: float = Field(0.1, gt=0, le=1)


class CptSweepSection(_Section):
    sweep: Literal["omega_1", "gamma_las"] = "omega_1"
    values: list[float] = [0.0129, 0.025, 0.05, 0.09]
    rates_follow_gamma: bool = True

    @field_validator("values")
    @classmethod
    def _positive(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("sweep values must be positive")
        return v


class PolarizeSection(_Section):
    pumps: list[str] = ["none", "a-", "c-/d-", "b-"]
    rabi_mhz: float = Field(0.017, ge=0)
    durations_us: list[float] = [100.0, 300.0, 100.0, 25.0]
    read_linewidth_mhz: float = Field(0.237, gt=0)
    stark: Literal["auto", "on", "off"] = "auto"

    @field_validator("pumps")
    @classmethod
    def _known(cls, v):
        ok = {"none", "a-", "b-", "c-", "d-", "c-/d-", "a+", "b+", "c+", "d+"}
        bad = [p for p in v if p not in ok]
        if bad:
            raise ValueError(f"unknown pump targets {bad}")
        return v

    @field_validator("durations_us")
    @classmethod
    def _durations(cls, v):
        if len(v) not in (3, 4) or any(d < 0 for d in v):
            raise ValueError("durations_us needs 3 or 4 non-negative values")
        return v


class CalibrateSection(_Section):
    E_plus: Optional[float] = Field(None, gt=0)
    E_minus: Optional[float] = Field(None, gt=0)
    sigma_plus: float = Field(0.05, ge=0)
    sigma_minus: float = Field(0.05, ge=0)


class OutputSection(_Section):
    dir: str = "out"


class ExperimentConfig(_Section):
    params: ParamsSection = ParamsSection()
    field: FieldSection = FieldSection()
    rates: RatesSection = RatesSection()
    spectrum: SpectrumSection = SpectrumSection()
    ratio: RatioSection = RatioSection()
    polarization: PolarizationSection = PolarizationSection()
    depolarization: DepolarizationSection = DepolarizationSection()
    cpt: CptSection = CptSection()
    cpt_sweep: CptSweepSection = CptSweepSection()
    polarize: PolarizeSection = PolarizeSection()
    calibrate: CalibrateSection = CalibrateSection()
    output: OutputSection = OutputSection()


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML config; every failure becomes ConfigError."""
    path = Path(path)
    try:
        data = tomli.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, str(path))


def config_from_dict(data: dict, source: str = "<dict>") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def json_schema() -> dict:
    return ExperimentConfig.model_json_schema()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    text = json.dumps(json_schema(), indent=2, sort_keys=True) + "\n"
    if argv:
        Path(argv[0]).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
