"""System parameters with reference defaults and unit helpers."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import ConfigError

SPEED_OF_LIGHT = 3e8


def dbm_to_mw(p_dbm: float) -> float:
    return 10.0 ** (p_dbm / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Physical constants, array sizes and OFDM numerology.

    Powers are kept in dBm here and converted to milliwatts through the
    ``P_t`` and ``noise_variance`` helpers; every linear power in the package
    is in mW.
    """

    wavelength: float = 0.01
    c: float = SPEED_OF_LIGHT
    N_c: int = 100
    T: int = 32
    delta_f: float = 120e3
    N0_dBm_per_Hz: float = -174.0
    noise_figure_dB: float = 5.0
    N_F: int = 1024
    M_B: int = 17
    M_R: int = 33
    P_t_dBm: float = 0.0
    rho: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.N_c < 2:
            raise ConfigError(f"N_c must be >= 2, got {self.N_c}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.M_B < 2 or self.M_R < 2:
            raise ConfigError(f"M_B and M_R must be >= 2, got {self.M_B}, {self.M_R}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if self.N_F < self.N_c:
            raise ConfigError(f"N_F must be >= N_c, got N_F={self.N_F}, N_c={self.N_c}")
        for name in ("wavelength", "c", "delta_f"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def P_t(self) -> float:
        """Transmit power in mW."""
        return dbm_to_mw(self.P_t_dBm)

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2

    @property
    def max_delay(self) -> float:
        """Unambiguous delay span 1/delta_f in seconds."""
        return 1.0 / self.delta_f

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]
