"""Physical constants and 40Ca+ atomic data."""

from dataclasses import dataclass

from scipy import constants as _c

TWO_PI = 2 * _c.pi


@dataclass(frozen=True)
class PhysicalConstants:
    electron_charge: float = _c.e
    vacuum_permittivity: float = _c.epsilon_0
    hbar: float = _c.hbar
    boltzmann: float = _c.k
    ion_mass: float = 39.962590863 * _c.atomic_mass
    bohr_magneton: float = _c.physical_constants["Bohr magneton"][0]
    planck: float = _c.h
    speed_of_light: float = _c.c

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")

    @property
    def coulomb_constant(self) -> float:
        return 1.0 / (4 * _c.pi * self.vacuum_permittivity)


CONSTANTS = PhysicalConstants()

# 4P3/2 natural lifetime and decay branching (S1/2, D5/2, D3/2)
P32_LIFETIME = 6.924e-9
P32_BRANCHING = (0.9347, 0.0587, 0.0066)

# Lande g-factors
G_S12 = 2.0
G_D52 = 6.0 / 5.0
