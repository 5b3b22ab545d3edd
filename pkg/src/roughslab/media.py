"""Material parameter models and roughness phase/criticality formulas.

Materials follow the ITU-R P.2040 parameterization: a frequency-independent
real permittivity plus a conductivity power law sigma = c * f^d (f in GHz).
The roughness formulas quantify the phase spread a rough interface imprints
on reflected and transmitted wavefronts and the critical rms heights at
which that spread reaches the Rayleigh limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.constants import epsilon_0


@dataclass(frozen=True)
class MaterialParams:
    """ITU-style material description: eps', conductivity law sigma = c*f^d."""

    eps_real: float
    cond_coeff: float
    cond_exp: float
    name: str = ""

    def __post_init__(self):
        if self.eps_real < 1.0:
            raise ValueError(f"eps_real must be >= 1, got {self.eps_real}")
        if self.cond_coeff < 0.0:
            raise ValueError(f"cond_coeff must be >= 0, got {self.cond_coeff}")


@dataclass(frozen=True)
class Medium:
    """Material evaluated at one frequency (e^{+j omega t} convention)."""

    eps_r: complex          # eps' - j sigma/(eps0 omega)
    conductivity: float     # S/m
    refractive_index: float # Re sqrt(eps_r), principal root

    @property
    def eps_real(self) -> float:
        return self.eps_r.real


# Built-in material set (wood / plasterboard per ITU-R P.2040 at 1-100 GHz).
WOOD = MaterialParams(1.99, 0.0047, 1.0718, name="wood")
PLASTERBOARD = MaterialParams(2.94, 0.0116, 0.7076, name="plasterboard")
VACUUM = MaterialParams(1.0, 0.0, 0.0, name="vacuum")
# User-extensible extras; concrete from the same ITU recommendation.
CONCRETE = MaterialParams(5.31, 0.0326, 0.8095, name="concrete")

BUILTIN_MATERIALS = {m.name: m for m in (WOOD, PLASTERBOARD, VACUUM, CONCRETE)}


def medium_at(mat: MaterialParams, f_ghz: float) -> Medium:
    """Evaluate a material at frequency f_ghz, returning its Medium.

    sigma = c * f^d with f in GHz; eps_r = eps' - j sigma/(eps0 * 2 pi f).
    """
    if f_ghz <= 0:
        raise ValueError("frequency must be positive")
    if mat.cond_coeff == 0.0:
        sigma = 0.0
    else:
        sigma = mat.cond_coeff * f_ghz ** mat.cond_exp
    omega = 2.0 * math.pi * f_ghz * 1e9
    eps_r = mat.eps_real - 1j * sigma / (epsilon_0 * omega)
    n = complex(eps_r) ** 0.5
    if n.real < 0:
        n = -n
    return Medium(eps_r=eps_r, conductivity=sigma, refractive_index=n.real)


class TotalInternalReflectionError(ValueError):
    """Raised when Snell's law admits no real refraction angle."""


def _refraction_angle(theta_i_rad: float, n1: float, n2: float) -> float:
    s = n1 * math.sin(theta_i_rad) / n2
    if s > 1.0:
        raise TotalInternalReflectionError(
            f"n1 sin(theta_i) = {n1 * math.sin(theta_i_rad):.4f} exceeds n2 = {n2:.4f}"
        )
    return math.asin(s)


def phase_deviation(delta_h: float, theta_i_deg: float, wavelength: float,
                    n1: float, n2: float) -> dict:
    """Phase offsets a height step delta_h imprints on reflection/transmission.

    Returns {'reflection': 2 k dh cos(theta_i),
             'transmission': k dh (n1 cos(theta_i) - n2 cos(theta_2))}
    with theta_2 from Snell's law. Angles in degrees, lengths in meters.
    """
    if not (0.0 <= theta_i_deg < 90.0):
        raise ValueError("incidence angle must be in [0, 90) degrees")
    th1 = math.radians(theta_i_deg)
    th2 = _refraction_angle(th1, n1, n2)
    k = 2.0 * math.pi / wavelength
    return {
        "reflection": 2.0 * k * delta_h * math.cos(th1),
        "transmission": k * delta_h * (n1 * math.cos(th1) - n2 * math.cos(th2)),
    }


def critical_heights(theta_i_deg: float, wavelength: float,
                     n1: float, n2: float) -> dict:
    """Rayleigh-criterion critical rms heights for reflection and transmission.

    Reflection: lambda / (8 cos theta_i) -- material independent.
    Transmission: lambda / (4 |n1 cos theta_i - n2 cos theta_2|); the absolute
    value keeps the height positive for dense media, and the result is
    infinite when the two projections coincide.
    """
    if not (0.0 <= theta_i_deg < 90.0):
        raise ValueError("incidence angle must be in [0, 90) degrees")
    th1 = math.radians(theta_i_deg)
    th2 = _refraction_angle(th1, n1, n2)
    denom = n1 * math.cos(th1) - n2 * math.cos(th2)
    sigma_t = math.inf if denom == 0.0 else wavelength / (4.0 * abs(denom))
    return {
        "reflection": wavelength / (8.0 * math.cos(th1)),
        "transmission": sigma_t,
    }


# ---------------------------------------------------------------------------
# Material library file: "name eps_real c d" per line, '#' comments allowed.
# ---------------------------------------------------------------------------

def write_material_library(path, materials=None) -> None:
    mats = materials if materials is not None else BUILTIN_MATERIALS.values()
    lines = ["# material library: name eps_real cond_coeff cond_exp",
             "# conductivity model: sigma = cond_coeff * f_GHz^cond_exp"]
    for m in mats:
        lines.append(f"{m.name} {m.eps_real:.6g} {m.cond_coeff:.6g} {m.cond_exp:.6g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_material_library(path) -> dict:
    mats = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"bad material line: {raw!r}")
            name = parts[0]
            eps, c, d = (float(p) for p in parts[1:])
            mats[name] = MaterialParams(eps, c, d, name=name)
    return mats
