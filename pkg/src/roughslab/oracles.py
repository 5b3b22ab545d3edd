"""Closed-form reference solutions used to validate the numerical pipelines.

These are implemented independently of the FDTD/NTFF/ray-tracing code paths
they check: a TE transfer-matrix solution for flat layered slabs, the exact
2-D radiation integral of a uniform current strip, and the Friis link
budget. All phasors use the e^{+j omega t} convention with e^{-jkr}
outgoing waves, matching the rest of the package.
"""

from __future__ import annotations

import cmath
import math

import numpy as np
from scipy.constants import c as c0
from scipy.constants import mu_0, epsilon_0

ETA0 = math.sqrt(mu_0 / epsilon_0)


def _kz(eps_r: complex, sin_theta: float, k0: float) -> complex:
    """Vertical wavenumber with the decaying branch (Im <= 0)."""
    kz = k0 * cmath.sqrt(eps_r - sin_theta ** 2)
    if kz.imag > 0:
        kz = -kz
    return kz


def te_fresnel(eps_r2: complex, theta_i_deg: float, eps_r1: complex = 1.0,
               k0: float = 1.0) -> complex:
    """TE (E perpendicular to plane of incidence) half-space reflection."""
    s = cmath.sqrt(eps_r1).real * math.sin(math.radians(theta_i_deg))
    kz1 = _kz(eps_r1, s, k0)
    kz2 = _kz(eps_r2, s, k0)
    return (kz1 - kz2) / (kz1 + kz2)


def te_slab_coefficients(eps_r_slab: complex, thickness: float,
                         theta_i_deg: float, f_hz: float,
                         vacuum_referenced: bool = True) -> tuple[complex, complex]:
    """Specular (R, T) of a flat slab in air, TE polarization.

    With vacuum_referenced=True the transmission phase is referenced to a
    wave crossing the same region in vacuum, which is how a probe below the
    slab normalized by a slab-free reference run measures it. Magnitudes
    are unaffected.
    """
    k0 = 2.0 * math.pi * f_hz / c0
    s = math.sin(math.radians(theta_i_deg))
    kz1 = _kz(1.0, s, k0)
    kz2 = _kz(eps_r_slab, s, k0)
    r12 = (kz1 - kz2) / (kz1 + kz2)
    r23 = -r12
    t12 = 2.0 * kz1 / (kz1 + kz2)
    t23 = 2.0 * kz2 / (kz2 + kz1)
    ph = cmath.exp(-1j * kz2 * thickness)
    denom = 1.0 + r12 * r23 * ph * ph
    refl = (r12 + r23 * ph * ph) / denom
    tran = t12 * t23 * ph / denom
    if vacuum_referenced:
        tran *= cmath.exp(1j * kz1 * thickness)
    return refl, tran


def line_source_far_field(current_amps: float, width: float, f_hz: float,
                          theta_deg: np.ndarray, r: float) -> np.ndarray:
    """Far E_y of a uniform y-directed current strip |x| <= width/2 at z=0.

    E_y(r, theta) = -(k eta0 J0 / 4) sqrt(2j/(pi k r)) e^{-jkr}
                    * width * sinc(k width sin(theta) / 2)
    theta measured from +z in the x-z plane.
    """
    k = 2.0 * math.pi * f_hz / c0
    th = np.radians(np.asarray(theta_deg, dtype=float))
    u = 0.5 * k * width * np.sin(th)
    pattern = width * np.sinc(u / math.pi)  # np.sinc is sin(pi x)/(pi x)
    pref = -(k * ETA0 * current_amps / 4.0) * cmath.sqrt(2j / (math.pi * k * r)) \
        * cmath.exp(-1j * k * r)
    return pref * pattern


def aperture_beam_pattern(width: float, f_hz: float, theta_deg: np.ndarray,
                          theta_beam_deg: float,
                          window: np.ndarray | None = None) -> np.ndarray:
    """|Steered-strip| pattern: coherent aperture factor around a beam angle.

    Normalized to 1 at theta = theta_beam_deg. `window` optionally tapers
    the strip (same length convention as the NTFF probe window).
    """
    k = 2.0 * math.pi * f_hz / c0
    th = np.radians(np.asarray(theta_deg, dtype=float))
    tb = math.radians(theta_beam_deg)
    if window is None:
        u = 0.5 * k * width * (np.sin(th) - math.sin(tb))
        return np.abs(np.sinc(u / math.pi))
    n = window.size
    x = (np.arange(n) - (n - 1) / 2.0) * (width / n)
    phases = np.exp(1j * k * np.outer(np.sin(th) - math.sin(tb), x))
    vals = phases @ window
    return np.abs(vals) / np.sum(window)


def friis_power_dbm(p_tx_dbm: float, gain_tx: float, gain_rx: float,
                    distance: float, f_hz: float) -> float:
    """Free-space received power (dBm) for an isotropic-referenced link."""
    lam = c0 / f_hz
    if distance <= 0:
        raise ValueError("distance must be positive")
    loss = (lam / (4.0 * math.pi * distance)) ** 2
    return p_tx_dbm + 10.0 * math.log10(gain_tx * gain_rx * loss)
