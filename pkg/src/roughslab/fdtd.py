"""2-D TE FDTD engine for oblique plane-wave scattering from rough slabs.

Field set: E_y(x, z), H_x, H_z on a Yee grid, z increasing downward (the
incident wave travels toward +x, +z at theta_i from the z axis). A closed
total-field/scattered-field box surrounds the slab; its correction terms
come from a 1-D auxiliary grid that contains the same flat layered stack
and is time-delayed per column, so the box cleanly injects an obliquely
incident plane-wave strip. Uniaxial-PML absorbers terminate the grid and
support lossy background material inside the side walls.

The reflection probe line sits above the box in the scattered region and
therefore records only the roughness-induced perturbation; the flat-stack
upgoing wave (known from the auxiliary grid steady state) is reconstructed
on the same line so downstream processing sees the full reflected field.
The transmission probe sits inside the box under the slab where the total
transmitted field lives. Steady-state phasors are accumulated by running
DFT at the carrier over an integer number of periods.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.constants import c as c0
from scipy.constants import epsilon_0 as eps0
from scipy.constants import mu_0 as mu0

from .media import MaterialParams, VACUUM, medium_at
from .surface import HeightProfile

ETA0 = math.sqrt(mu0 / eps0)


class StabilityError(RuntimeError):
    """FDTD run diverged; carries the offending step index."""

    def __init__(self, step: int, magnitude: float):
        super().__init__(f"field magnitude {magnitude:.3e} exceeded stability "
                         f"bound at step {step}")
        self.step = step


class EvanescentLayerError(ValueError):
    """Auxiliary-grid effective permittivity non-positive in some layer."""


# ---------------------------------------------------------------------------
# Specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    dx: float
    dz: float
    dt: float
    nx: int
    nz: int
    n_steps: int
    dft_start_step: int
    pml_cells: int = 10
    courant_factor: float = 0.99 / math.sqrt(2.0)
    n_ramp_periods: int = 5
    n_dft_periods: int = 8
    matched_aux_dispersion: bool = True
    dispersion_compensate: bool = True
    tfsf_interp: str = "cubic"
    aux_substeps: int = 0          # 0 = choose automatically
    dtype: str = "float64"

    def __post_init__(self):
        if self.dx <= 0 or self.dz <= 0 or self.dt <= 0:
            raise ValueError("grid steps must be positive")
        dt_max = self.courant_factor / (c0 * math.sqrt(1.0 / self.dx ** 2 +
                                                       1.0 / self.dz ** 2))
        if self.dt > dt_max * (1.0 + 1e-12):
            raise ValueError(f"dt={self.dt:.3e} exceeds CFL bound {dt_max:.3e}")
        if self.courant_factor >= 1.0:
            raise ValueError("Courant factor must be < 1")
        if self.pml_cells < 8:
            raise ValueError("PML must be at least 8 cells thick")
        if self.tfsf_interp not in ("cubic", "linear"):
            raise ValueError("tfsf_interp must be 'cubic' or 'linear'")


@dataclass(frozen=True)
class SlabScene:
    """Three-layer (air / material / air) scattering scene geometry.

    z positions are depths from the grid top (z increases downward) and are
    grid-aligned by the builder. Rough profiles perturb the two nominal
    interfaces across the TF/SF aperture; positive height pushes the
    interface deeper.
    """

    f_hz: float
    theta_deg: float
    thickness: float
    material: MaterialParams
    upper_profile: HeightProfile | None
    lower_profile: HeightProfile | None
    aperture: float
    z1: float
    z2: float
    z_box_top: float
    z_box_bottom: float
    z_probe_refl: float
    z_probe_trans: float
    x_box_left: float
    edge_taper: float
    probe_margin: float

    def digest(self) -> str:
        parts = [f"{self.f_hz:.6e}", f"{self.theta_deg:.6f}",
                 f"{self.thickness:.9e}", self.material.name,
                 f"{self.material.eps_real}", f"{self.material.cond_coeff}",
                 f"{self.aperture:.9e}"]
        for p in (self.upper_profile, self.lower_profile):
            if p is None:
                parts.append("flat")
            else:
                parts.append(f"{p.spec.seed}:{p.spec.rms_height:.3e}:"
                             f"{p.spec.corr_length:.3e}:{p.spec.spectrum_kind}")
                parts.append(hashlib.sha256(
                    np.ascontiguousarray(p.heights).tobytes()).hexdigest()[:8])
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:12]


@dataclass
class AuxGridRecord:
    """Stored 1-D auxiliary-grid field histories feeding TF/SF corrections."""

    ey: np.ndarray          # (n_aux+1, nz) at times m*dt_aux
    hx: np.ndarray          # (n_aux, nz-1) at times (m+1/2)*dt_aux
    dt_aux: float
    dz: float
    f_hz: float
    theta_deg: float
    substeps: int
    sin2_eff: np.ndarray    # per-row effective sin^2 used in the E update
    eps_flat: np.ndarray    # per-row flat-stack eps'
    sigma_flat: np.ndarray  # per-row flat-stack conductivity
    source: np.ndarray      # injected source series at times m*dt_aux


@dataclass
class ProbeRecord:
    """Carrier-frequency phasors on the two probe lines plus references."""

    f_hz: float
    theta_deg: float
    x: np.ndarray
    refl_ey: np.ndarray
    refl_hx: np.ndarray
    trans_ey: np.ndarray
    trans_hx: np.ndarray
    x_hz: np.ndarray
    refl_hz: np.ndarray
    trans_hz: np.ndarray
    refl_flat_ey: np.ndarray
    refl_flat_hx: np.ndarray
    inc_refl_ey: np.ndarray
    inc_refl_hx: np.ndarray
    aux_down_amp: complex
    aux_up_amp: complex
    z_probe_refl: float
    z_probe_trans: float
    scattered_peak_db: float
    scene_digest: str
    reference: "ProbeRecord | None" = None

    @property
    def total_refl_ey(self) -> np.ndarray:
        return self.refl_ey + self.refl_flat_ey

    @property
    def total_refl_hx(self) -> np.ndarray:
        return self.refl_hx + self.refl_flat_hx


# ---------------------------------------------------------------------------
# Scene construction
# ---------------------------------------------------------------------------

def build_scene(material: MaterialParams, thickness: float, theta_deg: float,
                f_hz: float, upper_profile: HeightProfile | None = None,
                lower_profile: HeightProfile | None = None,
                aperture: float | None = None, resolution: float = 35.0,
                pml_cells: int = 10, probe_margin: float | None = None,
                edge_taper: float | None = None, margin_rows: int | None = None,
                n_ramp_periods: int = 5, n_dft_periods: int = 8,
                settle_bounce_db: float = -60.0, dtype: str = "float64",
                courant_factor: float = 0.99 / math.sqrt(2.0),
                matched_aux_dispersion: bool = True,
                dispersion_compensate: bool = True,
                tfsf_interp: str = "cubic",
                extra_settle_periods: int = 0,
                half_space: bool = False) -> tuple[SlabScene, GridSpec]:
    """Size a consistent (scene, grid) pair for a slab scattering run.

    Vertical margins between the TF/SF box and the nominal interfaces are
    set from the largest rms height so rough realizations cannot touch the
    box; passing margin_rows pins them instead (ensembles share one grid).
    """
    lam = c0 / f_hz
    d = lam / resolution
    period = 1.0 / f_hz

    profiles = [p for p in (upper_profile, lower_profile) if p is not None]
    for p in profiles:
        if abs(p.spec.spacing - d) > 1e-9 * d:
            raise ValueError("profile spacing must equal the FDTD cell size")
    if profiles:
        n_ap = profiles[0].spec.n_points
        if any(p.spec.n_points != n_ap for p in profiles):
            raise ValueError("upper/lower profiles must share n_points")
        aperture_m = n_ap * d
        lc = max(p.spec.corr_length for p in profiles)
        sigma_max = max(p.spec.rms_height for p in profiles)
    else:
        aperture_m = aperture if aperture is not None else 10.0 * lam
        n_ap = int(round(aperture_m / d))
        aperture_m = n_ap * d
        lc = 2.0 * d
        sigma_max = 0.0

    if probe_margin is None:
        probe_margin = max(2.0 * lc, 4.0 * d) if profiles else 4.0 * d
    if edge_taper is None:
        edge_taper = probe_margin

    if margin_rows is None:
        margin_rows = int(math.ceil(5.0 * sigma_max / d)) + 8

    k_probe_refl = pml_cells + 4
    k_top = k_probe_refl + 4
    k_z1 = k_top + margin_rows
    if half_space:
        # Lower medium extends through the bottom PML and beyond the grid.
        k_bot = k_z1 + margin_rows + 8
        nz = k_bot + 4 + pml_cells + 1
        k_z2 = nz + 16
        n_thick = k_z2 - k_z1
    else:
        n_thick = max(1, int(round(thickness / d)))
        k_z2 = k_z1 + n_thick
        k_bot = k_z2 + margin_rows
        nz = k_bot + 4 + pml_cells + 1
    thickness_snapped = n_thick * d
    k_probe_trans = k_bot - 4

    i_left = pml_cells + 4
    i_right = i_left + n_ap - 1
    nx = i_right + 1 + 4 + pml_cells

    dt_max = courant_factor / (c0 * math.sqrt(1.0 / d ** 2 + 1.0 / d ** 2))
    steps_per_period = int(math.ceil(period / dt_max))
    dt = period / steps_per_period

    med = medium_at(material, f_hz / 1e9)
    s = math.sin(math.radians(theta_deg))
    n_slab_rows = min(n_thick, nz)
    t_air = (nz - n_slab_rows) * d / c0
    eff = max(med.eps_r.real - s * s, 0.05)
    t_slab = n_slab_rows * d * math.sqrt(eff) / c0
    t_cross = t_air + t_slab

    if half_space:
        n_bounce = 0
    else:
        k0 = 2.0 * math.pi / lam
        kz1 = k0 * math.sqrt(max(1.0 - s * s, 1e-9))
        kz2 = k0 * np.sqrt(complex(med.eps_r - s * s))
        if kz2.imag > 0:
            kz2 = -kz2
        r12 = abs((kz1 - kz2) / (kz1 + kz2))
        att = math.exp(2.0 * kz2.imag * thickness_snapped)
        decay = max(r12 * r12 * att, 1e-12)
        target = 10.0 ** (settle_bounce_db / 20.0)
        n_bounce = 1 if decay <= target else min(15, int(math.ceil(
            math.log(target) / math.log(decay))))

    t_settle = (n_ramp_periods + extra_settle_periods) * period \
        + 2.2 * t_cross + n_bounce * 2.0 * t_slab
    n_steps = int(math.ceil(t_settle / dt)) + n_dft_periods * steps_per_period
    dft_start = n_steps - n_dft_periods * steps_per_period

    scene = SlabScene(
        f_hz=f_hz, theta_deg=theta_deg, thickness=thickness_snapped,
        material=material, upper_profile=upper_profile,
        lower_profile=lower_profile, aperture=aperture_m,
        z1=k_z1 * d, z2=k_z2 * d, z_box_top=k_top * d, z_box_bottom=k_bot * d,
        z_probe_refl=k_probe_refl * d, z_probe_trans=k_probe_trans * d,
        x_box_left=i_left * d, edge_taper=edge_taper, probe_margin=probe_margin)
    grid = GridSpec(
        dx=d, dz=d, dt=dt, nx=nx, nz=nz, n_steps=n_steps,
        dft_start_step=dft_start, pml_cells=pml_cells,
        courant_factor=courant_factor, n_ramp_periods=n_ramp_periods,
        n_dft_periods=n_dft_periods,
        matched_aux_dispersion=matched_aux_dispersion,
        dispersion_compensate=dispersion_compensate,
        tfsf_interp=tfsf_interp, dtype=dtype)
    return scene, grid


def reference_scene(scene: SlabScene) -> SlabScene:
    """Same geometry with the slab replaced by vacuum and flat interfaces."""
    return replace(scene, material=VACUUM, upper_profile=None,
                   lower_profile=None)


# ---------------------------------------------------------------------------
# Geometry helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Layout:
    i_left: int
    i_right: int
    k_top: int
    k_bot: int
    k_probe_refl: int
    k_probe_trans: int
    probe_i0: int
    probe_i1: int   # inclusive


def _layout(scene: SlabScene, grid: GridSpec) -> _Layout:
    dx, dz = grid.dx, grid.dz
    i_left = int(round(scene.x_box_left / dx))
    n_ap = int(round(scene.aperture / dx))
    i_right = i_left + n_ap - 1
    k_top = int(round(scene.z_box_top / dz))
    k_bot = int(round(scene.z_box_bottom / dz))
    k_pr = int(round(scene.z_probe_refl / dz))
    k_pt = int(round(scene.z_probe_trans / dz))
    m = int(round(scene.probe_margin / dx))
    lay = _Layout(i_left, i_right, k_top, k_bot, k_pr, k_pt,
                  i_left + m, i_right - m)
    if not (grid.pml_cells + 4 <= k_pr < k_top < k_bot < grid.nz - grid.pml_cells - 4):
        raise ValueError("probe/box rows violate PML clearance")
    if k_pt <= k_top or k_pt >= k_bot - 1:
        raise ValueError("transmission probe must lie inside the box below the slab")
    if lay.probe_i1 - lay.probe_i0 < 8:
        raise ValueError("probe line too short after margin shortening")
    return lay


def effective_permittivity(delta_x: float, delta_z: float, dx: float,
                           dz: float, eps1: float, eps2: float) -> float:
    """Contour-path area blend for a cell straddling a material interface."""
    if not (0.0 <= delta_x <= dx and 0.0 <= delta_z <= dz):
        raise ValueError("sub-cell extents must lie within the cell")
    frac = (delta_x * delta_z) / (dx * dz)
    return eps1 * (1.0 - frac) + eps2 * frac


def _interface_offsets(scene: SlabScene, grid: GridSpec, lay: _Layout):
    """Per-column interface depth offsets (tapered heights), full grid width."""
    nx = grid.nx
    up = np.zeros(nx)
    lo = np.zeros(nx)
    n_ap = lay.i_right - lay.i_left + 1
    taper = np.ones(n_ap)
    n_t = int(round(scene.edge_taper / grid.dx))
    if n_t > 0:
        ramp = 0.5 * (1.0 - np.cos(np.pi * np.arange(n_t) / n_t))
        taper[:n_t] *= ramp
        taper[-n_t:] *= ramp[::-1]
    if scene.upper_profile is not None:
        up[lay.i_left:lay.i_right + 1] = scene.upper_profile.heights[:n_ap] * taper
    if scene.lower_profile is not None:
        lo[lay.i_left:lay.i_right + 1] = scene.lower_profile.heights[:n_ap] * taper
    return up, lo


def _slab_eps_sigma(scene: SlabScene, grid: GridSpec) -> tuple[float, float]:
    """Slab eps'/sigma as realized on the grid.

    With dispersion compensation the permittivity is nudged so the discrete
    plane-wave mode at (carrier, theta_i) propagates with the continuum
    vertical wavenumber, removing the slab-interior phase error of the
    lambda/35 sampling from specular coefficients.
    """
    med = medium_at(scene.material, scene.f_hz / 1e9)
    eps2 = med.eps_r.real
    sig2 = med.conductivity
    if not grid.dispersion_compensate or eps2 == 1.0:
        return eps2, sig2
    k0 = 2.0 * math.pi * scene.f_hz / c0
    s = math.sin(math.radians(scene.theta_deg))
    kz_c = k0 * np.sqrt(complex(med.eps_r - s * s))
    if kz_c.imag > 0:
        kz_c = -kz_c
    s_x, s_t, _ = _spectral_terms(grid, scene.theta_deg, scene.f_hz, grid.dt)
    arg = 0.5 * kz_c.real * grid.dz
    if arg >= 0.5 * math.pi:
        return eps2, sig2
    eps_num = ((math.sin(arg) / grid.dz) ** 2 + s_x) / s_t
    return eps_num, sig2


def _material_maps(scene: SlabScene, grid: GridSpec, lay: _Layout):
    """eps'/sigma maps on E nodes; fractional fill at interface cells."""
    eps2, sig2 = _slab_eps_sigma(scene, grid)
    up_off, lo_off = _interface_offsets(scene, grid, lay)
    z_up = scene.z1 + up_off          # (nx,)
    z_lo = scene.z2 + lo_off

    guard = 2.0 * grid.dz
    grid_depth = (grid.nz - 1) * grid.dz
    lower_inside = scene.z2 < grid_depth
    if z_up.min() < scene.z_box_top + guard or (
            lower_inside and z_lo.max() > scene.z_box_bottom - guard):
        raise ValueError("roughness excursion reaches the TF/SF boundary; "
                         "increase margins")

    k = np.arange(grid.nz)
    cell_lo = (k - 0.5) * grid.dz     # (nz,)
    cell_hi = (k + 0.5) * grid.dz
    overlap = (np.minimum(cell_hi[None, :], z_lo[:, None])
               - np.maximum(cell_lo[None, :], z_up[:, None]))
    frac = np.clip(overlap / grid.dz, 0.0, 1.0)
    eps_map = 1.0 + (eps2 - 1.0) * frac
    sig_map = sig2 * frac
    return eps_map, sig_map


def _flat_stack(scene: SlabScene, grid: GridSpec):
    """Per-row eps'/sigma of the unperturbed layered stack (aux grid medium)."""
    eps2, sig2 = _slab_eps_sigma(scene, grid)
    k = np.arange(grid.nz)
    cell_lo = (k - 0.5) * grid.dz
    cell_hi = (k + 0.5) * grid.dz
    overlap = np.minimum(cell_hi, scene.z2) - np.maximum(cell_lo, scene.z1)
    frac = np.clip(overlap / grid.dz, 0.0, 1.0)
    return 1.0 + (eps2 - 1.0) * frac, sig2 * frac


def _pml_profile(n: int, pml: int, delta: float, half: bool) -> np.ndarray:
    """Cubic-graded PML conductivity along one axis (length n or n-1)."""
    sig_max = 0.8 * 4.0 / (ETA0 * delta)
    size = n - 1 if half else n
    pos = np.arange(size) + (0.5 if half else 0.0)
    sig = np.zeros(size)
    left = pml - pos
    mask = left > 0
    sig[mask] = sig_max * (left[mask] / pml) ** 3
    right = pos - (n - 1 - pml)
    mask = right > 0
    sig[mask] = sig_max * (right[mask] / pml) ** 3
    return sig


# ---------------------------------------------------------------------------
# Numerical dispersion helpers
# ---------------------------------------------------------------------------

def _spectral_terms(grid: GridSpec, theta_deg: float, f_hz: float,
                    dt_aux: float):
    """S_x, S_t (main grid) and S_t_aux at the carrier for aux matching."""
    omega = 2.0 * math.pi * f_hz
    kx = omega / c0 * math.sin(math.radians(theta_deg))
    s_x = (math.sin(0.5 * kx * grid.dx) / grid.dx) ** 2
    s_t = (math.sin(0.5 * omega * grid.dt) / (c0 * grid.dt)) ** 2
    s_t_aux = (math.sin(0.5 * omega * dt_aux) / (c0 * dt_aux)) ** 2
    return s_x, s_t, s_t_aux


def main_grid_kz(grid: GridSpec, theta_deg: float, f_hz: float,
                 eps_real: float = 1.0) -> float:
    """Main-grid vertical wavenumber of the plane-wave mode at the carrier."""
    s_x, s_t, _ = _spectral_terms(grid, theta_deg, f_hz, grid.dt)
    val = eps_real * s_t - s_x
    if val <= 0:
        raise EvanescentLayerError("mode is evanescent on the main grid")
    arg = grid.dz * math.sqrt(val)
    if arg > 1.0:
        raise EvanescentLayerError("vertical wavenumber beyond grid Nyquist")
    return 2.0 / grid.dz * math.asin(arg)


def _discrete_hx_over_ey(grid: GridSpec, kz: float, f_hz: float,
                         upgoing: bool) -> float:
    """Plane-wave H_x/E_y ratio of the discrete main-grid mode."""
    omega = 2.0 * math.pi * f_hz
    ratio = (grid.dt * math.sin(0.5 * kz * grid.dz)) / (
        mu0 * grid.dz * math.sin(0.5 * omega * grid.dt))
    return ratio if upgoing else -ratio


def _discrete_hz_over_ey(grid: GridSpec, theta_deg: float, f_hz: float) -> float:
    """Slaved H_z/E_y ratio of the delayed incident family (x-curl identity)."""
    omega = 2.0 * math.pi * f_hz
    kx = omega / c0 * math.sin(math.radians(theta_deg))
    if kx == 0.0:
        return 0.0
    return (grid.dt * math.sin(0.5 * kx * grid.dx)) / (
        mu0 * grid.dx * math.sin(0.5 * omega * grid.dt))


# ---------------------------------------------------------------------------
# Auxiliary 1-D grid
# ---------------------------------------------------------------------------

def run_aux_grid(scene: SlabScene, grid: GridSpec,
                 n_steps: int | None = None) -> AuxGridRecord:
    """Run the layered 1-D grid and store full E/H time histories.

    The update uses the effective permittivity eps' - sin^2(theta) per row
    (replaced by its grid-dispersion-matched value when the grid requests
    it) and the loss coefficients A-/A+; a ramped sinusoid is injected
    softly near the top and both ends are terminated by Mur boundaries
    tuned to the local numerical phase velocity.
    """
    if n_steps is None:
        n_steps = grid.n_steps
    eps_flat, sigma_flat = _flat_stack(scene, grid)
    theta = math.radians(scene.theta_deg)
    sin2_geo = math.sin(theta) ** 2

    eps_min_est = eps_flat.min() - sin2_geo
    if eps_min_est <= 0:
        raise EvanescentLayerError(
            f"eps' - sin^2(theta) = {eps_min_est:.4f} <= 0; the auxiliary "
            "grid cannot represent this incidence")

    m_sub = grid.aux_substeps
    if m_sub <= 0:
        m_sub = 1
        while c0 * (grid.dt / m_sub) > 0.98 * grid.dz * math.sqrt(eps_min_est):
            m_sub += 1
    dt_a = grid.dt / m_sub

    s_x, s_t, s_t_a = _spectral_terms(grid, scene.theta_deg, scene.f_hz, dt_a)
    if grid.matched_aux_dispersion:
        eps_aux = (eps_flat * s_t - s_x) / s_t_a
        sin2_eff = eps_flat - eps_aux
    else:
        eps_aux = eps_flat - sin2_geo
        sin2_eff = np.full_like(eps_flat, sin2_geo)
    if eps_aux.min() <= 0:
        raise EvanescentLayerError("effective aux permittivity non-positive")
    if c0 * dt_a > grid.dz * math.sqrt(eps_aux.min()):
        raise StabilityError(0, float("inf"))

    nz = grid.nz
    loss = sigma_flat * dt_a / (2.0 * eps0 * eps_aux)
    a_ratio = (1.0 - loss) / (1.0 + loss)
    a_curl = dt_a / (eps0 * eps_aux * grid.dz * (1.0 + loss))

    omega = 2.0 * math.pi * scene.f_hz
    # Mur coefficients from the numerical phase speed in the end medium.
    def _mur_coeff(k_row: int) -> float:
        arg = grid.dz * math.sqrt(eps_aux[k_row] * s_t_a)
        kz = 2.0 / grid.dz * math.asin(min(arg, 1.0))
        v = omega / kz
        return (v * dt_a - grid.dz) / (v * dt_a + grid.dz)

    c_top = _mur_coeff(1)
    c_bot = _mur_coeff(nz - 2)

    n_aux = n_steps * m_sub + 8 * m_sub
    ey_hist = np.zeros((n_aux + 1, nz))
    hx_hist = np.zeros((n_aux, nz - 1))
    source = np.zeros(n_aux + 1)

    ramp_t = grid.n_ramp_periods / scene.f_hz
    k_src = 2
    ey = np.zeros(nz)
    hx = np.zeros(nz - 1)
    h_coef = dt_a / (mu0 * grid.dz)
    for m in range(n_aux):
        hx += h_coef * np.diff(ey)
        hx_hist[m] = hx
        e_top_prev = ey[1]
        e_bot_prev = ey[nz - 2]
        e0_old = ey[0]
        e1_old = ey[nz - 1]
        ey[1:-1] = a_ratio[1:-1] * ey[1:-1] + a_curl[1:-1] * np.diff(hx)
        t_new = (m + 1) * dt_a
        envelope = 1.0 if t_new >= ramp_t else 0.5 * (1.0 - math.cos(
            math.pi * t_new / ramp_t))
        src = envelope * math.sin(omega * t_new)
        ey[k_src] += src
        source[m + 1] = src
        ey[0] = e_top_prev + c_top * (ey[1] - e0_old)
        ey[nz - 1] = e_bot_prev + c_bot * (ey[nz - 2] - e1_old)
        ey_hist[m + 1] = ey

    return AuxGridRecord(ey=ey_hist, hx=hx_hist, dt_aux=dt_a, dz=grid.dz,
                         f_hz=scene.f_hz, theta_deg=scene.theta_deg,
                         substeps=m_sub, sin2_eff=sin2_eff,
                         eps_flat=eps_flat, sigma_flat=sigma_flat,
                         source=source)


# ---------------------------------------------------------------------------
# Delayed-history interpolation
# ---------------------------------------------------------------------------

def _interp_1d(series: np.ndarray, idx: np.ndarray, order: str) -> np.ndarray:
    """Sample one stored time series at fractional indices (0 before start)."""
    idx = np.atleast_1d(np.asarray(idx, dtype=float))
    n = series.shape[0]
    out = np.zeros(idx.shape)
    valid = idx >= 0.0
    if not valid.any():
        return out
    iv = np.clip(idx, 0.0, n - 1.000001)
    i0 = np.floor(iv).astype(np.int64)
    f = iv - i0
    if order == "cubic":
        inner = valid & (i0 >= 1) & (i0 <= n - 3)
        if inner.any():
            ii = i0[inner]
            ff = f[inner]
            p0 = series[ii - 1]
            p1 = series[ii]
            p2 = series[ii + 1]
            p3 = series[ii + 2]
            out[inner] = 0.5 * (2.0 * p1 + (-p0 + p2) * ff
                                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * ff ** 2
                                + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * ff ** 3)
        edge = valid & ~inner
    else:
        edge = valid
    if edge.any():
        ii = i0[edge]
        ff = f[edge]
        out[edge] = series[ii] * (1.0 - ff) + series[np.minimum(ii + 1, n - 1)] * ff
    return out


def _interp_rows(hist: np.ndarray, idx: float, k0: int, k1: int,
                 order: str) -> np.ndarray:
    """Sample rows k0..k1 (inclusive) of a (T, K) history at one time index."""
    n = hist.shape[0]
    if idx < 0.0:
        return np.zeros(k1 - k0 + 1)
    idx = min(idx, n - 1.000001)
    i0 = int(idx)
    f = idx - i0
    sl = slice(k0, k1 + 1)
    if order == "cubic" and 1 <= i0 <= n - 3:
        p0 = hist[i0 - 1, sl]
        p1 = hist[i0, sl]
        p2 = hist[i0 + 1, sl]
        p3 = hist[i0 + 2, sl]
        return 0.5 * (2.0 * p1 + (-p0 + p2) * f
                      + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * f * f
                      + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * f ** 3)
    i1 = min(i0 + 1, n - 1)
    return hist[i0, sl] * (1.0 - f) + hist[i1, sl] * f


def tfsf_correction(rec: AuxGridRecord, node_x: float, node_z_index: int,
                    step: int, theta_deg: float, component: str = "ey",
                    interp: str = "cubic") -> float:
    """Delayed auxiliary-grid field value for a TF/SF boundary node.

    The stored history at the matched z node is shifted by the tangential
    delay node_x*sin(theta)/c0; times before the source switch-on return 0.
    """
    tau = node_x * math.sin(math.radians(theta_deg)) / c0
    if component == "ey":
        t = step * rec.dt_aux * rec.substeps
        idx = (t - tau) / rec.dt_aux
        series = rec.ey[:, node_z_index]
    elif component == "hx":
        t = (step + 0.5) * rec.dt_aux * rec.substeps
        idx = (t - tau) / rec.dt_aux - 0.5
        series = rec.hx[:, node_z_index]
    else:
        raise ValueError("component must be 'ey' or 'hx'")
    return float(_interp_1d(series, np.array([idx]), interp)[0])


# ---------------------------------------------------------------------------
# Field-update kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _update_h(ey, hx, bx, hz, bz, b1x, b2x, cpx, cmx, b1z, b2z, cpz, cmz,
              inv_mu0):
    nx, nz = ey.shape
    for i in range(nx):
        for k in range(nz - 1):
            curl = ey[i, k + 1] - ey[i, k]
            bnew = b1x[k] * bx[i, k] + b2x[k] * curl
            hx[i, k] += inv_mu0 * (cpx[i] * bnew - cmx[i] * bx[i, k])
            bx[i, k] = bnew
    for i in range(nx - 1):
        for k in range(nz):
            curl = ey[i, k] - ey[i + 1, k]
            bnew = b1z[i] * bz[i, k] + b2z[i] * curl
            hz[i, k] += inv_mu0 * (cpz[k] * bnew - cmz[k] * bz[i, k])
            bz[i, k] = bnew


@njit(cache=True)
def _update_e(ey, dy, pint, hx, hz, d1, d2, e1, e2, e3, dt, inv_dz, inv_dx):
    nx, nz = ey.shape
    for i in range(1, nx - 1):
        for k in range(1, nz - 1):
            curl = (hx[i, k] - hx[i, k - 1]) * inv_dz \
                - (hz[i, k] - hz[i - 1, k]) * inv_dx
            dnew = d1[k] * dy[i, k] + d2[k] * curl
            e_old = ey[i, k]
            if e3[i, k] != 0.0:
                pint[i, k] += dt * e_old
                ey[i, k] = e1[i, k] * e_old + e2[i, k] * (dnew - dy[i, k]) \
                    - e3[i, k] * pint[i, k]
            else:
                ey[i, k] = e1[i, k] * e_old + e2[i, k] * (dnew - dy[i, k])
            dy[i, k] = dnew


# ---------------------------------------------------------------------------
# Main simulation
# ---------------------------------------------------------------------------

def simulate_slab(scene: SlabScene, grid: GridSpec,
                  reference: ProbeRecord | None = None,
                  aux: AuxGridRecord | None = None,
                  compute_reference: bool = True,
                  snapshot_every: int = 0,
                  snapshot_path: str | None = None) -> ProbeRecord:
    """Run the 2-D TE loop and return carrier phasors on both probe lines.

    A slab-free vacuum reference run on the identical grid provides the
    incident-field normalization; pass one in (ensembles reuse it) or let
    the function compute it. Divergence aborts with StabilityError.
    """
    lay = _layout(scene, grid)
    if aux is None:
        aux = run_aux_grid(scene, grid)

    dtype = np.dtype(grid.dtype)
    nx, nz = grid.nx, grid.nz
    dt, dx, dz = grid.dt, grid.dx, grid.dz

    eps_map, sig_map = _material_maps(scene, grid, lay)
    sx_e = _pml_profile(nx, grid.pml_cells, dx, half=False)
    sx_h = _pml_profile(nx, grid.pml_cells, dx, half=True)
    sz_e = _pml_profile(nz, grid.pml_cells, dz, half=False)
    sz_h = _pml_profile(nz, grid.pml_cells, dz, half=True)

    # D stage (sigma_z at E rows), E recovery (material + sigma_x).
    az = sz_e * dt / (2.0 * eps0)
    d1 = ((1.0 - az) / (1.0 + az)).astype(dtype)
    d2 = (dt / (1.0 + az)).astype(dtype)
    a_loss = eps_map * sx_e[:, None] + sig_map
    denom = eps0 * eps_map / dt + 0.5 * a_loss
    e1 = ((eps0 * eps_map / dt - 0.5 * a_loss) / denom).astype(dtype)
    e2 = ((1.0 / dt) / denom).astype(dtype)
    e3 = ((sig_map * sx_e[:, None] / eps0) / denom).astype(dtype)

    # H stages: Bx carries sigma_z(half rows), Hx recovers sigma_x(E cols);
    # Bz carries sigma_x(half cols), Hz recovers sigma_z(E rows).
    azh = sz_h * dt / (2.0 * eps0)
    b1x = ((1.0 - azh) / (1.0 + azh)).astype(dtype)
    b2x = ((dt / (1.0 + azh)) / dz).astype(dtype)
    cx = sx_e * dt / (2.0 * eps0)
    cpx = (1.0 + cx).astype(dtype)
    cmx = (1.0 - cx).astype(dtype)
    axh = sx_h * dt / (2.0 * eps0)
    b1z = ((1.0 - axh) / (1.0 + axh)).astype(dtype)
    b2z = ((dt / (1.0 + axh)) / dx).astype(dtype)
    cz = sz_e * dt / (2.0 * eps0)
    cpz = (1.0 + cz).astype(dtype)
    cmz = (1.0 - cz).astype(dtype)

    ey = np.zeros((nx, nz), dtype=dtype)
    dy = np.zeros((nx, nz), dtype=dtype)
    pint = np.zeros((nx, nz), dtype=dtype)
    hx = np.zeros((nx, nz - 1), dtype=dtype)
    bx = np.zeros((nx, nz - 1), dtype=dtype)
    hz = np.zeros((nx - 1, nz), dtype=dtype)
    bz = np.zeros((nx - 1, nz), dtype=dtype)

    # TF/SF bookkeeping --------------------------------------------------
    iL, iR, kT, kB = lay.i_left, lay.i_right, lay.k_top, lay.k_bot
    sin_t = math.sin(math.radians(scene.theta_deg))
    cols = np.arange(iL, iR + 1)
    x_cols = cols * dx
    tau_cols = x_cols * sin_t / c0
    dt_a = aux.dt_aux
    m_sub = aux.substeps
    order = grid.tfsf_interp

    eta_hz = _discrete_hz_over_ey(grid, scene.theta_deg, scene.f_hz)
    inv_denom_top = (1.0 / denom[cols, kT])
    inv_denom_bot = (1.0 / denom[cols, kB])
    inv_denom_left = (1.0 / denom[iL, kT:kB + 1])
    inv_denom_right = (1.0 / denom[iR, kT:kB + 1])
    h_coef = dt / mu0

    tau_left_e = (iL - 0.5) * dx * sin_t / c0
    tau_right_e = (iR + 0.5) * dx * sin_t / c0
    tau_left_h = iL * dx * sin_t / c0
    tau_right_h = iR * dx * sin_t / c0

    # Probe accumulators -------------------------------------------------
    p0, p1 = lay.probe_i0, lay.probe_i1
    pcols = np.arange(p0, p1 + 1)
    kpr, kpt = lay.k_probe_refl, lay.k_probe_trans
    omega = 2.0 * math.pi * scene.f_hz
    n_win = grid.n_steps - grid.dft_start_step
    acc = {name: np.zeros(pcols.size, dtype=complex) for name in
           ("refl_ey", "refl_hx_a", "refl_hx_b", "trans_ey", "trans_hx_a",
            "trans_hx_b")}
    acc_hz_r = np.zeros(pcols.size - 1, dtype=complex)
    acc_hz_t = np.zeros(pcols.size - 1, dtype=complex)
    scale = 2.0 / n_win

    src_amp_bound = 1e6

    snap_count = 0
    for n in range(grid.n_steps):
        _update_h(ey, hx, bx, hz, bz, b1x, b2x, cpx, cmx, b1z, b2z, cpz, cmz,
                  1.0 / mu0)

        # H-node corrections (subtract incident E of box-edge TF nodes),
        # incident E taken at time n*dt.
        t_e = n * dt
        base_e = t_e / dt_a
        e_top = _interp_1d(aux.ey[:, kT], base_e - tau_cols / dt_a, order)
        hx[cols, kT - 1] -= (h_coef / dz) * e_top.astype(dtype)
        e_bot = _interp_1d(aux.ey[:, kB], base_e - tau_cols / dt_a, order)
        hx[cols, kB] += (h_coef / dz) * e_bot.astype(dtype)
        e_left = _interp_rows(aux.ey, base_e - tau_left_h / dt_a, kT, kB, order)
        hz[iL - 1, kT:kB + 1] += (h_coef / dx) * e_left.astype(dtype)
        e_right = _interp_rows(aux.ey, base_e - tau_right_h / dt_a, kT, kB, order)
        hz[iR, kT:kB + 1] -= (h_coef / dx) * e_right.astype(dtype)

        t_h = (n + 0.5) * dt
        if n >= grid.dft_start_step:
            ph_h = scale * complex(math.cos(omega * t_h), -math.sin(omega * t_h))
            acc["refl_hx_a"] += ph_h * hx[pcols, kpr - 1]
            acc["refl_hx_b"] += ph_h * hx[pcols, kpr]
            acc["trans_hx_a"] += ph_h * hx[pcols, kpt - 1]
            acc["trans_hx_b"] += ph_h * hx[pcols, kpt]
            acc_hz_r += ph_h * hz[pcols[:-1], kpr]
            acc_hz_t += ph_h * hz[pcols[:-1], kpt]

        _update_e(ey, dy, pint, hx, hz, d1, d2, e1, e2, e3, dtype.type(dt),
                  dtype.type(1.0 / dz), dtype.type(1.0 / dx))

        # E-node corrections (add incident H of scattered-side neighbors),
        # incident H taken at time (n + 1/2)*dt.
        base_h = t_h / dt_a - 0.5
        hx_top = _interp_1d(aux.hx[:, kT - 1], base_h - tau_cols / dt_a, order)
        ey[cols, kT] -= (inv_denom_top / dz) * hx_top.astype(dtype)
        hx_bot = _interp_1d(aux.hx[:, kB], base_h - tau_cols / dt_a, order)
        ey[cols, kB] += (inv_denom_bot / dz) * hx_bot.astype(dtype)
        base_he = t_h / dt_a
        e_lh = _interp_rows(aux.ey, base_he - tau_left_e / dt_a, kT, kB, order)
        ey[iL, kT:kB + 1] += (inv_denom_left / dx) * (eta_hz * e_lh).astype(dtype)
        e_rh = _interp_rows(aux.ey, base_he - tau_right_e / dt_a, kT, kB, order)
        ey[iR, kT:kB + 1] -= (inv_denom_right / dx) * (eta_hz * e_rh).astype(dtype)

        t_e1 = (n + 1) * dt
        if n >= grid.dft_start_step:
            ph_e = scale * complex(math.cos(omega * t_e1), -math.sin(omega * t_e1))
            acc["refl_ey"] += ph_e * ey[pcols, kpr]
            acc["trans_ey"] += ph_e * ey[pcols, kpt]

        if n % 64 == 0:
            peak = float(np.abs(ey).max())
            if not math.isfinite(peak) or peak > src_amp_bound:
                raise StabilityError(n, peak)

        if snapshot_every and snapshot_path and n % snapshot_every == 0:
            _write_snapshot(snapshot_path, snap_count, ey, grid, n)
            snap_count += 1

    peak = float(np.abs(ey).max())
    if not math.isfinite(peak) or peak > src_amp_bound:
        raise StabilityError(grid.n_steps, peak)

    # Flat-stack decomposition and add-back ------------------------------
    win0 = grid.dft_start_step * m_sub
    win1 = grid.n_steps * m_sub
    m_idx = np.arange(win0, win1)
    kern = (2.0 / m_idx.size) * np.exp(-1j * omega * m_idx * dt_a)
    rows = np.arange(kpr - 2, kpr + 3)
    aux_ph = kern @ aux.ey[m_idx][:, rows]
    kz1 = main_grid_kz(grid, scene.theta_deg, scene.f_hz, 1.0)
    zrel = (rows - kpr) * dz
    basis = np.stack([np.exp(-1j * kz1 * zrel), np.exp(1j * kz1 * zrel)], axis=1)
    (a_down, b_up), *_ = np.linalg.lstsq(basis, aux_ph, rcond=None)

    x_p = pcols * dx
    delay_ph = np.exp(-1j * omega * (x_p * sin_t / c0))
    stag = math.cos(0.5 * kz1 * dz)
    eta_up = _discrete_hx_over_ey(grid, kz1, scene.f_hz, upgoing=True)
    eta_dn = _discrete_hx_over_ey(grid, kz1, scene.f_hz, upgoing=False)
    flat_ey = b_up * delay_ph
    flat_hx = b_up * eta_up * stag * delay_ph
    inc_ey = a_down * delay_ph
    inc_hx = a_down * eta_dn * stag * delay_ph

    refl_ey = acc["refl_ey"]
    refl_hx = 0.5 * (acc["refl_hx_a"] + acc["refl_hx_b"])
    trans_ey = acc["trans_ey"]
    trans_hx = 0.5 * (acc["trans_hx_a"] + acc["trans_hx_b"])

    inc_amp = abs(a_down) if abs(a_down) > 0 else 1.0
    scat_peak_db = 20.0 * math.log10(max(np.abs(refl_ey).max(), 1e-300) / inc_amp)

    rec = ProbeRecord(
        f_hz=scene.f_hz, theta_deg=scene.theta_deg, x=x_p,
        refl_ey=refl_ey, refl_hx=refl_hx, trans_ey=trans_ey, trans_hx=trans_hx,
        x_hz=(pcols[:-1] + 0.5) * dx, refl_hz=acc_hz_r, trans_hz=acc_hz_t,
        refl_flat_ey=flat_ey, refl_flat_hx=flat_hx,
        inc_refl_ey=inc_ey, inc_refl_hx=inc_hx,
        aux_down_amp=complex(a_down), aux_up_amp=complex(b_up),
        z_probe_refl=scene.z_probe_refl, z_probe_trans=scene.z_probe_trans,
        scattered_peak_db=scat_peak_db, scene_digest=scene.digest())

    if reference is not None:
        rec.reference = reference
    elif compute_reference and not _is_vacuum_scene(scene):
        ref_scene = reference_scene(scene)
        rec.reference = simulate_slab(ref_scene, grid, compute_reference=False)
    return rec


def _is_vacuum_scene(scene: SlabScene) -> bool:
    return (scene.material.eps_real == 1.0 and scene.material.cond_coeff == 0.0
            and scene.upper_profile is None and scene.lower_profile is None)


def _write_snapshot(path: str, index: int, ey: np.ndarray, grid: GridSpec,
                    step: int) -> None:
    base = f"{path}_{index:05d}"
    with open(base + ".head", "w") as fh:
        fh.write(f"nx {grid.nx}\nnz {grid.nz}\ndx {grid.dx:.9e}\n"
                 f"dz {grid.dz:.9e}\nstep {step}\ndtype {ey.dtype.name}\n")
    ey.astype(np.float64).tofile(base + ".bin")
