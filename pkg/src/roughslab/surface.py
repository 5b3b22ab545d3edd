"""Random rough interface profiles with prescribed spectra.

Profiles are synthesized spectrally: each spectral bin receives a Gaussian
draw scaled by the target height spectrum, Hermitian symmetry makes the
inverse transform real, and the N independent N(0,1) draws map one-to-one
onto the N surface samples. A Latin-hypercube helper provides stratified
draw matrices for reproducible Monte-Carlo ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

SPECTRUM_KINDS = ("gaussian", "exponential")


@dataclass(frozen=True)
class SurfaceSpec:
    """Parameters of one random interface realization."""

    n_points: int
    spacing: float        # m
    rms_height: float     # m
    corr_length: float    # m
    spectrum_kind: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 2 or self.n_points % 2 != 0:
            raise ValueError(f"n_points must be even and >= 2, got {self.n_points}")
        for name in ("spacing", "rms_height", "corr_length"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.rms_height < 0:
            raise ValueError("rms_height must be non-negative")
        if self.corr_length <= 0:
            raise ValueError("corr_length must be positive")
        if self.spectrum_kind not in SPECTRUM_KINDS:
            raise ValueError(f"spectrum_kind must be one of {SPECTRUM_KINDS}")

    @property
    def total_length(self) -> float:
        return self.n_points * self.spacing


@dataclass(frozen=True)
class HeightProfile:
    """Sampled interface heights on a uniform grid, plus generating spec."""

    heights: np.ndarray   # (N,) real heights, m
    x: np.ndarray         # (N,) sample positions, m
    spec: SurfaceSpec


def spectrum_density(k: np.ndarray, rms_height: float, corr_length: float,
                     kind: str = "gaussian") -> np.ndarray:
    """One-sided roughness spectral density W(K).

    gaussian:    sigma^2 lc / (2 sqrt(pi)) * exp(-K^2 lc^2 / 4)
    exponential: sigma^2 lc / pi / (1 + K^2 lc^2)   (Fourier pair of
                 sigma^2 exp(-|x|/lc); used for validation scenes)
    """
    k = np.asarray(k, dtype=float)
    s2 = rms_height ** 2
    if kind == "gaussian":
        return s2 * corr_length / (2.0 * math.sqrt(math.pi)) * np.exp(
            -(k * corr_length) ** 2 / 4.0)
    if kind == "exponential":
        return s2 * corr_length / math.pi / (1.0 + (k * corr_length) ** 2)
    raise ValueError(f"unknown spectrum kind {kind!r}")


def _draws_for(spec: SurfaceSpec) -> np.ndarray:
    # Counter-based generator so (seed, index) streams never collide.
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    return rng.standard_normal(spec.n_points)


def generate_surface(spec: SurfaceSpec, draws: np.ndarray | None = None) -> HeightProfile:
    """Synthesize one rough profile from the spectral method.

    The N standard-normal draws populate the spectrum: draw 0 goes to the
    DC bin (real), draws (2m-1, 2m) to the real/imaginary parts of bin m,
    and the last draw to the Nyquist bin (real). Negative bins are the
    conjugates, so the inverse transform is real to machine precision.
    Passing `draws` overrides the seeded stream (used by LHS ensembles).
    """
    n = spec.n_points
    if draws is None:
        draws = _draws_for(spec)
    draws = np.asarray(draws, dtype=float)
    if draws.shape != (n,):
        raise ValueError(f"draws must have shape ({n},), got {draws.shape}")

    length = spec.total_length
    m = np.arange(n // 2 + 1)
    k = 2.0 * math.pi * m / length
    w = spectrum_density(k, spec.rms_height, spec.corr_length, spec.spectrum_kind)
    amp = np.sqrt(2.0 * math.pi * length * w)

    coeff = np.zeros(n // 2 + 1, dtype=complex)
    coeff[0] = amp[0] * draws[0]
    interior = draws[1:-1].reshape(-1, 2)
    coeff[1:-1] = amp[1:-1] * (interior[:, 0] + 1j * interior[:, 1]) / math.sqrt(2.0)
    # Both +N/2 and -N/2 appear in the spectral sum with a common real draw.
    coeff[-1] = 2.0 * amp[-1] * draws[-1]

    heights = (n / length) * np.fft.irfft(coeff, n=n)
    if spec.rms_height == 0.0:
        heights = np.zeros(n)
    x = np.arange(n) * spec.spacing
    return HeightProfile(heights=heights, x=x, spec=spec)


def surface_statistics(profile: HeightProfile) -> dict:
    """Sample mean, rms about the mean, and 1/e-crossing correlation length."""
    h = np.asarray(profile.heights, dtype=float)
    if h.size < 2:
        raise ValueError("profile needs at least 2 samples")
    mean = float(h.mean())
    d = h - mean
    rms = float(np.sqrt((d * d).mean()))

    est_lc = 0.0
    if rms > 0.0:
        var = (d * d).sum()
        n = h.size
        target = 1.0 / math.e
        prev = 1.0
        for lag in range(1, n):
            c = float((d[:-lag] * d[lag:]).sum() / var)
            if c < target:
                frac = (prev - target) / (prev - c)
                est_lc = (lag - 1 + frac) * profile.spec.spacing
                break
            prev = c
        else:
            est_lc = (n - 1) * profile.spec.spacing
    return {"mean": mean, "rms": rms, "est_corr_length": est_lc}


def latin_hypercube_seeds(n_realizations: int, dims: int, master_seed: int) -> np.ndarray:
    """Stratified standard-normal draw matrix, (n_realizations x dims).

    Each column's values occupy the n equiprobable strata of N(0,1) exactly
    once: a random permutation assigns strata to rows, a uniform jitter
    places the point inside its stratum, and the normal quantile maps it
    back. Deterministic given master_seed.
    """
    if n_realizations < 1 or dims < 1:
        raise ValueError("n_realizations and dims must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=master_seed))
    out = np.empty((n_realizations, dims))
    for d in range(dims):
        perm = rng.permutation(n_realizations)
        u = rng.random(n_realizations)
        p = (perm + u) / n_realizations
        np.clip(p, 1e-15, 1.0 - 1e-15, out=p)
        out[:, d] = norm.ppf(p)
    return out


# ---------------------------------------------------------------------------
# Profile file: '# N dx sigma_h l_c kind seed' header, then 'x_m height_m'.
# ---------------------------------------------------------------------------

def write_profile(path, profile: HeightProfile) -> None:
    s = profile.spec
    lines = [f"# {s.n_points} {s.spacing:.9e} {s.rms_height:.9e} "
             f"{s.corr_length:.9e} {s.spectrum_kind} {s.seed}"]
    for x, h in zip(profile.x, profile.heights):
        lines.append(f"{x:.9e} {h:.9e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_profile(path) -> HeightProfile:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError("profile file missing header")
        parts = header[1:].split()
        if len(parts) != 6:
            raise ValueError(f"bad profile header: {header!r}")
        spec = SurfaceSpec(
            n_points=int(parts[0]), spacing=float(parts[1]),
            rms_height=float(parts[2]), corr_length=float(parts[3]),
            spectrum_kind=parts[4], seed=int(parts[5]))
        data = np.loadtxt(fh)
    data = np.atleast_2d(data)
    if data.shape[0] != spec.n_points:
        raise ValueError("profile length does not match header")
    return HeightProfile(heights=data[:, 1].copy(), x=data[:, 0].copy(), spec=spec)
