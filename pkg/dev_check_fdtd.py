"""Dev scratch: validate aux grid + 2-D engine before wiring tests."""
import math
import time

import numpy as np
from scipy.constants import c as c0

from roughslab import fdtd, media, oracles

F = 28e9
LAM = c0 / F


def aux_check(theta, mat=media.PLASTERBOARD, thickness=0.02):
    scene, grid = fdtd.build_scene(mat, thickness, theta, F, aperture=2 * LAM)
    rec = fdtd.run_aux_grid(scene, grid)
    lay = fdtd._layout(scene, grid)
    omega = 2 * math.pi * F
    m_sub = rec.substeps
    win0 = grid.dft_start_step * m_sub
    win1 = grid.n_steps * m_sub
    m_idx = np.arange(win0, win1)
    kern = (2.0 / m_idx.size) * np.exp(-1j * omega * m_idx * rec.dt_aux)

    kz1 = fdtd.main_grid_kz(grid, theta, F, 1.0)
    # layer-1 rows above the box top
    rows = np.arange(lay.k_probe_refl - 2, lay.k_probe_refl + 3)
    ph = kern @ rec.ey[m_idx][:, rows]
    zrel = (rows - rows[2]) * grid.dz
    basis = np.stack([np.exp(-1j * kz1 * zrel), np.exp(1j * kz1 * zrel)], 1)
    (a, b), *_ = np.linalg.lstsq(basis, ph, rcond=None)
    # below-slab rows
    rows2 = np.arange(lay.k_probe_trans - 2, lay.k_probe_trans + 3)
    ph2 = kern @ rec.ey[m_idx][:, rows2]
    zrel2 = (rows2 - rows2[2]) * grid.dz
    basis2 = np.stack([np.exp(-1j * kz1 * zrel2), np.exp(1j * kz1 * zrel2)], 1)
    (t_dn, t_up), *_ = np.linalg.lstsq(basis2, ph2, rcond=None)

    med = media.medium_at(mat, F / 1e9)
    R, T = oracles.te_slab_coefficients(med.eps_r, scene.thickness, theta, F)
    print(f"theta={theta:5.1f} mat={mat.name:12s} d={scene.thickness*1e3:6.2f}mm "
          f"|R|aux={abs(b/a):.5f} oracle={abs(R):.5f} "
          f"|T|aux={abs(t_dn/a):.5f} oracle={abs(T):.5f} substeps={rec.substeps} "
          f"steps={grid.n_steps}")
    return abs(b / a), abs(R), abs(t_dn / a), abs(T)


if __name__ == "__main__":
    t0 = time.time()
    for th in (0.0, 30.0, 45.0, 60.0):
        ra, ro, ta, to = aux_check(th)
        assert abs(ra - ro) < 0.01 * max(ro, 0.05), (ra, ro)
        assert abs(ta - to) < 0.01 * max(to, 0.05), (ta, to)
    print("aux vs transfer-matrix OK", f"{time.time()-t0:.1f}s")
