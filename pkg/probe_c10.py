"""K=100 wide sector, rim-on-kept cyst, least-norm-regime LS."""
import time
import warnings

import numpy as np

from usbeam.geometry import (
    ProbeGeometry,
    centered_steering_matrix,
    decimation_matrix,
    kept_emission_indices,
)
from usbeam.acquisition import ScanPlan, analytic_signal, compensate_delays
from usbeam.classic import das_beamform, RfImage
from usbeam.inverse import build_forward_model, bp_solve, ls_solve
from usbeam.phantom import simulate_raw, cyst_phantom, ExcitationPulse
from usbeam.imaging import envelope
from usbeam.metrics import RegionSpec, region_values, cnr, snr

GEOM = ProbeGeometry(num_elements=32, pitch=256e-6, center_frequency=3e6,
                     sampling_frequency=40e6, sound_speed=1540.0)
DEPTH = 0.080
K, P = 100, 20

ANGLES = np.deg2rad(np.linspace(-45.0, 45.0, K))
SCAN = ScanPlan(kind="sector", positions=ANGLES, depth_start=0.065,
                depth_end=0.095, focus_depth=DEPTH)
A = centered_steering_matrix(SCAN.beam_angles(), GEOM) / np.sqrt(GEOM.num_elements)
MODEL = build_forward_model(A, decimation_matrix(K, P))
KEPT = kept_emission_indices(K, P)
_lat = DEPTH * np.sin(ANGLES[KEPT])
_j = int(np.searchsorted(_lat, 0.0))
C_LAT = (_lat[_j] + _lat[_j + 1]) / 2.0
R_CYST = (_lat[_j + 1] - _lat[_j]) / 2.0


def mkimg(ref, x):
    return RfImage(data=x, kind="rf", scan_kind=ref.scan_kind,
                   scanline_positions=ref.scanline_positions.copy(),
                   depths=ref.depths.copy(), provenance={"method": "t"})


def est_sparse(img, c_lat, r_true, band=1.0e-3, drop_db=20.0):
    env = envelope(img)
    sel = np.abs(env.depths - DEPTH) <= band
    prof = env.data[:, sel].max(axis=1)
    rel = DEPTH * np.sin(env.scanline_positions) - c_lat
    ann = (np.abs(rel) >= 1.5 * r_true) & (np.abs(rel) <= 3.5 * r_true)
    level = prof[ann].mean() * 10 ** (-drop_db / 20.0)
    below = prof < level
    i0 = int(np.argmin(np.abs(rel)))
    if not below[i0]:
        return 0.0
    hi = i0
    while hi + 1 < prof.size and below[hi + 1]:
        hi += 1
    lo = i0
    while lo >= 1 and below[lo - 1]:
        lo -= 1
    if hi + 1 >= prof.size or lo == 0:
        return float("inf")
    return (rel[hi + 1] - rel[lo - 1]) / 2.0


def diag_strip(ph, imgs, band=1.0e-3):
    x, z = ph.positions[:, 0], ph.positions[:, 1]
    rng_ = np.hypot(x, z)
    phi = np.arctan2(x, z)
    inband = np.abs(rng_ - DEPTH) <= band
    step = ANGLES[1] - ANGLES[0]
    bidx = np.round((phi - ANGLES[0]) / step).astype(int)
    profs, refs = {}, {}
    for name, img in imgs.items():
        env = envelope(img)
        sel = np.abs(env.depths - DEPTH) <= band
        prof = env.data[:, sel].max(axis=1)
        rel = DEPTH * np.sin(env.scanline_positions) - C_LAT
        ann = (np.abs(rel) >= 1.5 * R_CYST) & (np.abs(rel) <= 3.5 * R_CYST)
        profs[name] = prof
        refs[name] = prof[ann].mean()
    lat = DEPTH * np.sin(ANGLES)
    print("    beam  rel_mm kept donors  bp_db das_db ls_db", flush=True)
    for b in range(K):
        rel = lat[b] - C_LAT
        if abs(rel) > 3.0 * R_CYST:
            continue
        donors = inband & (bidx == b) & (ph.amplitudes != 0)
        row = f"    {b:4d} {rel*1e3:+7.2f}  {'K' if b in KEPT else '.'} "
        row += f" {donors.sum():4d}  "
        for name in ("bp", "das", "ls"):
            v = profs[name][b] / refs[name]
            db = 20 * np.log10(v) if v > 0 else -99.0
            row += f"{max(db, -99):+6.1f} "
        print(row, flush=True)


def run_config(lam_bp, lam_ls_list, n_sc, frac=0.95, noise=20.0, seeds=range(1, 6),
               txs=10.0, diag_seed=None):
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=2)
    target = RegionSpec(shape="disc", center=(C_LAT, DEPTH), radius=frac * R_CYST)
    bg = RegionSpec(shape="disc", center=(C_LAT + 9e-3, DEPTH), radius=4e-3)
    votes = {lls: [] for lls in lam_ls_list}
    for seed in seeds:
        ph = cyst_phantom(radius=R_CYST, depth=DEPTH, n_scatterers=n_sc, seed=seed,
                          lateral_halfwidth=38e-3, axial_halfwidth=16e-3,
                          center_lateral=C_LAT)
        cube = simulate_raw(ph, GEOM, pulse, SCAN, noise_snr_db=noise,
                            seed=seed + 100, tx_beam_sigma=np.deg2rad(txs))
        foc = compensate_delays(analytic_signal(cube), GEOM, SCAN)
        dash = das_beamform(foc, GEOM, SCAN, apodization="hanning")
        dasn = das_beamform(foc, GEOM, SCAN, apodization="none")
        z = dasn.data[MODEL.kept]
        scale = np.max(np.abs(z))
        zn = z / scale
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rbp = bp_solve(zn, MODEL.G, lam_bp, max_iters=2500, tol=1e-4)
        bp = mkimg(dash, rbp.x * scale)
        env_d = envelope(dash)
        env_b = envelope(bp)
        cnr_d = cnr(env_d, target, bg)
        cnr_b = cnr(env_b, target, bg)
        snr_d = snr(env_d, bg)
        fill_d = region_values(env_d, target).mean() / region_values(env_d, bg).mean()
        fill_b = region_values(env_b, target).mean() / region_values(env_b, bg).mean()
        rb = est_sparse(bp, C_LAT, R_CYST)
        rd = est_sparse(dash, C_LAT, R_CYST)
        err_b = abs(rb - R_CYST) / R_CYST
        err_d = abs(rd - R_CYST) / R_CYST
        ok_rad = err_b <= 0.15 and err_d > err_b
        line = (f"  s{seed}: das cnr {cnr_d:.2f} fill {fill_d:.2f} snr {snr_d:.2f} | "
                f"bp cnr {cnr_b:.2f} fill {fill_b:.2f} | "
                f"rad {rb*1e3:.2f}/{rd*1e3:.2f} ({err_b*100:.0f}%/{err_d*100:.0f}%)"
                f" {'OK' if ok_rad else '--'} |")
        ls_imgs = {}
        for lls in lam_ls_list:
            ls = mkimg(dash, ls_solve(zn, MODEL.G, lls) * scale)
            ls_imgs[lls] = ls
            env_l = envelope(ls)
            cnr_l = cnr(env_l, target, bg)
            snr_l = snr(env_l, bg)
            fill_l = region_values(env_l, target).mean() / region_values(env_l, bg).mean()
            ok_cnr = cnr_l > cnr_b > cnr_d
            ok_snr = snr_l > snr_d
            votes[lls].append((ok_cnr, ok_snr, ok_rad))
            line += (f" L{lls:g}: cnr {cnr_l:.2f} fil {fill_l:.2f} snr {snr_l:.2f}"
                     f" {'C' if ok_cnr else '-'}{'S' if ok_snr else '-'} |")
        print(line, flush=True)
        if diag_seed == seed:
            diag_strip(ph, {"bp": bp, "das": dash, "ls": ls_imgs[lam_ls_list[0]]})
    for lls in lam_ls_list:
        a = np.array(votes[lls])
        n = len(a)
        print(f"lbp={lam_bp:g} lls={lls:g} n={n_sc} frac={frac:g} -> "
              f"cnr {a[:,0].sum()}/{n} snr {a[:,1].sum()}/{n} "
              f"rad {a[:,2].sum()}/{n}", flush=True)


if __name__ == "__main__":
    t0 = time.time()
    print(f"K={K} P={P} r={R_CYST*1e3:.3f}mm c={C_LAT*1e3:.3f}mm", flush=True)
    for lam_bp in (0.15, 0.25, 0.4):
        run_config(lam_bp, [0.001, 0.01, 0.1, 10.0], 6000,
                   diag_seed=1 if lam_bp == 0.25 else None)
    run_config(0.25, [0.001, 0.01, 0.1], 12000)
    print(f"total {time.time()-t0:.0f}s", flush=True)
