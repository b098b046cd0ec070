"""Rim-on-kept-grid protocol: cyst boundary aligned with the decimated emissions."""
import sys
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
K, P = 60, 12


class Setup:
    def __init__(self, half_span_deg):
        self.span = half_span_deg
        self.angles = np.deg2rad(np.linspace(-half_span_deg, half_span_deg, K))
        self.scan = ScanPlan(kind="sector", positions=self.angles,
                             depth_start=0.065, depth_end=0.095, focus_depth=DEPTH)
        A = centered_steering_matrix(self.scan.beam_angles(), GEOM)
        A = A / np.sqrt(GEOM.num_elements)
        self.model = build_forward_model(A, decimation_matrix(K, P))
        kept = kept_emission_indices(K, P)
        self.kept = kept
        lat = DEPTH * np.sin(self.angles[kept])
        j = int(np.searchsorted(lat, 0.0))
        # cyst centered midway between the two kept beams right of broadside,
        # rim exactly on both
        self.c_lat = (lat[j] + lat[j + 1]) / 2.0
        self.r = (lat[j + 1] - lat[j]) / 2.0


def mkimg(ref, x):
    return RfImage(data=x, kind="rf", scan_kind=ref.scan_kind,
                   scanline_positions=ref.scanline_positions.copy(),
                   depths=ref.depths.copy(), provenance={"method": "t"})


def est_sparse(img, c_lat, r_true, band=1.0e-3, drop_db=20.0):
    """Boundary = first beam back above -20dB of background, on the band max."""
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


def diag_strip(setup, ph, imgs, band=1.0e-3):
    x, z = ph.positions[:, 0], ph.positions[:, 1]
    rng_ = np.hypot(x, z)
    phi = np.arctan2(x, z)
    inband = np.abs(rng_ - DEPTH) <= band
    step = setup.angles[1] - setup.angles[0]
    bidx = np.round((phi - setup.angles[0]) / step).astype(int)
    profs = {}
    refs = {}
    for name, img in imgs.items():
        env = envelope(img)
        sel = np.abs(env.depths - DEPTH) <= band
        prof = env.data[:, sel].max(axis=1)
        rel = DEPTH * np.sin(env.scanline_positions) - setup.c_lat
        ann = (np.abs(rel) >= 1.5 * setup.r) & (np.abs(rel) <= 3.5 * setup.r)
        profs[name] = prof
        refs[name] = prof[ann].mean()
    lat = DEPTH * np.sin(setup.angles)
    print("    beam  rel_mm kept donors  bp_db das_db ls_db")
    for b in range(K):
        rel = lat[b] - setup.c_lat
        if abs(rel) > 4.2 * setup.r:
            continue
        donors = inband & (bidx == b) & (ph.amplitudes != 0)
        row = f"    {b:4d} {rel*1e3:+7.2f}  {'K' if b in setup.kept else '.'} "
        row += f" {donors.sum():4d}  "
        for name in ("bp", "das", "ls"):
            v = profs[name][b] / refs[name]
            db = 20 * np.log10(v) if v > 0 else -99.0
            row += f"{max(db, -99):+6.1f} "
        print(row, flush=True)


def run_config(setup, lam_bp, lam_ls_list, n_sc, noise=20.0, pulse_cycles=2,
               seeds=range(1, 6), txs=10.0, diag_seed=None):
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=pulse_cycles)
    target = RegionSpec(shape="disc", center=(setup.c_lat, DEPTH),
                        radius=0.8 * setup.r)
    bg = RegionSpec(shape="disc", center=(setup.c_lat + 9e-3, DEPTH), radius=4e-3)
    votes = {lls: [] for lls in lam_ls_list}
    for seed in seeds:
        ph = cyst_phantom(radius=setup.r, depth=DEPTH, n_scatterers=n_sc, seed=seed,
                          lateral_halfwidth=38e-3, axial_halfwidth=16e-3,
                          center_lateral=setup.c_lat)
        cube = simulate_raw(ph, GEOM, pulse, setup.scan, noise_snr_db=noise,
                            seed=seed + 100, tx_beam_sigma=np.deg2rad(txs))
        foc = compensate_delays(analytic_signal(cube), GEOM, setup.scan)
        dash = das_beamform(foc, GEOM, setup.scan, apodization="hanning")
        dasn = das_beamform(foc, GEOM, setup.scan, apodization="none")
        z = dasn.data[setup.model.kept]
        scale = np.max(np.abs(z))
        zn = z / scale
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rbp = bp_solve(zn, setup.model.G, lam_bp, max_iters=2500, tol=1e-4)
        bp = mkimg(dash, rbp.x * scale)
        env_d = envelope(dash)
        env_b = envelope(bp)
        cnr_d = cnr(env_d, target, bg)
        cnr_b = cnr(env_b, target, bg)
        snr_d = snr(env_d, bg)
        fill_d = region_values(env_d, target).mean() / region_values(env_d, bg).mean()
        fill_b = region_values(env_b, target).mean() / region_values(env_b, bg).mean()
        rb = est_sparse(bp, setup.c_lat, setup.r)
        rd = est_sparse(dash, setup.c_lat, setup.r)
        err_b = abs(rb - setup.r) / setup.r
        err_d = abs(rd - setup.r) / setup.r
        ok_rad = err_b <= 0.15 and err_d > err_b
        line = (f"  s{seed}: das cnr {cnr_d:.2f} fill {fill_d:.2f} snr {snr_d:.2f} | "
                f"bp cnr {cnr_b:.2f} fill {fill_b:.2f} | "
                f"rad {rb*1e3:.2f}/{rd*1e3:.2f} ({err_b*100:.0f}%/{err_d*100:.0f}%)"
                f" {'OK' if ok_rad else '--'} |")
        ls_imgs = {}
        for lls in lam_ls_list:
            ls = mkimg(dash, ls_solve(zn, setup.model.G, lls) * scale)
            ls_imgs[lls] = ls
            env_l = envelope(ls)
            cnr_l = cnr(env_l, target, bg)
            snr_l = snr(env_l, bg)
            fill_l = region_values(env_l, target).mean() / region_values(env_l, bg).mean()
            ok_cnr = cnr_l > cnr_b > cnr_d
            ok_snr = snr_l > snr_d
            votes[lls].append((ok_cnr, ok_snr, ok_rad))
            line += (f" L{lls:g}: cnr {cnr_l:.2f} fill {fill_l:.2f} snr {snr_l:.2f}"
                     f" {'C' if ok_cnr else '-'}{'S' if ok_snr else '-'} |")
        print(line, flush=True)
        if diag_seed == seed:
            diag_strip(setup, ph, {"bp": bp, "das": dash,
                                   "ls": ls_imgs[lam_ls_list[0]]})
    for lls in lam_ls_list:
        a = np.array(votes[lls])
        n = len(a)
        print(f"span±{setup.span:g} r={setup.r*1e3:.2f} lbp={lam_bp:g} lls={lls:g} "
              f"n={n_sc} -> cnr {a[:,0].sum()}/{n} snr {a[:,1].sum()}/{n} "
              f"rad {a[:,2].sum()}/{n}", flush=True)


if __name__ == "__main__":
    t0 = time.time()
    s22 = Setup(22.0)
    s45 = Setup(45.0)
    print(f"s22: r={s22.r*1e3:.3f}mm c={s22.c_lat*1e3:.3f}mm", flush=True)
    print(f"s45: r={s45.r*1e3:.3f}mm c={s45.c_lat*1e3:.3f}mm", flush=True)
    for n_sc in (6000, 12000):
        for lam_bp in (0.08, 0.15):
            run_config(s22, lam_bp, [10.0, 40.0], n_sc,
                       diag_seed=1 if n_sc == 6000 else None)
    run_config(s45, 0.2, [10.0, 40.0], 3200, diag_seed=1)
    print(f"total {time.time()-t0:.0f}s", flush=True)
