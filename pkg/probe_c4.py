"""Desk-protocol search for the cyst experiment orderings."""
import sys
import time
import warnings

import numpy as np

from usbeam.geometry import ProbeGeometry, centered_steering_matrix, decimation_matrix
from usbeam.acquisition import ScanPlan, analytic_signal, compensate_delays
from usbeam.classic import das_beamform, RfImage
from usbeam.inverse import build_forward_model, bp_solve, ls_solve
from usbeam.phantom import simulate_raw, cyst_phantom, ExcitationPulse
from usbeam.imaging import envelope
from usbeam.metrics import RegionSpec, region_values, cnr, snr

GEOM = ProbeGeometry(num_elements=32, pitch=256e-6, center_frequency=3e6,
                     sampling_frequency=40e6, sound_speed=1540.0)
ANGLES = np.deg2rad(np.linspace(-25.0, 25.0, 60))
SCAN = ScanPlan(kind="sector", positions=ANGLES, depth_start=0.065,
                depth_end=0.095, focus_depth=0.080)
AN = centered_steering_matrix(SCAN.beam_angles(), GEOM) / np.sqrt(GEOM.num_elements)
MODEL = build_forward_model(AN, decimation_matrix(60, 12))
DEPTH = 0.080


def mkimg(ref, x):
    return RfImage(data=x, kind="rf", scan_kind=ref.scan_kind,
                   scanline_positions=ref.scanline_positions.copy(),
                   depths=ref.depths.copy(), provenance={"method": "t"})


def hole_radius(img, r_cyst, bg_x, region_r, drop_db=20.0):
    env = envelope(img)
    sel = np.abs(env.depths - DEPTH) <= 0.5 * r_cyst
    prof = env.data[:, sel].mean(axis=1)
    lat = DEPTH * np.sin(env.scanline_positions)
    ref_mask = np.abs(np.abs(lat) - bg_x) <= region_r
    level = prof[ref_mask].mean() * 10 ** (-drop_db / 20.0)
    below = prof < level
    i0 = int(np.argmin(np.abs(lat)))
    if not below[i0]:
        return 0.0
    lo = i0
    while lo > 0 and below[lo - 1]:
        lo -= 1
    hi = i0
    while hi < len(lat) - 1 and below[hi + 1]:
        hi += 1
    return (lat[hi] - lat[lo]) / 2.0


def run_config(r_cyst, bg_x, lam_bp, lam_ls, n_sc=4000, seeds=range(1, 6),
               pulse_cycles=1, noise=20.0, txs=8.0, verbose=True):
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=pulse_cycles)
    region_r = 0.72 * r_cyst
    target = RegionSpec(shape="disc", center=(0.0, DEPTH), radius=region_r)
    bg = RegionSpec(shape="disc", center=(bg_x, DEPTH), radius=region_r)
    votes = []
    for seed in seeds:
        ph = cyst_phantom(radius=r_cyst, depth=DEPTH, n_scatterers=n_sc, seed=seed,
                          lateral_halfwidth=38e-3, axial_halfwidth=16e-3)
        cube = simulate_raw(ph, GEOM, pulse, SCAN, noise_snr_db=noise, seed=seed + 100,
                            tx_beam_sigma=np.deg2rad(txs))
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
        ls = mkimg(dash, ls_solve(zn, MODEL.G, lam_ls) * scale)
        m = {}
        for name, img in (("das", dash), ("bp", bp), ("ls", ls)):
            env = envelope(img)
            m[name] = (cnr(env, target, bg), snr(env, bg))
        rd = hole_radius(dash, r_cyst, bg_x, region_r)
        rb = hole_radius(bp, r_cyst, bg_x, region_r)
        err_b = abs(rb - r_cyst) / r_cyst
        err_d = abs(rd - r_cyst) / r_cyst
        ok_cnr = m["ls"][0] > m["bp"][0] > m["das"][0]
        ok_snr = m["ls"][1] > m["das"][1]
        ok_rad = err_b <= 0.15 and err_d > err_b
        votes.append((ok_cnr, ok_snr, ok_rad))
        if verbose:
            print(f"  seed {seed}: cnr d/b/l {m['das'][0]:.2f}/{m['bp'][0]:.2f}/{m['ls'][0]:.2f}"
                  f" {'OK' if ok_cnr else '--'} | snr d/l {m['das'][1]:.2f}/{m['ls'][1]:.2f}"
                  f" {'OK' if ok_snr else '--'} | rad b/d {rb*1e3:.2f}/{rd*1e3:.2f}mm"
                  f" ({err_b*100:.0f}%/{err_d*100:.0f}%) {'OK' if ok_rad else '--'}", flush=True)
    a = np.array(votes)
    n = len(votes)
    print(f"r={r_cyst*1e3:g} bgx={bg_x*1e3:g} lbp={lam_bp:g} lls={lam_ls:g} n={n_sc}"
          f" -> cnr {a[:,0].sum()}/{n} snr {a[:,1].sum()}/{n} rad {a[:,2].sum()}/{n}", flush=True)
    return a


if __name__ == "__main__":
    t0 = time.time()
    args = sys.argv[1:]
    if args:
        r, bgx, lbp, lls = (float(v) for v in args[:4])
        seeds = range(1, int(args[4]) + 1) if len(args) > 4 else range(1, 6)
        run_config(r, bgx, lbp, lls, seeds=seeds)
    else:
        for r_cyst in (3.5e-3, 4.0e-3, 4.5e-3):
            for bg_x in (8e-3, 10e-3, 12e-3):
                for lam_bp in (0.1, 0.2):
                    run_config(r_cyst, bg_x, lam_bp, 5.0, verbose=False)
    print(f"total {time.time()-t0:.0f}s")
