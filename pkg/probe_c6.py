"""Low-density speckle protocol: sparse scatterers + band-averaged radius estimator."""
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
from usbeam.metrics import RegionSpec, cnr, snr

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


def est_radius(img, band=1.4e-3, smooth=3, drop_db=20.0):
    """Radius of the below-(peak-20dB) run of the band-averaged, smoothed profile."""
    env = envelope(img)
    sel = np.abs(env.depths - DEPTH) <= band
    prof = env.data[:, sel].mean(axis=1)
    kern = np.ones(smooth) / smooth
    prof = np.convolve(prof, kern, mode="same")
    level = env.data.max() * 10 ** (-drop_db / 20.0)
    lat = DEPTH * np.sin(env.scanline_positions)
    below = prof < level
    i0 = int(np.argmin(np.abs(lat)))
    if not below[i0]:
        return 0.0
    hi = i0
    while hi < len(lat) - 1 and below[hi + 1]:
        hi += 1
    if hi == len(lat) - 1:
        r_hi = lat[hi]
    else:
        t = (level - prof[hi]) / (prof[hi + 1] - prof[hi])
        r_hi = lat[hi] + t * (lat[hi + 1] - lat[hi])
    lo = i0
    while lo > 0 and below[lo - 1]:
        lo -= 1
    if lo == 0:
        r_lo = lat[0]
    else:
        t = (level - prof[lo]) / (prof[lo - 1] - prof[lo])
        r_lo = lat[lo] + t * (lat[lo - 1] - lat[lo])
    return (r_hi - r_lo) / 2.0


def run_config(r_cyst, bg_x, lam_bp, lam_ls, n_sc, noise=20.0, pulse_cycles=2,
               seeds=range(1, 6), txs=8.0, region_frac=0.85, verbose=True):
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=pulse_cycles)
    region_r = region_frac * r_cyst
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
        rb = est_radius(bp)
        rd = est_radius(dash)
        err_b = abs(rb - r_cyst) / r_cyst
        err_d = abs(rd - r_cyst) / r_cyst
        ok_cnr = m["ls"][0] > m["bp"][0] > m["das"][0]
        ok_snr = m["ls"][1] > m["das"][1]
        ok_rad = err_b <= 0.15 and err_d > err_b
        votes.append((ok_cnr, ok_snr, ok_rad))
        if verbose:
            print(f"  s{seed}: cnr {m['das'][0]:.2f}/{m['bp'][0]:.2f}/{m['ls'][0]:.2f}"
                  f" {'OK' if ok_cnr else '--'} snr {m['das'][1]:.2f}/{m['ls'][1]:.2f}"
                  f" {'OK' if ok_snr else '--'} rad {rb*1e3:.2f}/{rd*1e3:.2f}"
                  f" ({err_b*100:.0f}%/{err_d*100:.0f}%) {'OK' if ok_rad else '--'}",
                  flush=True)
    a = np.array(votes)
    n = len(votes)
    print(f"r={r_cyst*1e3:g} bgx={bg_x*1e3:g} lbp={lam_bp:g} lls={lam_ls:g} "
          f"n={n_sc} -> cnr {a[:,0].sum()}/{n} snr {a[:,1].sum()}/{n} "
          f"rad {a[:,2].sum()}/{n}", flush=True)
    return a


if __name__ == "__main__":
    t0 = time.time()
    args = sys.argv[1:]
    if args:
        r, bgx, lbp, lls, n_sc = (float(v) for v in args[:5])
        seeds = range(1, int(args[5]) + 1) if len(args) > 5 else range(1, 6)
        run_config(r, bgx, lbp, lls, int(n_sc), seeds=seeds)
    else:
        for n_sc in (1600, 2400):
            for lam_bp in (0.10, 0.15):
                for lam_ls in (5.0, 12.0):
                    run_config(4.0e-3, 7.4e-3, lam_bp, lam_ls, n_sc)
    print(f"total {time.time()-t0:.0f}s", flush=True)
