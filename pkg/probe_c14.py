"""Canonical-scale cyst: display-domain CNR ordering + boundary radius."""
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
from usbeam.imaging import envelope, log_compress
from usbeam.metrics import RegionSpec, region_values, cnr, snr

GEOM = ProbeGeometry(num_elements=32, pitch=256e-6, center_frequency=3e6,
                     sampling_frequency=40e6, sound_speed=1540.0)
DEPTH = 0.080
K, P = 100, 20
DR = 60.0

ANGLES = np.deg2rad(np.linspace(-14.0, 14.0, K))
SCAN = ScanPlan(kind="sector", positions=ANGLES, depth_start=0.065,
                depth_end=0.095, focus_depth=DEPTH)
A = centered_steering_matrix(SCAN.beam_angles(), GEOM) / np.sqrt(GEOM.num_elements)
MODEL = build_forward_model(A, decimation_matrix(K, P))
KEPT = kept_emission_indices(K, P)
_lat = DEPTH * np.sin(ANGLES[KEPT])
_j = int(np.searchsorted(_lat, 0.0))
# rim sits on kept beams: diameter spans five kept gaps, center midway
C_LAT = (_lat[_j] + _lat[_j + 5]) / 2.0
R_CYST = (_lat[_j + 5] - _lat[_j]) / 2.0


def mkimg(ref, x):
    return RfImage(data=x, kind="rf", scan_kind=ref.scan_kind,
                   scanline_positions=ref.scanline_positions.copy(),
                   depths=ref.depths.copy(), provenance={"method": "t"})


def db_image(img):
    bm = log_compress(envelope(img), dynamic_range=DR)
    return RfImage(data=bm.pixels + DR, kind="envelope", scan_kind=img.scan_kind,
                   scanline_positions=img.scanline_positions.copy(),
                   depths=img.depths.copy())


def est_boundary(img, c_lat, r_true, band=1.0e-3, drop_db=20.0):
    env = envelope(img)
    sel = np.abs(env.depths - DEPTH) <= band
    prof = env.data[:, sel].max(axis=1)
    rel = DEPTH * np.sin(env.scanline_positions) - c_lat
    ann = (np.abs(rel) >= 1.35 * r_true) & (np.abs(rel) <= 2.8 * r_true)
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
    def cross(a, b):
        pa, pb = prof[a], prof[b]
        t = 0.0 if pb == pa else (level - pa) / (pb - pa)
        return rel[a] + t * (rel[b] - rel[a])
    return (cross(hi, hi + 1) - cross(lo, lo - 1)) / 2.0


def safe(fn, *args):
    try:
        v = fn(*args)
        return v if np.isfinite(v) else float("nan")
    except (ValueError, ZeroDivisionError):
        return float("nan")


def fillv(env, target, bg):
    b = region_values(env, bg).mean()
    if b == 0:
        return float("nan")
    return region_values(env, target).mean() / b


def run_config(lam_bp, lam_ls_list, n_sc, noise=20.0, seeds=range(1, 6), txs=25.0):
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=2)
    target = RegionSpec(shape="disc", center=(C_LAT, DEPTH), radius=0.8 * R_CYST)
    bg = RegionSpec(shape="disc", center=(C_LAT + 2.4 * R_CYST, DEPTH),
                    radius=0.8 * R_CYST)
    votes = {lls: [] for lls in lam_ls_list}
    for seed in seeds:
        ph = cyst_phantom(radius=R_CYST, depth=DEPTH, n_scatterers=n_sc, seed=seed,
                          lateral_halfwidth=24e-3, axial_halfwidth=16e-3,
                          center_lateral=C_LAT)
        cube = simulate_raw(ph, GEOM, pulse, SCAN, noise_snr_db=noise,
                            seed=seed + 100, tx_beam_sigma=np.deg2rad(txs))
        foc = compensate_delays(analytic_signal(cube), GEOM, SCAN)
        dasn = das_beamform(foc, GEOM, SCAN, apodization="none")
        z = dasn.data[MODEL.kept]
        scale = np.max(np.abs(z))
        zn = z / scale
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rbp = bp_solve(zn, MODEL.G, lam_bp, max_iters=2500, tol=1e-4)
        bp = mkimg(dasn, rbp.x * scale)
        env_d, env_b = envelope(dasn), envelope(bp)
        db_d, db_b = db_image(dasn), db_image(bp)
        cnrl_d = safe(cnr, db_d, target, bg)
        cnrl_b = safe(cnr, db_b, target, bg)
        snr_d = safe(snr, env_d, bg)
        snr_b = safe(snr, env_b, bg)
        fill_d = fillv(env_d, target, bg)
        fill_b = fillv(env_b, target, bg)
        rb = est_boundary(bp, C_LAT, R_CYST)
        rd = est_boundary(dasn, C_LAT, R_CYST)
        err_b = abs(rb - R_CYST) / R_CYST
        err_d = abs(rd - R_CYST) / R_CYST
        ok_rad = err_b <= 0.15 and err_d > err_b
        line = (f"  s{seed}: das cL {cnrl_d:.2f} fill {fill_d:.2f} snr {snr_d:.2f} | "
                f"bp cL {cnrl_b:.2f} fill {fill_b:.2f} snr {snr_b:.2f} | "
                f"rad {rb*1e3:.2f}/{rd*1e3:.2f} ({err_b*100:.0f}%/{err_d*100:.0f}%)"
                f" {'OK' if ok_rad else '--'} |")
        for lls in lam_ls_list:
            ls = mkimg(dasn, ls_solve(zn, MODEL.G, lls) * scale)
            env_l = envelope(ls)
            db_l = db_image(ls)
            cnrl_l = safe(cnr, db_l, target, bg)
            snr_l = safe(snr, env_l, bg)
            fill_l = fillv(env_l, target, bg)
            ok_cnr = cnrl_l > cnrl_b > cnrl_d
            ok_snr = snr_l > snr_d
            votes[lls].append((ok_cnr, ok_snr, ok_rad))
            line += (f" L{lls:g}: cL {cnrl_l:.2f} fil {fill_l:.2f} snr {snr_l:.2f}"
                     f" {'C' if ok_cnr else '-'}{'S' if ok_snr else '-'} |")
        print(line, flush=True)
    for lls in lam_ls_list:
        a = np.array(votes[lls])
        n = len(a)
        print(f"lbp={lam_bp:g} lls={lls:g} n={n_sc} -> "
              f"cnr {a[:,0].sum()}/{n} snr {a[:,1].sum()}/{n} "
              f"rad {a[:,2].sum()}/{n}", flush=True)


if __name__ == "__main__":
    t0 = time.time()
    print(f"K={K} P={P} r={R_CYST*1e3:.3f}mm c={C_LAT*1e3:.3f}mm", flush=True)
    for n_sc in (1800, 3000):
        for lam_bp in (0.35, 0.5):
            run_config(lam_bp, [1.0, 3.0], n_sc)
    print(f"total {time.time()-t0:.0f}s", flush=True)
