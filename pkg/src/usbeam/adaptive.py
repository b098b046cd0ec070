"""Adaptive beamformers: Capon variants and iterative adaptive approach.

Covariance estimation follows the usual ultrasound recipe: subaperture
(spatial) smoothing, temporal averaging over a small depth window of the
analytic data, and trace-relative diagonal loading
``R + delta * trace(R)/dim * I``.  Per-pixel weights are
``R^-1 a / (a^H R^-1 a)`` for a distortionless constraint vector a.

The multibeam Capon and IAA estimators work laterally: at one depth the
K per-emission snapshots are phase-rotated onto the steering manifold of
their own beam direction, so a scatterer shows up across emissions with
its direction's array signature and one covariance (or one model fit)
covers the whole scanline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._parallel import thread_map
from .acquisition import RawDataCube, ScanPlan
from .classic import RfImage
from .geometry import (
    ProbeGeometry,
    butler_matrix,
    centered_steering_matrix,
    low_order_beam_indices,
)

__all__ = [
    "CovarianceEstimate",
    "SolverWarning",
    "estimate_covariance",
    "mv_weights",
    "bs_capon_sample",
    "multibeam_capon_scanline",
    "iaa_scanline",
    "mv_beamform",
    "bs_capon_beamform",
    "multibeam_capon_beamform",
    "iaa_beamform",
]

_SINGULAR_MSG = (
    "covariance matrix is singular; increase diagonal loading "
    "(or widen the averaging windows)"
)


class SolverWarning(UserWarning):
    """Raised as a warning when an estimator had to fall back or did not settle."""


@dataclass(frozen=True)
class CovarianceEstimate:
    """Loaded sample covariance with the averaging setup that produced it."""

    R: np.ndarray
    subaperture: int
    half_window: int
    loading: float

    def __post_init__(self):
        r = self.R
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("R must be square")


def _hermitize(r: np.ndarray) -> np.ndarray:
    """Average out rounding asymmetry; R is Hermitian by construction."""
    return (r + np.conj(np.swapaxes(r, -1, -2))) / 2.0


def _clip_window(n: int, num_samples: int, half_window: int) -> tuple[int, int]:
    # Depth window clipped at the image edges.
    lo = max(0, n - half_window)
    hi = min(num_samples - 1, n + half_window)
    return lo, hi


def estimate_covariance(
    line: np.ndarray,
    depth_index: int,
    subaperture: int,
    half_window: int = 0,
    loading: float = 0.0,
) -> CovarianceEstimate:
    """Averaged, diagonally loaded covariance at one image point.

    Parameters
    ----------
    line : ndarray, shape (M, N)
        Delay-compensated analytic channel data of one emission.
    depth_index : int
        Target depth sample n; the temporal window ``n +- half_window``
        is clipped at the image edges.
    subaperture : int
        Spatial smoothing length L; the M - L + 1 contiguous subarrays
        are averaged.  L = M disables spatial smoothing.
    half_window : int
        Temporal half-width T (2T + 1 samples when not clipped).
    loading : float
        Relative diagonal load delta; adds ``delta * trace(R)/L * I``.

    Returns
    -------
    CovarianceEstimate
        With ``R`` of shape (L, L), Hermitian; positive definite whenever
        ``loading > 0`` and the window has any energy.
    """
    line = np.asarray(line)
    if line.ndim != 2:
        raise ValueError("line must have shape (channels, samples)")
    m, n_samples = line.shape
    if not 1 <= subaperture <= m:
        raise ValueError("subaperture must be in [1, num_channels]")
    if half_window < 0 or loading < 0:
        raise ValueError("half_window and loading must be nonnegative")
    if not 0 <= depth_index < n_samples:
        raise IndexError("depth_index out of range")

    lo, hi = _clip_window(depth_index, n_samples, half_window)
    window = line[:, lo : hi + 1]
    # (M-L+1, W, L) snapshot stack
    snaps = sliding_window_view(window, subaperture, axis=0)
    r = np.einsum("swa,swb->ab", snaps, snaps.conj())
    r /= snaps.shape[0] * snaps.shape[1]
    r = _hermitize(r)
    if loading > 0:
        r = r + (loading * np.trace(r).real / subaperture) * np.eye(subaperture)
    return CovarianceEstimate(
        R=r, subaperture=subaperture, half_window=half_window, loading=loading
    )


def mv_weights(R: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Minimum-variance weights ``R^-1 a / (a^H R^-1 a)``.

    Solved with a Cholesky factorization; a singular covariance raises
    instead of being silently regularized.
    """
    a = np.asarray(a)
    try:
        factor = cho_factor(R, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise LinAlgError(_SINGULAR_MSG) from exc
    ra = cho_solve(factor, a, check_finite=False)
    denom = np.real(np.vdot(a, ra))
    if denom <= 0:
        raise LinAlgError(_SINGULAR_MSG)
    return ra / denom


def bs_capon_sample(
    line: np.ndarray,
    depth_index: int,
    B: np.ndarray,
    half_window: int = 0,
    loading: float = 0.0,
) -> complex:
    """Beamspace Capon output at one image point.

    The channel data is transformed by ``B`` (orthogonal beamforming
    matrix, possibly row-truncated), the covariance is estimated in
    beamspace over the temporal window, and the distortionless
    constraint is the beamspace image of the ones vector, ``B @ 1``.
    For an orthogonal DFT-style B that constraint is proportional to the
    broadside beam's unit vector, and for any unitary B the output
    equals element-space Capon exactly.
    """
    line = np.asarray(line)
    b = np.asarray(B)
    if b.ndim != 2 or b.shape[1] != line.shape[0]:
        raise ValueError("B must map channels to beams: shape (num_beams, M)")
    y_bs = b @ line
    constraint = b @ np.ones(b.shape[1])
    est = estimate_covariance(
        y_bs, depth_index, subaperture=b.shape[0], half_window=half_window, loading=loading
    )
    w = mv_weights(est.R, constraint)
    return complex(np.vdot(w, y_bs[:, depth_index]))


def multibeam_capon_scanline(
    rotated: np.ndarray,
    A: np.ndarray,
    loading: float = 0.0,
    cov: np.ndarray | None = None,
) -> np.ndarray:
    """Capon scanline across beams from one depth's multibeam snapshots.

    Parameters
    ----------
    rotated : ndarray, shape (M, K)
        Column k is emission k's compensated channel vector multiplied
        elementwise by its own steering vector (phase rotation), so
        targets appear with their direction's manifold signature.
    A : ndarray, shape (M, K)
        Steering manifold on the beam grid (same phase convention as the
        rotation).
    loading : float
        Relative diagonal load on the beam-averaged covariance.
    cov : ndarray, optional
        Precomputed covariance to use instead of estimating from
        ``rotated`` (diagnostics / testing hook).

    Returns
    -------
    ndarray, shape (K,), complex
        ``(a_k^H R^-1 y_k) / (a_k^H R^-1 a_k)`` per beam.  With the
        identity covariance this is the matched filter ``a^H y / M``.
    """
    y = np.asarray(rotated)
    a = np.asarray(A)
    if y.shape != a.shape or y.ndim != 2:
        raise ValueError("rotated and A must share shape (M, K)")
    m, k = y.shape
    if cov is None:
        r = _hermitize(y @ y.conj().T) / k
        if loading > 0:
            r = r + (loading * np.trace(r).real / m) * np.eye(m)
    else:
        r = np.asarray(cov)
    try:
        factor = cho_factor(r, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise LinAlgError(_SINGULAR_MSG) from exc
    ry = cho_solve(factor, y, check_finite=False)
    ra = cho_solve(factor, a, check_finite=False)
    num = np.einsum("mk,mk->k", a.conj(), ry)
    den = np.einsum("mk,mk->k", a.conj(), ra).real
    return num / den


def iaa_scanline(
    y: np.ndarray,
    A: np.ndarray,
    iterations: int = 15,
) -> np.ndarray:
    """Iterative adaptive approach: per-direction powers on a dense grid.

    Starting from matched-filter powers, each pass rebuilds the model
    covariance ``R = A diag(P) A^H`` and re-estimates every direction's
    amplitude ``x_k = a_k^H R^-1 y_k / (a_k^H R^-1 a_k)``, with
    ``P_kk = |x_k|^2``.

    Parameters
    ----------
    y : ndarray
        Either a single snapshot of shape (M,), used for every
        direction, or an (M, K) matrix whose column k is the snapshot
        used when estimating direction k (phase-rotated multibeam data).
    A : ndarray, shape (M, K)
        Steering manifold of the direction grid.
    iterations : int
        Number of refinement passes over the grid.

    Returns
    -------
    ndarray, shape (K,), real
        Final power estimates ``P_kk``.  Zero input yields exactly zero.
    """
    a = np.asarray(A)
    if a.ndim != 2:
        raise ValueError("A must have shape (M, K)")
    m, k = a.shape
    y = np.asarray(y)
    if y.shape == (m,):
        cols = np.broadcast_to(y[:, None], (m, k))
    elif y.shape == (m, k):
        cols = y
    else:
        raise ValueError("y must have shape (M,) or (M, K)")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")

    # a_k^H a_k = M for unit-modulus steering entries
    num = np.einsum("mk,mk->k", a.conj(), cols)
    p = np.abs(num / m) ** 2
    for _ in range(iterations):
        if not np.any(p > 0):
            return np.zeros(k)
        r = _hermitize((a * p[None, :]) @ a.conj().T)
        try:
            factor = cho_factor(r, lower=True, check_finite=False)
        except LinAlgError:
            trace = np.trace(r).real
            if trace <= 0:
                return np.zeros(k)
            warnings.warn(
                "model covariance singular; applying minimal diagonal loading",
                SolverWarning,
                stacklevel=2,
            )
            r = r + (1e-10 * trace / m) * np.eye(m)
            factor = cho_factor(r, lower=True, check_finite=False)
        ry = cho_solve(factor, cols, check_finite=False)
        ra = cho_solve(factor, a, check_finite=False)
        num = np.einsum("mk,mk->k", a.conj(), ry)
        den = np.einsum("mk,mk->k", a.conj(), ra).real
        p = np.abs(num / den) ** 2
    return p


# ---------------------------------------------------------------------------
# image drivers
#
# The per-pixel definitions above are the reference semantics; the drivers
# below batch them over depth with cumulative-sum window averaging and
# stacked linear solves so whole images stay in numpy.


def _windowed_capon_line(
    stack: np.ndarray,
    constraint: np.ndarray,
    half_window: int,
    loading: float,
) -> np.ndarray:
    """Capon output along one line for a stack of snapshot groups.

    stack: (n_groups, L, N); covariance at depth n averages all groups
    over the clipped window n +- half_window; output applies the
    normalized weights to the group-averaged snapshot.
    """
    n_groups, dim, n = stack.shape
    c_per_depth = np.einsum("sln,spn->nlp", stack, stack.conj())
    csum = np.concatenate(
        [np.zeros((1, dim, dim), dtype=c_per_depth.dtype), np.cumsum(c_per_depth, axis=0)]
    )
    idx = np.arange(n)
    lo = np.maximum(0, idx - half_window)
    hi = np.minimum(n - 1, idx + half_window)
    counts = (hi - lo + 1) * n_groups
    r = (csum[hi + 1] - csum[lo]) / counts[:, None, None]
    r = _hermitize(r)
    if loading > 0:
        tr = np.einsum("nll->n", r).real
        r = r + (loading / dim) * tr[:, None, None] * np.eye(dim)[None]
    rhs = np.broadcast_to(constraint[:, None], (n, dim, 1))
    try:
        w = np.linalg.solve(r, rhs)[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise LinAlgError(_SINGULAR_MSG) from exc
    den = np.einsum("l,nl->n", constraint.conj(), w).real
    if np.any(den <= 0):
        raise LinAlgError(_SINGULAR_MSG)
    ymean = stack.mean(axis=0)  # (L, N)
    return np.einsum("nl,ln->n", w.conj(), ymean) / den


def _driver_checks(cube: RawDataCube, geom: ProbeGeometry, scan: ScanPlan) -> None:
    if not cube.is_compensated:
        raise ValueError("adaptive beamformers expect delay-compensated data")
    if cube.num_channels != geom.num_elements:
        raise ValueError("cube channel count does not match probe geometry")
    if cube.num_emissions != scan.num_emissions:
        raise ValueError("cube emission count does not match scan plan")


def _image(cube, geom, scan, data, provenance) -> RfImage:
    return RfImage(
        data=data,
        kind="rf",
        scan_kind=scan.kind,
        scanline_positions=scan.positions.copy(),
        depths=cube.depths(geom.sound_speed),
        provenance=provenance,
    )


def mv_beamform(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    subaperture: int | None = None,
    temporal_window: int = 10,
    loading_delta: float | None = None,
    threads: int | None = None,
) -> RfImage:
    """Per-pixel minimum-variance image with subaperture averaging.

    Defaults: subaperture ``M // 8``, a 10-sample temporal averaging
    window (half-window 5), loading ``1/(10 L)``.  The output at each
    pixel applies the weights to the subaperture-averaged snapshot.
    """
    _driver_checks(cube, geom, scan)
    m = cube.num_channels
    sub = max(1, m // 8) if subaperture is None else int(subaperture)
    if not 1 <= sub <= m:
        raise ValueError("subaperture must be in [1, num_channels]")
    delta = 1.0 / (10.0 * sub) if loading_delta is None else float(loading_delta)
    half = max(0, int(temporal_window) // 2)
    ones = np.ones(sub)
    out = np.empty((scan.num_emissions, cube.num_samples), dtype=complex)

    def one_emission(k: int) -> None:
        slab = cube.data[:, :, k]
        stack = sliding_window_view(slab, sub, axis=0).transpose(0, 2, 1)
        out[k] = _windowed_capon_line(stack, ones, half, delta)

    thread_map(one_emission, range(scan.num_emissions), threads)
    return _image(
        cube, geom, scan, out,
        {
            "method": "mv",
            "subaperture": sub,
            "temporal_window": int(temporal_window),
            "loading_delta": delta,
        },
    )


def bs_capon_beamform(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    temporal_window: int = 10,
    loading_delta: float = 0.01,
    beamspace_dim: int | None = None,
    threads: int | None = None,
) -> RfImage:
    """Beamspace Capon image (orthogonal beam transform, ``B @ 1`` constraint).

    ``beamspace_dim`` keeps only that many lowest-order beams; None keeps
    the full beam set, in which case the output matches element-space
    Capon without subaperture smoothing.
    """
    _driver_checks(cube, geom, scan)
    m = cube.num_channels
    b = butler_matrix(m)
    if beamspace_dim is not None:
        b = b[low_order_beam_indices(m, int(beamspace_dim))]
    constraint = b @ np.ones(m)
    half = max(0, int(temporal_window) // 2)
    out = np.empty((scan.num_emissions, cube.num_samples), dtype=complex)

    def one_emission(k: int) -> None:
        y_bs = b @ cube.data[:, :, k]
        out[k] = _windowed_capon_line(y_bs[None], constraint, half, loading_delta)

    thread_map(one_emission, range(scan.num_emissions), threads)
    return _image(
        cube, geom, scan, out,
        {
            "method": "bs_capon",
            "temporal_window": int(temporal_window),
            "loading_delta": loading_delta,
            "beamspace_dim": beamspace_dim if beamspace_dim is not None else m,
        },
    )


def _rotated_and_manifold(cube, geom, scan, beamspace_dim, reference_depth):
    """Phase-rotated lateral snapshots (N, M, K) and the matching manifold."""
    angles = scan.beam_angles(reference_depth)
    a = centered_steering_matrix(angles, geom)
    rotated = cube.data * a[:, None, :]
    if beamspace_dim is not None:
        sel = butler_matrix(geom.num_elements)[
            low_order_beam_indices(geom.num_elements, int(beamspace_dim))
        ]
        a = sel @ a
        rotated = np.einsum("bm,mnk->bnk", sel, rotated)
    return np.moveaxis(rotated, 1, 0), a


def multibeam_capon_beamform(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    loading_delta: float = 0.01,
    beamspace_dim: int | None = None,
    reference_depth: float | None = None,
) -> RfImage:
    """Capon over the lateral beam dimension, one covariance per depth.

    At each depth the K phase-rotated emission snapshots form the sample
    covariance; every beam direction is then extracted with its own
    distortionless constraint.  ``beamspace_dim`` optionally reduces the
    element dimension to the lowest-order orthogonal beams first.
    """
    _driver_checks(cube, geom, scan)
    snaps, a = _rotated_and_manifold(cube, geom, scan, beamspace_dim, reference_depth)
    n, dim, k = snaps.shape
    r = _hermitize(np.matmul(snaps, np.conj(np.swapaxes(snaps, 1, 2)))) / k
    if loading_delta > 0:
        tr = np.einsum("nll->n", r).real
        r = r + (loading_delta / dim) * tr[:, None, None] * np.eye(dim)[None]
    try:
        ry = np.linalg.solve(r, snaps)
        ra = np.linalg.solve(r, np.broadcast_to(a, (n, dim, k)))
    except np.linalg.LinAlgError as exc:
        raise LinAlgError(_SINGULAR_MSG) from exc
    num = np.einsum("mk,nmk->nk", a.conj(), ry)
    den = np.einsum("mk,nmk->nk", a.conj(), ra).real
    return _image(
        cube, geom, scan, (num / den).T,
        {
            "method": "multibeam_capon",
            "loading_delta": loading_delta,
            "beamspace_dim": beamspace_dim if beamspace_dim is not None else dim,
        },
    )


def iaa_beamform(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    iterations: int = 15,
    beamspace_dim: int | None = None,
    reference_depth: float | None = None,
) -> RfImage:
    """Iterative adaptive approach applied laterally at every depth.

    Batched form of ``iaa_scanline`` with the (M, K) snapshot matrix per
    depth; the image holds the final amplitude estimates.  A minimal
    trace-relative load (1e-10) keeps the stacked solves nonsingular.
    """
    _driver_checks(cube, geom, scan)
    snaps, a = _rotated_and_manifold(cube, geom, scan, beamspace_dim, reference_depth)
    n, dim, k = snaps.shape
    num = np.einsum("mk,nmk->nk", a.conj(), snaps)
    x = num / dim
    p = np.abs(x) ** 2
    # depths with no matched-filter power stay exactly zero (a zero row
    # would otherwise feed a degenerate solve)
    alive = np.flatnonzero(p.sum(axis=1) > 0)
    snaps_a = snaps[alive]
    p_a = p[alive]
    eye = np.eye(dim)[None]
    for _ in range(int(iterations) if alive.size else 0):
        ap = a[None] * p_a[:, None, :]
        r = _hermitize(np.matmul(ap, np.conj(a.T)[None]))
        tr = np.einsum("nll->n", r).real
        r = r + (1e-10 / dim) * np.maximum(tr, np.finfo(float).tiny)[:, None, None] * eye
        ry = np.linalg.solve(r, snaps_a)
        ra = np.linalg.solve(r, np.broadcast_to(a, (alive.size, dim, k)))
        num = np.einsum("mk,nmk->nk", a.conj(), ry)
        den = np.einsum("mk,nmk->nk", a.conj(), ra).real
        x[alive] = num / den
        p_a = np.abs(x[alive]) ** 2
    return _image(
        cube, geom, scan, x.T,
        {
            "method": "iaa",
            "iterations": int(iterations),
            "beamspace_dim": beamspace_dim if beamspace_dim is not None else dim,
        },
    )
