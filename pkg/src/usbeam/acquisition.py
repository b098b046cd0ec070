"""Raw channel-data handling: scan plans, analytic conversion, delay compensation.

The pipeline order is fixed: real RF -> analytic signal -> per-emission
dynamic-focus delay compensation -> beamforming.  Sample i of a cube
corresponds to absolute time ``t0 + i/fs`` with t = 0 at transmit, so a
point at two-way range z maps to global sample ``round(2*z/c * fs)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from ._parallel import thread_map
from .geometry import ProbeGeometry

__all__ = ["ScanPlan", "RawDataCube", "analytic_signal", "compensate_delays"]


@dataclass(frozen=True)
class ScanPlan:
    """Emission sequence covering an imaging region.

    ``kind`` selects the scan geometry:

    * ``"sector"``: all beams originate at the aperture center;
      ``positions`` are beam angles in radians.
    * ``"linear"``: beams travel straight down from lateral origins;
      ``positions`` are origin x coordinates in meters.

    Depths are measured along the beam from its origin.
    """

    kind: str
    positions: np.ndarray
    depth_start: float
    depth_end: float
    focus_depth: float

    def __post_init__(self):
        if self.kind not in ("sector", "linear"):
            raise ValueError(f"unknown scan kind {self.kind!r}")
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 1 or pos.size < 1:
            raise ValueError("positions must be a nonempty 1-D array")
        if np.any(np.diff(pos) <= 0) and pos.size > 1:
            raise ValueError("positions must be strictly increasing")
        if not 0 < self.depth_start < self.depth_end:
            raise ValueError("need 0 < depth_start < depth_end")
        if self.focus_depth <= 0:
            raise ValueError("focus_depth must be positive")

    @property
    def num_emissions(self) -> int:
        return self.positions.size

    def num_samples(self, fs: float, c: float) -> int:
        """Depth window length in samples: ceil(extent * 2 * fs / c)."""
        return max(1, math.ceil((self.depth_end - self.depth_start) * 2.0 * fs / c))

    def t0(self, fs: float, c: float) -> float:
        """Time of the first sample, snapped to the global sample grid."""
        return round(2.0 * self.depth_start / c * fs) / fs

    def beam_origins(self) -> np.ndarray:
        """(K, 2) array of (x, z) beam origins on the aperture plane."""
        k = self.num_emissions
        origins = np.zeros((k, 2))
        if self.kind == "linear":
            origins[:, 0] = self.positions
        return origins

    def beam_directions(self) -> np.ndarray:
        """(K, 2) array of unit propagation vectors (sin, cos per beam)."""
        if self.kind == "sector":
            return np.stack([np.sin(self.positions), np.cos(self.positions)], axis=1)
        k = self.num_emissions
        return np.tile(np.array([0.0, 1.0]), (k, 1))

    def beam_angles(self, reference_depth: float | None = None) -> np.ndarray:
        """Angle grid for steering models.

        Sector plans return their beam angles directly.  Linear plans map
        lateral origins to angles seen from the aperture center at a
        reference depth, ``arctan(x_k / z_ref)`` (default: focus depth).
        """
        if self.kind == "sector":
            return self.positions.copy()
        z_ref = self.focus_depth if reference_depth is None else float(reference_depth)
        if z_ref <= 0:
            raise ValueError("reference_depth must be positive")
        return np.arctan(self.positions / z_ref)


@dataclass
class RawDataCube:
    """Per-channel echo data for a full emission sequence.

    ``data`` has shape (M, N, K): channel, fast-time sample, emission.
    Real float before analytic conversion, complex after.
    """

    data: np.ndarray
    fs: float
    t0: float
    is_analytic: bool = False
    is_compensated: bool = False

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("data must have shape (channels, samples, emissions)")
        if self.fs <= 0:
            raise ValueError("fs must be positive")
        if self.is_analytic != np.iscomplexobj(self.data):
            kind = "complex" if self.is_analytic else "real"
            raise ValueError(f"analytic flag requires {kind} data")
        if self.is_compensated and not self.is_analytic:
            raise ValueError("compensated data must be analytic")

    @property
    def num_channels(self) -> int:
        return self.data.shape[0]

    @property
    def num_samples(self) -> int:
        return self.data.shape[1]

    @property
    def num_emissions(self) -> int:
        return self.data.shape[2]

    def depths(self, c: float) -> np.ndarray:
        """Two-way range of each sample row: c * (t0 + i/fs) / 2."""
        i = np.arange(self.num_samples)
        return c * (self.t0 + i / self.fs) / 2.0


def analytic_signal(cube: RawDataCube) -> RawDataCube:
    """Convert real RF to its complex analytic signal along fast time.

    The real part of the result equals the input (up to FFT round-off)
    and the negative-frequency half of the spectrum is suppressed.
    """
    if cube.is_analytic:
        raise ValueError("cube is already analytic")
    data = hilbert(cube.data, axis=1)
    return RawDataCube(data=data, fs=cube.fs, t0=cube.t0, is_analytic=True)


def compensate_delays(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    threads: int | None = None,
) -> RawDataCube:
    """Dynamic receive focusing: align every channel on every image point.

    For emission k and depth row i (two-way range r_i along the beam),
    channel m is sampled at the exact arrival time of an echo from the
    image point: ``(r_i + |p_m - q|) / c``, with linear interpolation
    between fast-time samples and zero outside the recorded window.
    After compensation a point scatterer on the beam axis contributes the
    pulse center to the same row on every channel.
    """
    if not cube.is_analytic:
        raise ValueError("compensate_delays expects analytic data")
    if cube.is_compensated:
        raise ValueError("cube is already compensated")
    if cube.num_channels != geom.num_elements:
        raise ValueError("cube channel count does not match probe geometry")
    if cube.num_emissions != scan.num_emissions:
        raise ValueError("cube emission count does not match scan plan")

    m, n, k = cube.data.shape
    c = geom.sound_speed
    fs = cube.fs
    elem_x = geom.element_positions()
    origins = scan.beam_origins()
    dirs = scan.beam_directions()
    ranges = c * (cube.t0 + np.arange(n) / fs) / 2.0

    out = np.empty((m, n, k), dtype=complex)

    def one_emission(ki: int) -> None:
        qx = origins[ki, 0] + ranges * dirs[ki, 0]
        qz = origins[ki, 1] + ranges * dirs[ki, 1]
        # (M, N) echo arrival times: transmit leg along the beam, receive
        # leg element-to-point.
        rx = np.sqrt((qx[None, :] - elem_x[:, None]) ** 2 + qz[None, :] ** 2)
        tau = (ranges[None, :] + rx) / c
        f = (tau - cube.t0) * fs
        i0 = np.floor(f).astype(np.int64)
        frac = f - i0
        valid = (i0 >= 0) & (i0 <= n - 2)
        i0c = np.clip(i0, 0, n - 2)
        slab = cube.data[:, :, ki]
        rows = np.arange(m)[:, None]
        vals = slab[rows, i0c] * (1.0 - frac) + slab[rows, i0c + 1] * frac
        out[:, :, ki] = np.where(valid, vals, 0.0)

    thread_map(one_emission, range(k), threads)
    return RawDataCube(
        data=out, fs=fs, t0=cube.t0, is_analytic=True, is_compensated=True
    )
