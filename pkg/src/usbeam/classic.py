"""Delay-and-sum beamforming and the RF image container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .acquisition import RawDataCube, ScanPlan
from .geometry import ProbeGeometry

__all__ = ["RfImage", "das_beamform", "extract_lateral_scanline", "apodization_window"]

_KINDS = ("rf", "envelope")


@dataclass
class RfImage:
    """Beamformed image on the (scanline, depth) grid.

    ``data`` has shape (K, N): one row per scanline, one column per depth
    sample.  No scan conversion is applied; ``scan_kind`` plus
    ``scanline_positions`` (angles for sector, lateral origins for
    linear) and ``depths`` give every pixel a physical position.
    ``kind`` tracks the processing stage: complex "rf" data or its real
    "envelope".
    """

    data: np.ndarray
    kind: str
    scan_kind: str
    scanline_positions: np.ndarray
    depths: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        if self.scan_kind not in ("sector", "linear"):
            raise ValueError("scan_kind must be 'sector' or 'linear'")
        self.scanline_positions = np.asarray(self.scanline_positions, dtype=float)
        self.depths = np.asarray(self.depths, dtype=float)
        if self.data.shape != (self.scanline_positions.size, self.depths.size):
            raise ValueError("data shape must be (num_scanlines, num_depths)")
        if self.kind == "envelope" and np.iscomplexobj(self.data):
            raise ValueError("envelope images are real-valued")

    @property
    def num_scanlines(self) -> int:
        return self.data.shape[0]

    @property
    def num_depths(self) -> int:
        return self.data.shape[1]


def apodization_window(name: str, num_elements: int) -> np.ndarray:
    """Receive apodization weights, normalized to unit sum.

    Unit sum keeps the distortionless property of the summed aperture:
    a coherent unit signal across channels beamforms to exactly 1.
    """
    if name == "none":
        w = np.ones(num_elements)
    elif name == "hanning":
        w = np.hanning(num_elements)
    elif name == "hamming":
        w = np.hamming(num_elements)
    else:
        raise ValueError(f"unknown apodization {name!r}")
    total = w.sum()
    if total <= 0:  # hanning of 1..2 elements degenerates to zeros
        w = np.ones(num_elements)
        total = float(num_elements)
    return w / total


def das_beamform(
    cube: RawDataCube,
    geom: ProbeGeometry,
    scan: ScanPlan,
    apodization: str = "none",
) -> RfImage:
    """Weighted sum across channels of delay-compensated data.

    Scanline k, depth n is ``sum_m w_m * y_k[m, n]`` with w the
    normalized apodization window; with ``"none"`` this is the plain
    mean over channels.  Every emission is beamformed; emission
    reduction belongs to the regularized-inverse stage, never here.
    """
    if not cube.is_compensated:
        raise ValueError("das_beamform expects delay-compensated data")
    w = apodization_window(apodization, cube.num_channels)
    # (M,) x (M, N, K) -> (N, K); transpose to (K, N)
    img = np.tensordot(w, cube.data, axes=(0, 0)).T
    return RfImage(
        data=img,
        kind="rf",
        scan_kind=scan.kind,
        scanline_positions=scan.positions.copy(),
        depths=cube.depths(geom.sound_speed),
        provenance={"method": "das", "apodization": apodization},
    )


def extract_lateral_scanline(img: RfImage, depth_index: int) -> np.ndarray:
    """Values across all scanlines at one depth row (a lateral cut)."""
    n = img.num_depths
    if not -n <= depth_index < n:
        raise IndexError(f"depth_index {depth_index} out of range for {n} depths")
    return img.data[:, depth_index].copy()
