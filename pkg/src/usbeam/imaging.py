"""Envelope detection, log compression and pixel geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classic import RfImage

__all__ = ["BModeImage", "envelope", "log_compress", "pixel_positions"]


@dataclass
class BModeImage:
    """Log-compressed display image.

    ``pixels`` holds dB values in [-dynamic_range, 0] on the same
    (scanline, depth) grid as the source image.
    """

    pixels: np.ndarray
    dynamic_range: float
    scan_kind: str
    scanline_positions: np.ndarray
    depths: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be positive")
        self.scanline_positions = np.asarray(self.scanline_positions, dtype=float)
        self.depths = np.asarray(self.depths, dtype=float)
        if self.pixels.shape != (self.scanline_positions.size, self.depths.size):
            raise ValueError("pixels shape must be (num_scanlines, num_depths)")


def envelope(img: RfImage) -> RfImage:
    """Envelope image: modulus of the complex RF data."""
    if img.kind != "rf":
        raise ValueError("envelope expects an rf-kind image")
    return RfImage(
        data=np.abs(img.data),
        kind="envelope",
        scan_kind=img.scan_kind,
        scanline_positions=img.scanline_positions.copy(),
        depths=img.depths.copy(),
        provenance=dict(img.provenance),
    )


def log_compress(img: RfImage, dynamic_range: float = 60.0) -> BModeImage:
    """Normalize to the envelope peak and compress to dB.

    ``20 log10(env / max)`` clamped below at ``-dynamic_range``; the peak
    pixel is exactly 0 dB.
    """
    if img.kind != "envelope":
        raise ValueError("log_compress expects an envelope-kind image")
    if dynamic_range <= 0:
        raise ValueError("dynamic_range must be positive")
    peak = float(np.max(img.data))
    if peak <= 0:
        raise ValueError("cannot log-compress an all-zero envelope")
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(img.data / peak)
    pixels = np.clip(db, -dynamic_range, 0.0)
    return BModeImage(
        pixels=pixels,
        dynamic_range=float(dynamic_range),
        scan_kind=img.scan_kind,
        scanline_positions=img.scanline_positions.copy(),
        depths=img.depths.copy(),
        provenance=dict(img.provenance),
    )


def pixel_positions(img: RfImage | BModeImage) -> tuple[np.ndarray, np.ndarray]:
    """Physical (x, z) coordinates of every pixel, each shaped (K, N).

    Sector grids are polar: scanline positions are beam angles and depth
    is range along the beam.  Linear grids are Cartesian.
    """
    pos = img.scanline_positions
    depths = img.depths
    if img.scan_kind == "sector":
        x = np.sin(pos)[:, None] * depths[None, :]
        z = np.cos(pos)[:, None] * depths[None, :]
    else:
        x = np.broadcast_to(pos[:, None], (pos.size, depths.size)).copy()
        z = np.broadcast_to(depths[None, :], (pos.size, depths.size)).copy()
    return x, z
