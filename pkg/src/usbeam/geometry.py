"""Array geometry, steering manifolds and beamspace transforms.

Conventions: a uniform linear array of M elements lies on the x axis,
centered on the origin, with z pointing into the medium.  Steering
angles are measured from the z axis, positive toward positive x.
Steering vectors are referenced to element 0 (first entry exactly 1);
``centered_steering_matrix`` re-references them to the physical element
positions when a symmetric-aperture kernel is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ProbeGeometry",
    "SteeringSet",
    "element_positions",
    "steering_vector",
    "steering_matrix",
    "centered_steering_matrix",
    "butler_matrix",
    "low_order_beam_indices",
    "decimation_matrix",
]


@dataclass(frozen=True)
class ProbeGeometry:
    """Uniform linear array and sampling parameters.

    Attributes
    ----------
    num_elements : int
        Number of active elements M.
    pitch : float
        Element center-to-center spacing in meters.
    center_frequency : float
        Pulse center frequency f0 in Hz.
    sampling_frequency : float
        RF sampling rate fs in Hz.  Must exceed 2*f0 so the analytic
        conversion of the real RF is well posed.
    sound_speed : float
        Propagation speed c in m/s.
    """

    num_elements: int
    pitch: float
    center_frequency: float
    sampling_frequency: float
    sound_speed: float = 1540.0

    def __post_init__(self):
        if self.num_elements < 2:
            raise ValueError("num_elements must be >= 2")
        for name in ("pitch", "center_frequency", "sampling_frequency", "sound_speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sampling_frequency <= 2.0 * self.center_frequency:
            raise ValueError("sampling_frequency must exceed twice the center frequency")

    @property
    def wavelength(self) -> float:
        return self.sound_speed / self.center_frequency

    @property
    def pitch_ratio(self) -> float:
        """Pitch in wavelengths; 0.5 for a half-wave array."""
        return self.pitch / self.wavelength

    @property
    def aperture(self) -> float:
        """Total aperture extent (outermost element centers)."""
        return (self.num_elements - 1) * self.pitch

    def element_positions(self) -> np.ndarray:
        return element_positions(self.num_elements, self.pitch)


def element_positions(num_elements: int, pitch: float) -> np.ndarray:
    """Lateral element coordinates, centered on the aperture midpoint.

    Element m sits at ``(m - (M-1)/2) * pitch``, so the returned array is
    exactly antisymmetric: positions[m] == -positions[M-1-m].
    """
    if num_elements < 1:
        raise ValueError("num_elements must be >= 1")
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    m = np.arange(num_elements, dtype=float)
    return (m - (num_elements - 1) / 2.0) * pitch


def steering_vector(theta: float, num_elements: int, pitch_ratio: float = 0.5) -> np.ndarray:
    """Narrowband steering vector for a plane wave from angle ``theta``.

    Entry m is ``exp(-1j * m * 2*pi*pitch_ratio * sin(theta))``, i.e. the
    phase lag accumulated per element step, referenced to element 0.  At
    the default half-wave pitch the step reduces to ``-pi*sin(theta)``.

    Parameters
    ----------
    theta : float
        Steering angle in radians.
    num_elements : int
        Number of elements M.
    pitch_ratio : float
        Element pitch in wavelengths (pitch / lambda).

    Returns
    -------
    ndarray, shape (M,), complex
        Unit-modulus entries, first entry exactly 1.
    """
    if num_elements < 1:
        raise ValueError("num_elements must be >= 1")
    m = np.arange(num_elements, dtype=float)
    return np.exp(-1j * 2.0 * np.pi * pitch_ratio * np.sin(theta) * m)


def steering_matrix(angles: np.ndarray, num_elements: int, pitch_ratio: float = 0.5) -> np.ndarray:
    """Stack steering vectors for an angle grid into an (M, K) matrix."""
    angles = np.asarray(angles, dtype=float)
    if angles.ndim != 1 or angles.size == 0:
        raise ValueError("angles must be a nonempty 1-D array")
    m = np.arange(num_elements, dtype=float)
    return np.exp(-1j * 2.0 * np.pi * pitch_ratio * np.outer(m, np.sin(angles)))


def centered_steering_matrix(angles: np.ndarray, geom: ProbeGeometry) -> np.ndarray:
    """Steering matrix referenced to the physical (centered) element positions.

    Column k has entries ``exp(-1j * 2*pi * p_m * sin(theta_k) / lambda)``
    with p_m the centered element coordinate.  Differs from
    ``steering_matrix`` only by a unit phase per column; because the
    element layout is symmetric, ``Ac^H Ac`` is the real, even Dirichlet
    kernel that dynamically focused data actually exhibits, which is what
    the regularized-inverse forward model and the multibeam manifolds
    need.
    """
    angles = np.asarray(angles, dtype=float)
    p = geom.element_positions()
    return np.exp(-1j * 2.0 * np.pi / geom.wavelength * np.outer(p, np.sin(angles)))


def butler_matrix(num_beams: int) -> np.ndarray:
    """Orthogonal DFT-style beamforming matrix (Butler matrix).

    Row r (0-based) forms beam r with entries
    ``(1/sqrt(M)) * exp(1j * (2*pi/M) * (r + 1/2) * n)`` over elements n.
    The half-index offset straddles broadside with a symmetric beam pair;
    it cancels in B B^H, so the matrix is unitary for every M.
    """
    if num_beams < 1:
        raise ValueError("num_beams must be >= 1")
    m = num_beams
    r = np.arange(m, dtype=float)[:, None] + 0.5
    n = np.arange(m, dtype=float)[None, :]
    return np.exp(1j * (2.0 * np.pi / m) * r * n) / np.sqrt(m)


def low_order_beam_indices(num_beams: int, keep: int) -> np.ndarray:
    """Row indices of the ``keep`` lowest spatial-frequency Butler beams.

    Beam r has (wrapped) frequency index r + 1/2 - M*(r + 1/2 > M/2), so
    the lowest-order beams come in pairs straddling broadside: rows
    0, M-1, 1, M-2, ...
    """
    if not 1 <= keep <= num_beams:
        raise ValueError("keep must be in [1, num_beams]")
    offs = np.arange(num_beams, dtype=float) + 0.5
    offs = np.where(offs > num_beams / 2.0, offs - num_beams, offs)
    order = np.argsort(np.abs(offs), kind="stable")
    return np.sort(order[:keep])


def decimation_matrix(num_emissions: int, num_kept: int) -> np.ndarray:
    """0/1 selection matrix D of shape (K, P) keeping every (K/P)-th emission.

    Column i (0-based) selects row ``(K // P) * i``, so ``D.T @ D`` is the
    P x P identity exactly and ``D^H s`` picks P entries of s.

    Raises
    ------
    ValueError
        If P does not divide K.
    """
    k, p = num_emissions, num_kept
    if k < 1 or p < 1:
        raise ValueError("num_emissions and num_kept must be >= 1")
    if k % p != 0:
        raise ValueError(f"num_kept must divide num_emissions ({p} does not divide {k})")
    d = np.zeros((k, p))
    d[(k // p) * np.arange(p), np.arange(p)] = 1.0
    return d


def kept_emission_indices(num_emissions: int, num_kept: int) -> np.ndarray:
    """Row indices selected by ``decimation_matrix(K, P)``."""
    if num_emissions % num_kept != 0:
        raise ValueError("num_kept must divide num_emissions")
    return (num_emissions // num_kept) * np.arange(num_kept)


@dataclass(frozen=True)
class SteeringSet:
    """Angle grid with its steering matrix and optional transforms.

    ``A`` follows the element-0 reference (every column starts with an
    exact 1).  ``butler`` and ``decimation`` are attached when beamspace
    processing or emission reduction is in play.
    """

    angles: np.ndarray
    A: np.ndarray
    butler: np.ndarray | None = None
    decimation: np.ndarray | None = None
    pitch_ratio: float = field(default=0.5)

    @classmethod
    def build(
        cls,
        angles: np.ndarray,
        num_elements: int,
        pitch_ratio: float = 0.5,
        with_butler: bool = False,
        num_kept: int | None = None,
    ) -> "SteeringSet":
        angles = np.asarray(angles, dtype=float)
        a = steering_matrix(angles, num_elements, pitch_ratio)
        b = butler_matrix(num_elements) if with_butler else None
        d = decimation_matrix(angles.size, num_kept) if num_kept is not None else None
        return cls(angles=angles, A=a, butler=b, decimation=d, pitch_ratio=pitch_ratio)

    @property
    def num_elements(self) -> int:
        return self.A.shape[0]

    @property
    def num_angles(self) -> int:
        return self.A.shape[1]
