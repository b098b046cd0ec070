"""Synthetic scatterer phantoms and a linear pulse-echo RF simulator.

The simulator superposes point-scatterer echoes: for each emission the
echo of scatterer s reaches channel m at
``tau = (|origin - s| + |p_m - s|) / c`` and contributes
``amplitude * pulse(t - tau)``, with the pulse evaluated analytically at
the exact offsets (no pre-sampled pulse shifting).  Transmit focusing is
reduced to that single geometric time of flight per emission, optionally
shaped by a Gaussian angular directivity; there is no attenuation and no
element-wise transmit aperture synthesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._parallel import thread_map
from .acquisition import RawDataCube, ScanPlan
from .geometry import ProbeGeometry

__all__ = [
    "ExcitationPulse",
    "Scatterer",
    "Phantom",
    "point_reflector_phantom",
    "cyst_phantom",
    "simulate_raw",
]

# Scatterers are synthesized in fixed-size chunks so peak memory stays
# bounded; the chunk size must not depend on the thread count or the
# assembled cube would not be reproducible.
_CHUNK = 4096


@dataclass(frozen=True)
class ExcitationPulse:
    """Windowed sinusoidal excitation, support centered on t = 0.

    ``eval`` is the continuous-time definition used by the simulator;
    ``samples`` is the same waveform on the fs grid for inspection and
    serialization.
    """

    cycles: float
    center_frequency: float
    sampling_frequency: float
    samples: np.ndarray = field(repr=False)

    @classmethod
    def create(
        cls, center_frequency: float, sampling_frequency: float, cycles: float = 2.0
    ) -> "ExcitationPulse":
        if center_frequency <= 0 or sampling_frequency <= 0 or cycles <= 0:
            raise ValueError("pulse parameters must be positive")
        duration = cycles / center_frequency
        n = int(round(duration * sampling_frequency)) + 1
        t = (np.arange(n) - (n - 1) / 2.0) / sampling_frequency
        pulse = cls(
            cycles=cycles,
            center_frequency=center_frequency,
            sampling_frequency=sampling_frequency,
            samples=np.empty(0),
        )
        object.__setattr__(pulse, "samples", pulse.eval(t))
        return pulse

    @property
    def duration(self) -> float:
        return self.cycles / self.center_frequency

    def eval(self, t: np.ndarray) -> np.ndarray:
        """Pulse value at arbitrary times (seconds).

        ``sin(2 pi f0 t)`` under a raised-cosine (Hann) window spanning
        ``[-duration/2, +duration/2]``; identically zero outside.  The
        window peaks at t = 0, so the envelope maximum marks the arrival
        time.
        """
        t = np.asarray(t, dtype=float)
        half = self.duration / 2.0
        # Clamping to the support makes the window hit exactly zero at the
        # edges, which doubles as the out-of-support mask.
        tc = np.clip(t, -half, half)
        window = np.cos(np.pi * tc / self.duration) ** 2
        return np.sin(2.0 * np.pi * self.center_frequency * tc) * window


@dataclass(frozen=True)
class Scatterer:
    x: float
    z: float
    amplitude: float


@dataclass(frozen=True)
class Phantom:
    """Point-scatterer collection: positions (S, 2) as (x, z), amplitudes (S,)."""

    positions: np.ndarray
    amplitudes: np.ndarray
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        amp = np.asarray(self.amplitudes, dtype=float).ravel()
        if pos.shape != (amp.size, 2):
            raise ValueError("positions must be (S, 2) matching S amplitudes")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def num_scatterers(self) -> int:
        return self.amplitudes.size

    def scatterers(self) -> list[Scatterer]:
        return [
            Scatterer(x=float(p[0]), z=float(p[1]), amplitude=float(a))
            for p, a in zip(self.positions, self.amplitudes)
        ]


def point_reflector_phantom(
    pair_separation: float = 4e-3,
    pair_depths: tuple[float, float] = (63.5e-3, 67.5e-3),
    center_depth: float = 65.5e-3,
) -> Phantom:
    """Five equal point reflectors for resolution studies.

    Two laterally separated pairs at two depths plus a single centered
    reflector between them.  All amplitudes are 1.
    """
    half = pair_separation / 2.0
    positions = np.array(
        [
            [-half, pair_depths[0]],
            [+half, pair_depths[0]],
            [0.0, center_depth],
            [-half, pair_depths[1]],
            [+half, pair_depths[1]],
        ]
    )
    return Phantom(
        positions=positions,
        amplitudes=np.ones(5),
        seed=0,
        name="point_reflectors",
    )


def cyst_phantom(
    radius: float,
    depth: float,
    n_scatterers: int,
    seed: int,
    lateral_halfwidth: float = 20e-3,
    axial_halfwidth: float = 15e-3,
    center_lateral: float = 0.0,
) -> Phantom:
    """Anechoic cyst in speckle: uniform scatterer positions, Gaussian amplitudes.

    ``n_scatterers`` positions are drawn uniformly over the rectangle
    ``|x| <= lateral_halfwidth``, ``depth +- axial_halfwidth``; amplitudes
    are standard normal, forced to exactly zero inside the cyst disc of
    the given radius centered at (center_lateral, depth).  The count
    includes the zero-amplitude interior scatterers.
    """
    if radius <= 0 or depth <= 0 or n_scatterers < 1:
        raise ValueError("radius, depth and n_scatterers must be positive")
    if axial_halfwidth <= radius or lateral_halfwidth - abs(center_lateral) <= radius:
        raise ValueError("scatterer region must contain the cyst")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-lateral_halfwidth, lateral_halfwidth, n_scatterers)
    z = rng.uniform(depth - axial_halfwidth, depth + axial_halfwidth, n_scatterers)
    amp = rng.standard_normal(n_scatterers)
    inside = (x - center_lateral) ** 2 + (z - depth) ** 2 <= radius**2
    amp[inside] = 0.0
    return Phantom(
        positions=np.stack([x, z], axis=1),
        amplitudes=amp,
        seed=seed,
        name="cyst",
    )


def simulate_raw(
    phantom: Phantom,
    geom: ProbeGeometry,
    pulse: ExcitationPulse,
    scan: ScanPlan,
    noise_snr_db: float | None = None,
    seed: int = 0,
    tx_beam_sigma: float | None = None,
    threads: int | None = None,
) -> RawDataCube:
    """Synthesize the real RF channel cube for a full emission sequence.

    Parameters
    ----------
    noise_snr_db : float, optional
        When set, adds white Gaussian noise so that
        ``10*log10(mean(clean^2) / noise_power)`` equals this value.
    seed : int
        Noise generator seed; the clean cube itself is deterministic.
    tx_beam_sigma : float, optional
        Gaussian transmit directivity width in radians.  Each scatterer's
        contribution to emission k is weighted by
        ``exp(-0.5 * ((phi - theta_k)/sigma)^2)`` with phi its angle from
        the beam origin.  None disables transmit shaping.
    threads : int, optional
        Worker cap for the per-emission synthesis loop.  The output is
        bitwise independent of this value.

    Returns
    -------
    RawDataCube
        Real float64 data of shape (M, N, K).

    Notes
    -----
    A scatterer whose echo lies entirely outside the recorded depth
    window contributes nothing (silently excluded).  The cube is linear
    in scatterer amplitudes.
    """
    m = geom.num_elements
    fs = geom.sampling_frequency
    c = geom.sound_speed
    n = scan.num_samples(fs, c)
    t0 = scan.t0(fs, c)
    k = scan.num_emissions

    elem_x = geom.element_positions()
    origins = scan.beam_origins()
    beam_theta = (
        scan.positions if scan.kind == "sector" else np.zeros(k)
    )

    half = pulse.duration / 2.0
    width = int(np.ceil(pulse.duration * fs)) + 2

    pos = phantom.positions
    amps = phantom.amplitudes
    out = np.zeros((m, n, k))

    def one_emission(ki: int) -> None:
        ox, oz = origins[ki]
        dx = pos[:, 0] - ox
        dz = pos[:, 1] - oz
        r_tx = np.hypot(dx, dz)
        amp_k = amps
        if tx_beam_sigma is not None:
            phi = np.arctan2(dx, dz)
            amp_k = amps * np.exp(-0.5 * ((phi - beam_theta[ki]) / tx_beam_sigma) ** 2)
        live = amp_k != 0.0
        if not np.any(live):
            return
        a = amp_k[live]
        sx, sz = pos[live, 0], pos[live, 1]
        rt = r_tx[live]
        acc = np.zeros(m * n)
        rows = np.arange(m)[:, None, None]
        offsets = np.arange(width)[None, None, :]
        for lo in range(0, a.size, _CHUNK):
            hi = min(lo + _CHUNK, a.size)
            rx = np.sqrt((sx[None, lo:hi] - elem_x[:, None]) ** 2 + sz[None, lo:hi] ** 2)
            tau = (rt[None, lo:hi] + rx) / c  # (M, S)
            first = np.ceil((tau - half - t0) * fs).astype(np.int64)
            idx = first[:, :, None] + offsets
            t_rel = t0 + idx / fs - tau[:, :, None]
            vals = pulse.eval(t_rel) * a[None, lo:hi, None]
            flat = (rows * n + idx).ravel()
            ok = (idx >= 0) & (idx < n)
            acc += np.bincount(
                flat[ok.ravel()], weights=vals.ravel()[ok.ravel()], minlength=m * n
            )
        out[:, :, ki] = acc.reshape(m, n)

    thread_map(one_emission, range(k), threads)

    if noise_snr_db is not None:
        signal_power = np.mean(out**2)
        if signal_power > 0:
            sigma = np.sqrt(signal_power * 10.0 ** (-noise_snr_db / 10.0))
            rng = np.random.default_rng(seed)
            out += rng.normal(0.0, sigma, out.shape)

    return RawDataCube(data=out, fs=fs, t0=t0)
