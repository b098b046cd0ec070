"""Shared fixtures: a small probe and a one-scatterer simulation reused across modules."""
import numpy as np
import pytest

from usbeam.acquisition import ScanPlan, analytic_signal, compensate_delays
from usbeam.geometry import ProbeGeometry
from usbeam.phantom import ExcitationPulse, Phantom, simulate_raw


@pytest.fixture(scope="session")
def tiny_geom():
    return ProbeGeometry(
        num_elements=16,
        pitch=256e-6,
        center_frequency=3e6,
        sampling_frequency=40e6,
        sound_speed=1540.0,
    )


@pytest.fixture(scope="session")
def point_scan():
    angles = np.deg2rad(np.linspace(-10.0, 10.0, 21))
    return ScanPlan(
        kind="sector",
        positions=angles,
        depth_start=0.025,
        depth_end=0.035,
        focus_depth=0.030,
    )


@pytest.fixture(scope="session")
def point_phantom_single():
    return Phantom(positions=np.array([[0.0, 0.030]]), amplitudes=np.array([1.0]))


@pytest.fixture(scope="session")
def point_cube(tiny_geom, point_scan, point_phantom_single):
    """Noise-free raw cube of one on-axis scatterer at the focus depth."""
    pulse = ExcitationPulse.create(3e6, 40e6, cycles=2)
    return simulate_raw(point_phantom_single, tiny_geom, pulse, point_scan)


@pytest.fixture(scope="session")
def focused_point_cube(tiny_geom, point_scan, point_cube):
    """The same cube after analytic conversion and delay compensation."""
    return compensate_delays(analytic_signal(point_cube), tiny_geom, point_scan)
