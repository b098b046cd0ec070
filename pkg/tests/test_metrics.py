"""Region statistics: CNR, speckle SNR and resolution gain."""

import warnings

import numpy as np
import pytest
from scipy.signal import fftconvolve

from usbeam.classic import RfImage
from usbeam.metrics import (
    RegionSpec,
    cnr,
    region_mask,
    region_values,
    resolution_gain,
    snr,
)

RAYLEIGH_SNR = np.sqrt(np.pi / (4.0 - np.pi))


def _linear_image(data, positions=None, depths=None, kind="envelope"):
    k, n = data.shape
    if positions is None:
        positions = np.arange(k) * 1e-3
    if depths is None:
        depths = 10e-3 + np.arange(n) * 1e-3
    return RfImage(
        data=data,
        kind=kind,
        scan_kind="linear",
        scanline_positions=positions,
        depths=depths,
    )


def _direct_mainlobe_area(env, threshold):
    """Brute-force 2-D autocorrelation lag count."""
    e = env - env.mean()
    k, n = e.shape
    acf = np.zeros((2 * k - 1, 2 * n - 1))
    for di in range(-(k - 1), k):
        for dj in range(-(n - 1), n):
            total = 0.0
            for i in range(k):
                for j in range(n):
                    ii, jj = i + di, j + dj
                    if 0 <= ii < k and 0 <= jj < n:
                        total += e[i, j] * e[ii, jj]
            acf[di + k - 1, dj + n - 1] = total
    return int(np.count_nonzero(acf > threshold * acf.max()))


class TestRegionSpec:
    def test_rejects_unknown_shape(self):
        with pytest.raises(ValueError):
            RegionSpec(shape="triangle", center=(0.0, 0.0), radius=1.0)

    def test_disc_needs_positive_radius(self):
        with pytest.raises(ValueError):
            RegionSpec(shape="disc", center=(0.0, 0.0))
        with pytest.raises(ValueError):
            RegionSpec(shape="disc", center=(0.0, 0.0), radius=-1e-3)

    def test_rectangle_needs_positive_half_extents(self):
        with pytest.raises(ValueError):
            RegionSpec(shape="rectangle", center=(0.0, 0.0))
        with pytest.raises(ValueError):
            RegionSpec(
                shape="rectangle", center=(0.0, 0.0), half_extents=(1e-3, 0.0)
            )

    def test_disc_membership(self):
        spec = RegionSpec(shape="disc", center=(1.0, 2.0), radius=1.0)
        x = np.array([1.0, 2.0, 1.0, 2.1])
        z = np.array([2.0, 2.0, 3.0, 2.0])
        # boundary pixels count as inside
        assert np.array_equal(spec.contains(x, z), [True, True, True, False])

    def test_rectangle_membership(self):
        spec = RegionSpec(
            shape="rectangle", center=(0.0, 0.0), half_extents=(1.0, 2.0)
        )
        x = np.array([1.0, -1.0, 1.1, 0.0])
        z = np.array([2.0, -2.0, 0.0, 2.1])
        assert np.array_equal(spec.contains(x, z), [True, True, False, False])


class TestRegionMask:
    def test_sector_disc_selects_broadside_beam(self):
        img = RfImage(
            data=np.zeros((3, 3)),
            kind="envelope",
            scan_kind="sector",
            scanline_positions=np.deg2rad([-30.0, 0.0, 30.0]),
            depths=np.array([0.029, 0.030, 0.031]),
        )
        spec = RegionSpec(shape="disc", center=(0.0, 0.030), radius=1.5e-3)
        mask = region_mask(img, spec)
        expected = np.zeros((3, 3), dtype=bool)
        expected[1, :] = True  # off-axis beams sit 15 mm away laterally
        assert np.array_equal(mask, expected)

    def test_linear_rectangle_block(self):
        img = _linear_image(np.zeros((4, 3)))
        spec = RegionSpec(
            shape="rectangle",
            center=(1.5e-3, 10.5e-3),
            half_extents=(0.6e-3, 0.6e-3),
        )
        mask = region_mask(img, spec)
        expected = np.zeros((4, 3), dtype=bool)
        expected[1:3, 0:2] = True
        assert np.array_equal(mask, expected)


class TestRegionValues:
    @pytest.mark.filterwarnings("ignore:region covers only")
    def test_extracts_masked_pixels(self):
        data = np.arange(8.0).reshape(4, 2)
        img = _linear_image(data)
        spec = RegionSpec(
            shape="rectangle",
            center=(0.5e-3, 10e-3),
            half_extents=(0.6e-3, 0.1e-3),
        )
        vals = region_values(img, spec)
        assert np.array_equal(np.sort(vals), [0.0, 2.0])

    def test_requires_envelope_kind(self):
        img = _linear_image(np.zeros((3, 3), dtype=complex), kind="rf")
        spec = RegionSpec(shape="disc", center=(0.0, 10e-3), radius=5e-3)
        with pytest.raises(ValueError):
            region_values(img, spec)

    def test_empty_region_raises(self):
        img = _linear_image(np.ones((3, 3)))
        spec = RegionSpec(shape="disc", center=(1.0, 1.0), radius=1e-4)
        with pytest.raises(ValueError):
            region_values(img, spec)

    def test_small_region_warns(self):
        img = _linear_image(np.ones((30, 30)))
        small = RegionSpec(shape="disc", center=(5e-3, 15e-3), radius=1.1e-3)
        with pytest.warns(UserWarning, match="region covers only"):
            region_values(img, small)

    def test_large_region_does_not_warn(self):
        img = _linear_image(np.ones((30, 30)))
        big = RegionSpec(
            shape="rectangle",
            center=(14.5e-3, 24.5e-3),
            half_extents=(20e-3, 20e-3),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            vals = region_values(img, big)
        assert vals.size == 30 * 30


@pytest.mark.filterwarnings("ignore:region covers only")
class TestCnr:
    def _two_region_image(self):
        data = np.zeros((4, 2))
        data[0] = [1.0, 1.0]
        data[1] = [3.0, 3.0]
        data[2, 0] = 5.0
        data[3, 0] = 7.0
        img = _linear_image(data)
        r1 = RegionSpec(
            shape="rectangle",
            center=(0.5e-3, 10.5e-3),
            half_extents=(0.6e-3, 0.6e-3),
        )
        r2 = RegionSpec(
            shape="rectangle",
            center=(2.5e-3, 10e-3),
            half_extents=(0.6e-3, 0.1e-3),
        )
        return img, r1, r2

    def test_hand_computed_value(self):
        img, r1, r2 = self._two_region_image()
        # means 2 and 6, population variances 1 and 1
        assert cnr(img, r1, r2) == pytest.approx(4.0 / np.sqrt(2.0), abs=1e-12)

    def test_symmetric_in_region_order(self):
        img, r1, r2 = self._two_region_image()
        assert cnr(img, r1, r2) == pytest.approx(cnr(img, r2, r1), abs=1e-15)

    def test_invariant_under_global_scaling(self):
        img, r1, r2 = self._two_region_image()
        scaled = _linear_image(img.data * 17.0)
        assert cnr(scaled, r1, r2) == pytest.approx(cnr(img, r1, r2), rel=1e-12)

    def test_constant_regions_raise(self):
        img = _linear_image(np.ones((4, 2)))
        _, r1, r2 = self._two_region_image()
        with pytest.raises(ValueError):
            cnr(img, r1, r2)

    def test_contrast_free_speckle_scores_near_zero(self):
        rng = np.random.default_rng(21)
        img = _linear_image(rng.rayleigh(size=(60, 60)))
        r1 = RegionSpec(shape="disc", center=(15e-3, 25e-3), radius=8e-3)
        r2 = RegionSpec(shape="disc", center=(45e-3, 45e-3), radius=8e-3)
        assert cnr(img, r1, r2) < 0.2


@pytest.mark.filterwarnings("ignore:region covers only")
class TestSnr:
    def test_hand_computed_value(self):
        data = np.array([[3.0], [4.0], [5.0]])
        img = _linear_image(data)
        spec = RegionSpec(
            shape="rectangle", center=(1e-3, 10e-3), half_extents=(2e-3, 1e-3)
        )
        # mean 4, population std sqrt(2/3)
        assert snr(img, spec) == pytest.approx(4.0 / np.sqrt(2.0 / 3.0), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(8)
        data = rng.rayleigh(size=(20, 20))
        spec = RegionSpec(
            shape="rectangle", center=(9.5e-3, 19.5e-3), half_extents=(1.0, 1.0)
        )
        a = snr(_linear_image(data), spec)
        b = snr(_linear_image(data * 0.003), spec)
        assert a == pytest.approx(b, rel=1e-12)

    def test_rayleigh_field_matches_theory(self):
        # fully developed speckle envelope: mean/std = sqrt(pi/(4-pi)) ~ 1.91
        rng = np.random.default_rng(1234)
        data = rng.rayleigh(size=(320, 320))
        img = _linear_image(data)
        spec = RegionSpec(
            shape="rectangle",
            center=(159.5e-3, 10e-3 + 159.5e-3),
            half_extents=(1.0, 1.0),
        )
        assert snr(img, spec) == pytest.approx(RAYLEIGH_SNR, abs=0.05)

    def test_constant_region_raises(self):
        img = _linear_image(np.full((4, 4), 2.5))
        spec = RegionSpec(
            shape="rectangle", center=(1.5e-3, 11e-3), half_extents=(1.0, 1.0)
        )
        with pytest.raises(ValueError):
            snr(img, spec)


class TestResolutionGain:
    def _speckle(self, seed, shape=(48, 48)):
        rng = np.random.default_rng(seed)
        return rng.rayleigh(size=shape)

    def test_self_gain_is_exactly_one(self):
        img = _linear_image(self._speckle(3))
        assert resolution_gain(img, img) == 1.0

    def test_matches_direct_autocorrelation_count(self):
        ref = _linear_image(self._speckle(5, shape=(9, 9)))
        blurred = fftconvolve(ref.data, np.ones((3, 3)) / 9.0, mode="same")
        test = _linear_image(blurred)
        threshold = 10.0 ** (-3.0 / 20.0)
        expected = _direct_mainlobe_area(
            ref.data, threshold
        ) / _direct_mainlobe_area(test.data, threshold)
        assert resolution_gain(ref, test) == pytest.approx(expected, rel=1e-12)

    def test_sharper_test_image_scores_above_one(self):
        sharp = self._speckle(7)
        blurred = fftconvolve(sharp, np.ones((5, 5)) / 25.0, mode="same")
        gain = resolution_gain(_linear_image(blurred), _linear_image(sharp))
        assert gain > 1.0
        inverse = resolution_gain(_linear_image(sharp), _linear_image(blurred))
        assert inverse < 1.0
        assert inverse == pytest.approx(1.0 / gain, rel=1e-12)

    def test_requires_envelope_kind(self):
        env = _linear_image(self._speckle(9))
        rf = _linear_image(
            self._speckle(9).astype(complex), kind="rf"
        )
        with pytest.raises(ValueError):
            resolution_gain(rf, env)
        with pytest.raises(ValueError):
            resolution_gain(env, rf)

    def test_requires_matching_grids(self):
        a = _linear_image(self._speckle(2, shape=(10, 10)))
        b = _linear_image(self._speckle(2, shape=(12, 10)))
        with pytest.raises(ValueError):
            resolution_gain(a, b)
