"""Adaptive beamformer tests.

The batched image drivers are pinned against per-pixel reference
implementations written here with plain loops and explicit inverses, so
driver and reference never share code paths.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import LinAlgError

from usbeam.adaptive import (
    SolverWarning,
    bs_capon_beamform,
    bs_capon_sample,
    estimate_covariance,
    iaa_beamform,
    iaa_scanline,
    multibeam_capon_beamform,
    multibeam_capon_scanline,
    mv_beamform,
    mv_weights,
)
from usbeam.classic import das_beamform
from usbeam.geometry import butler_matrix, centered_steering_matrix, low_order_beam_indices
from usbeam.imaging import envelope


def _random_line(seed, m=8, n=64):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))


def _random_pd(seed, m=6, ridge=0.05):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(m, 3 * m)) + 1j * rng.normal(size=(m, 3 * m))
    return x @ x.conj().T / (3 * m) + ridge * np.eye(m)


def _cov_reference(line, depth_index, sub, half, loading):
    """Brute-force covariance: loop every subarray and window sample."""
    m, n_samples = line.shape
    lo = max(0, depth_index - half)
    hi = min(n_samples - 1, depth_index + half)
    acc = np.zeros((sub, sub), dtype=complex)
    count = 0
    for g in range(m - sub + 1):
        for t in range(lo, hi + 1):
            snap = line[g : g + sub, t]
            acc += np.outer(snap, snap.conj())
            count += 1
    r = acc / count
    r = (r + r.conj().T) / 2
    if loading > 0:
        r = r + (loading * np.trace(r).real / sub) * np.eye(sub)
    return r


class TestEstimateCovariance:
    def test_matches_brute_force(self):
        line = _random_line(0)
        for sub, half, load in [(8, 0, 0.0), (3, 2, 0.0), (5, 4, 0.1), (1, 1, 0.0)]:
            est = estimate_covariance(line, 10, sub, half_window=half, loading=load)
            ref = _cov_reference(line, 10, sub, half, load)
            assert est.R.shape == (sub, sub)
            assert np.allclose(est.R, ref, rtol=1e-12, atol=1e-13)

    def test_window_clips_at_edges(self):
        line = _random_line(1)
        first = estimate_covariance(line, 0, 4, half_window=3)
        assert np.allclose(first.R, _cov_reference(line, 0, 4, 3, 0.0))
        last = estimate_covariance(line, 63, 4, half_window=3)
        assert np.allclose(last.R, _cov_reference(line, 63, 4, 3, 0.0))

    def test_exactly_hermitian(self):
        est = estimate_covariance(_random_line(2), 5, 6, half_window=2)
        assert np.array_equal(est.R, est.R.conj().T)

    def test_positive_semidefinite(self):
        est = estimate_covariance(_random_line(3), 20, 5, half_window=1)
        eigs = np.linalg.eigvalsh(est.R)
        assert eigs.min() >= -1e-12 * eigs.max()

    def test_loading_raises_smallest_eigenvalue(self):
        line = _random_line(4)
        # single snapshot, rank one: loading is what makes it invertible
        bare = estimate_covariance(line, 7, 8, half_window=0, loading=0.0)
        loaded = estimate_covariance(line, 7, 8, half_window=0, loading=0.2)
        shift = 0.2 * np.trace(bare.R).real / 8
        assert np.allclose(loaded.R, bare.R + shift * np.eye(8), rtol=1e-12)

    def test_records_parameters(self):
        est = estimate_covariance(_random_line(5), 3, 4, half_window=2, loading=0.01)
        assert (est.subaperture, est.half_window, est.loading) == (4, 2, 0.01)

    def test_rejects_bad_arguments(self):
        line = _random_line(6)
        with pytest.raises(ValueError):
            estimate_covariance(line[0], 0, 1)
        with pytest.raises(ValueError):
            estimate_covariance(line, 0, 0)
        with pytest.raises(ValueError):
            estimate_covariance(line, 0, 9)
        with pytest.raises(ValueError):
            estimate_covariance(line, 0, 4, half_window=-1)
        with pytest.raises(ValueError):
            estimate_covariance(line, 0, 4, loading=-0.1)
        with pytest.raises(IndexError):
            estimate_covariance(line, 64, 4)


class TestMvWeights:
    def test_matches_explicit_inverse(self):
        for seed in range(5):
            r = _random_pd(seed)
            a = np.exp(1j * np.linspace(0, 2.0, 6))
            w = mv_weights(r, a)
            ri = np.linalg.inv(r)
            expected = ri @ a / np.real(a.conj() @ ri @ a)
            assert np.allclose(w, expected, rtol=1e-10, atol=1e-12)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_distortionless_property(self, seed):
        r = _random_pd(seed)
        rng = np.random.default_rng(seed + 1)
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, 6))
        w = mv_weights(r, a)
        assert abs(np.vdot(w, a) - 1.0) < 1e-10

    def test_minimizes_output_power(self):
        # any competitor satisfying the same constraint has >= output power
        r = _random_pd(11)
        a = np.exp(1j * np.linspace(-1.0, 1.5, 6))
        w = mv_weights(r, a)
        base = np.real(w.conj() @ r @ w)
        rng = np.random.default_rng(12)
        for _ in range(20):
            d = rng.normal(size=6) + 1j * rng.normal(size=6)
            d -= a * np.vdot(a, d) / np.vdot(a, a)  # keep d^H a = 0
            v = w + d
            assert np.real(v.conj() @ r @ v) >= base - 1e-12

    def test_identity_covariance_reduces_to_das(self):
        a = np.exp(1j * np.linspace(0.0, 3.0, 8))
        w = mv_weights(np.eye(8), a)
        assert np.allclose(w, a / 8.0, rtol=1e-12)

    def test_scale_invariant_in_covariance(self):
        r = _random_pd(13)
        a = np.exp(1j * np.linspace(0.3, 2.1, 6))
        assert np.allclose(mv_weights(r, a), mv_weights(37.0 * r, a), rtol=1e-10)

    def test_singular_matrix_raises(self):
        with pytest.raises(LinAlgError):
            mv_weights(np.zeros((4, 4)), np.ones(4))


class TestBsCaponSample:
    def test_equals_element_space_with_unitary_butler(self):
        line = _random_line(20, m=8, n=48)
        b = butler_matrix(8)
        for n in (0, 13, 47):
            bs = bs_capon_sample(line, n, b, half_window=4, loading=0.05)
            est = estimate_covariance(line, n, 8, half_window=4, loading=0.05)
            w = mv_weights(est.R, np.ones(8))
            es = complex(np.vdot(w, line[:, n]))
            assert abs(bs - es) < 1e-8 * max(1.0, abs(es))

    def test_constraint_norm_preserved(self):
        b = butler_matrix(16)
        assert abs(np.linalg.norm(b @ np.ones(16)) - 4.0) < 1e-12

    def test_truncated_beamspace_runs(self):
        line = _random_line(21, m=8, n=32)
        b = butler_matrix(8)[low_order_beam_indices(8, 4)]
        out = bs_capon_sample(line, 10, b, half_window=3, loading=0.05)
        assert isinstance(out, complex) and np.isfinite(out.real)

    def test_rejects_mismatched_transform(self):
        with pytest.raises(ValueError):
            bs_capon_sample(_random_line(22), 0, butler_matrix(4))


class TestMultibeamCaponScanline:
    def test_identity_covariance_is_matched_filter(self):
        rng = np.random.default_rng(30)
        m, k = 8, 12
        y = rng.normal(size=(m, k)) + 1j * rng.normal(size=(m, k))
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, (m, k)))
        out = multibeam_capon_scanline(y, a, cov=np.eye(m))
        expected = np.einsum("mk,mk->k", a.conj(), y) / m
        assert np.allclose(out, expected, rtol=1e-12)

    def test_recovers_single_beam_amplitude(self):
        # all snapshots carry one direction's signature: that beam reads
        # the amplitude back exactly, Capon weights cancel in the ratio
        geom_a = np.exp(
            1j * np.pi * np.sin(np.linspace(-0.4, 0.4, 9))[None, :] * np.arange(8)[:, None]
        )
        s = 2.3 - 1.1j
        y = np.tile(s * geom_a[:, [4]], (1, 9))
        out = multibeam_capon_scanline(y, geom_a, loading=0.01)
        assert abs(out[4] - s) < 1e-8
        assert np.all(np.abs(out[[0, 8]]) < abs(s))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            multibeam_capon_scanline(np.zeros((4, 3), complex), np.zeros((4, 5), complex))

    def test_zero_snapshots_raise_singular(self):
        a = np.exp(1j * np.zeros((4, 3)))
        with pytest.raises(LinAlgError):
            multibeam_capon_scanline(np.zeros((4, 3), complex), a, loading=0.5)


def _iaa_reference(cols, a, iterations):
    """Direct transcription of the power-refinement recursion."""
    m, k = a.shape
    x = np.array([a[:, i].conj() @ cols[:, i] for i in range(k)]) / m
    p = np.abs(x) ** 2
    for _ in range(iterations):
        r = (a * p[None, :]) @ a.conj().T
        r = (r + r.conj().T) / 2
        ri = np.linalg.inv(r)
        for i in range(k):
            ai = a[:, i]
            x[i] = (ai.conj() @ ri @ cols[:, i]) / np.real(ai.conj() @ ri @ ai)
        p = np.abs(x) ** 2
    return p


class TestIaaScanline:
    def test_matches_reference_recursion(self):
        rng = np.random.default_rng(40)
        m, k = 6, 14
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, (m, k)))
        y = rng.normal(size=(m, k)) + 1j * rng.normal(size=(m, k))
        ours = iaa_scanline(y, a, iterations=6)
        ref = _iaa_reference(y, a, 6)
        assert np.allclose(ours, ref, rtol=1e-8)

    def test_zero_iterations_is_matched_filter_power(self):
        rng = np.random.default_rng(41)
        m, k = 5, 9
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, (m, k)))
        y = rng.normal(size=m) + 1j * rng.normal(size=m)
        out = iaa_scanline(y, a, iterations=0)
        expected = np.abs(a.conj().T @ y / m) ** 2
        assert np.allclose(out, expected, rtol=1e-12)

    def test_zero_input_gives_exact_zeros(self):
        a = np.exp(1j * np.linspace(0, 1, 12)).reshape(4, 3)
        assert np.array_equal(iaa_scanline(np.zeros(4, complex), a), np.zeros(3))

    def test_single_source_concentrates_power(self):
        angles = np.linspace(-0.5, 0.5, 21)
        a = np.exp(1j * np.pi * np.sin(angles)[None, :] * np.arange(10)[:, None])
        y = 1.7 * a[:, 10]
        # a lone source drives the model covariance to rank one; the
        # documented fallback is a warning plus minimal loading
        with pytest.warns(SolverWarning):
            p = iaa_scanline(y, a, iterations=12)
        assert p.argmax() == 10
        assert abs(np.sqrt(p[10]) - 1.7) < 0.05
        side = np.concatenate([p[:8], p[13:]])
        assert side.max() < 1e-2 * p[10]

    def test_broadcast_equals_tiled_snapshot(self):
        rng = np.random.default_rng(42)
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, (5, 8)))
        y = rng.normal(size=5) + 1j * rng.normal(size=5)
        tiled = np.tile(y[:, None], (1, 8))
        assert np.array_equal(iaa_scanline(y, a, 4), iaa_scanline(tiled, a, 4))

    def test_rejects_bad_shapes(self):
        a = np.exp(1j * np.zeros((4, 6)))
        with pytest.raises(ValueError):
            iaa_scanline(np.zeros(3, complex), a)
        with pytest.raises(ValueError):
            iaa_scanline(np.zeros((4, 5), complex), a)
        with pytest.raises(ValueError):
            iaa_scanline(np.zeros(4, complex), np.zeros(4, complex))
        with pytest.raises(ValueError):
            iaa_scanline(np.zeros(4, complex), a, iterations=-1)


class TestMvBeamform:
    def test_matches_per_pixel_reference(self, focused_point_cube, tiny_geom, point_scan):
        img = mv_beamform(focused_point_cube, tiny_geom, point_scan,
                          subaperture=2, temporal_window=10, loading_delta=0.05)
        sub, half = 2, 5
        for k in (0, 10, 17):
            line = focused_point_cube.data[:, :, k]
            for n in (0, 260, 519):
                est = estimate_covariance(line, n, sub, half_window=half, loading=0.05)
                w = mv_weights(est.R, np.ones(sub))
                groups = np.stack([line[g : g + sub, n] for g in range(16 - sub + 1)])
                ref = np.vdot(w, groups.mean(axis=0))
                assert abs(img.data[k, n] - ref) <= 1e-10 * max(1.0, abs(ref))

    def test_default_parameters_recorded(self, focused_point_cube, tiny_geom, point_scan):
        img = mv_beamform(focused_point_cube, tiny_geom, point_scan)
        assert img.provenance["method"] == "mv"
        assert img.provenance["subaperture"] == 2  # M // 8
        assert img.provenance["temporal_window"] == 10
        assert img.provenance["loading_delta"] == pytest.approx(1.0 / 20.0)

    def test_requires_compensated_cube(self, point_cube, tiny_geom, point_scan):
        with pytest.raises(ValueError):
            mv_beamform(point_cube, tiny_geom, point_scan)

    def test_thread_count_does_not_change_image(self, focused_point_cube, tiny_geom, point_scan):
        one = mv_beamform(focused_point_cube, tiny_geom, point_scan, threads=1)
        four = mv_beamform(focused_point_cube, tiny_geom, point_scan, threads=4)
        assert np.array_equal(one.data, four.data)

    def test_no_wider_than_das_on_point_target(self, focused_point_cube, tiny_geom, point_scan):
        das = das_beamform(focused_point_cube, tiny_geom, point_scan, apodization="none")
        mv = mv_beamform(focused_point_cube, tiny_geom, point_scan)

        def width_at_peak(img):
            env = envelope(img).data
            k, n = np.unravel_index(env.argmax(), env.shape)
            lateral = env[:, n]
            return np.count_nonzero(lateral >= 0.5 * lateral[k])

        assert width_at_peak(mv) <= width_at_peak(das)

    def test_rejects_bad_subaperture(self, focused_point_cube, tiny_geom, point_scan):
        with pytest.raises(ValueError):
            mv_beamform(focused_point_cube, tiny_geom, point_scan, subaperture=17)


class TestBsCaponBeamform:
    def test_full_beamspace_equals_element_space(self, focused_point_cube, tiny_geom, point_scan):
        # unitary transform: same covariance spectrum, same constraint image
        bs = bs_capon_beamform(focused_point_cube, tiny_geom, point_scan,
                               temporal_window=10, loading_delta=0.01)
        es = mv_beamform(focused_point_cube, tiny_geom, point_scan, subaperture=16,
                         temporal_window=10, loading_delta=0.01)
        scale = np.abs(es.data).max()
        assert np.allclose(bs.data, es.data, atol=1e-6 * scale)

    def test_pixels_match_sample_function(self, focused_point_cube, tiny_geom, point_scan):
        img = bs_capon_beamform(focused_point_cube, tiny_geom, point_scan,
                                temporal_window=8, loading_delta=0.02)
        b = butler_matrix(16)
        for k, n in [(3, 100), (10, 260), (20, 400)]:
            ref = bs_capon_sample(focused_point_cube.data[:, :, k], n, b,
                                  half_window=4, loading=0.02)
            assert abs(img.data[k, n] - ref) <= 1e-10 * max(1.0, abs(ref))

    def test_reduced_dimension_runs_and_differs(self, focused_point_cube, tiny_geom, point_scan):
        full = bs_capon_beamform(focused_point_cube, tiny_geom, point_scan)
        low = bs_capon_beamform(focused_point_cube, tiny_geom, point_scan, beamspace_dim=4)
        assert low.provenance["beamspace_dim"] == 4
        assert full.provenance["beamspace_dim"] == 16
        assert not np.allclose(low.data, full.data)


class TestMultibeamCaponBeamform:
    def test_rows_match_scanline_function(self, focused_point_cube, tiny_geom, point_scan):
        img = multibeam_capon_beamform(focused_point_cube, tiny_geom, point_scan,
                                       loading_delta=0.02)
        a = centered_steering_matrix(point_scan.beam_angles(), tiny_geom)
        rotated = focused_point_cube.data * a[:, None, :]
        for n in (50, 260, 470):
            ref = multibeam_capon_scanline(rotated[:, n, :], a, loading=0.02)
            assert np.allclose(img.data[:, n], ref, rtol=1e-10, atol=1e-12)

    def test_provenance_and_shape(self, focused_point_cube, tiny_geom, point_scan):
        img = multibeam_capon_beamform(focused_point_cube, tiny_geom, point_scan)
        assert img.provenance["method"] == "multibeam_capon"
        assert img.data.shape == (21, focused_point_cube.num_samples)

    def test_requires_compensated_cube(self, point_cube, tiny_geom, point_scan):
        with pytest.raises(ValueError):
            multibeam_capon_beamform(point_cube, tiny_geom, point_scan)


class TestIaaBeamform:
    def test_rows_match_scanline_function(self, tiny_geom, point_scan, point_phantom_single):
        # noise keeps every depth's model covariance well conditioned, so
        # the driver's always-on minimal load stays negligible and the
        # scanline's failure fallback never triggers
        from usbeam.phantom import ExcitationPulse, simulate_raw
        from usbeam.acquisition import analytic_signal, compensate_delays

        pulse = ExcitationPulse.create(3e6, 40e6, cycles=2)
        raw = simulate_raw(point_phantom_single, tiny_geom, pulse, point_scan,
                           noise_snr_db=5.0, seed=7)
        cube = compensate_delays(analytic_signal(raw), tiny_geom, point_scan)
        img = iaa_beamform(cube, tiny_geom, point_scan, iterations=5)
        a = centered_steering_matrix(point_scan.beam_angles(), tiny_geom)
        rotated = cube.data * a[:, None, :]
        for n in (50, 260, 470):
            ref = iaa_scanline(rotated[:, n, :], a, iterations=5)
            ours = np.abs(img.data[:, n]) ** 2
            # iteration on R^-1 amplifies solver roundoff; 1e-4 still
            # separates a shared recursion from a diverging one
            assert np.allclose(ours, ref, rtol=1e-4, atol=1e-12)

    def test_zero_cube_gives_zero_image(self, focused_point_cube, tiny_geom, point_scan):
        from usbeam.acquisition import RawDataCube

        zero = RawDataCube(
            data=np.zeros_like(focused_point_cube.data),
            fs=focused_point_cube.fs,
            t0=focused_point_cube.t0,
            is_analytic=True,
            is_compensated=True,
        )
        img = iaa_beamform(zero, tiny_geom, point_scan, iterations=3)
        assert np.all(img.data == 0)

    def test_provenance_iterations(self, focused_point_cube, tiny_geom, point_scan):
        img = iaa_beamform(focused_point_cube, tiny_geom, point_scan, iterations=7)
        assert img.provenance["method"] == "iaa"
        assert img.provenance["iterations"] == 7
