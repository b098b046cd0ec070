"""Regularized-inverse solver tests.

The sparse solver is checked against an unaccelerated proximal-gradient
reference and against first-order optimality certificates; the ridge
solver against explicit normal-equation algebra.  Neither reference
shares code with the solvers under test.
"""
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import LinAlgError

from usbeam.adaptive import SolverWarning
from usbeam.classic import RfImage
from usbeam.geometry import centered_steering_matrix, decimation_matrix
from usbeam.inverse import (
    BpResult,
    ForwardModel,
    SolveConfig,
    bp_certificate,
    bp_solve,
    build_forward_model,
    decimate_observation,
    decimated_indices,
    inverse_beamform,
    ls_solve,
    soft_threshold,
)


def _random_system(seed, p=8, k=12, n=1):
    """A decimated-blur-like instance: smooth G, complex observation."""
    rng = np.random.default_rng(seed)
    angles = np.linspace(-0.4, 0.4, k)
    a = np.exp(1j * np.pi * np.sin(angles)[None, :] * np.arange(p)[:, None])
    g = (a.conj().T @ a)[:: k // p][:p] / p
    z = rng.normal(size=(p, n)) + 1j * rng.normal(size=(p, n))
    if n == 1:
        z = z[:, 0]
    return g, z


def _ista_reference(z, g, reg_lambda, iters):
    """Plain proximal gradient, fixed step, no momentum, no safeguards."""
    lip = 2.0 * np.linalg.norm(g, 2) ** 2
    x = np.zeros(g.shape[1], dtype=complex)
    for _ in range(iters):
        grad = 2.0 * (g.conj().T @ (g @ x - z))
        v = x - grad / lip
        mag = np.abs(v)
        shrink = np.maximum(mag - reg_lambda / lip, 0.0)
        x = np.where(mag > 0, v * shrink / np.maximum(mag, 1e-300), 0.0)
    return x


def _objective(x, z, g, reg_lambda):
    return float(np.sum(np.abs(z - g @ x) ** 2) + reg_lambda * np.sum(np.abs(x)))


class TestSolveConfig:
    def test_accepts_both_priors(self):
        assert SolveConfig("bp", 0.5).prior == "bp"
        assert SolveConfig("ls", 0.0).prior == "ls"

    def test_rejects_unknown_prior(self):
        with pytest.raises(ValueError):
            SolveConfig("elastic", 0.5)

    def test_rejects_bad_numbers(self):
        with pytest.raises(ValueError):
            SolveConfig("bp", -0.1)
        with pytest.raises(ValueError):
            SolveConfig("bp", 0.1, max_iters=0)
        with pytest.raises(ValueError):
            SolveConfig("bp", 0.1, tol=-1e-3)


class TestBuildForwardModel:
    def test_rows_of_gram_bitwise(self, tiny_geom):
        angles = np.deg2rad(np.linspace(-20, 20, 12))
        a = centered_steering_matrix(angles, tiny_geom)
        d = decimation_matrix(12, 4)
        model = build_forward_model(a, d)
        gram = a.conj().T @ a
        assert np.array_equal(model.G, gram[[0, 3, 6, 9]])
        assert np.array_equal(model.G, (d.T @ gram))

    def test_bookkeeping(self, tiny_geom):
        a = centered_steering_matrix(np.linspace(-0.3, 0.3, 10), tiny_geom)
        model = build_forward_model(a, decimation_matrix(10, 5))
        assert model.num_emissions == 10
        assert model.num_kept == 5
        assert model.decimation_factor == 2
        assert np.array_equal(model.kept, [0, 2, 4, 6, 8])

    def test_rejects_bad_shapes(self, tiny_geom):
        a = centered_steering_matrix(np.linspace(-0.3, 0.3, 10), tiny_geom)
        with pytest.raises(ValueError):
            build_forward_model(a[0], decimation_matrix(10, 5))
        with pytest.raises(ValueError):
            build_forward_model(a, decimation_matrix(8, 4))


class TestDecimation:
    def test_indices_of_selection_matrix(self):
        d = decimation_matrix(15, 3)
        assert np.array_equal(decimated_indices(d), [0, 5, 10])

    def test_rejects_non_selection_matrices(self):
        bad = decimation_matrix(6, 3)
        bad[0, 1] = 1.0  # two ones in a column
        with pytest.raises(ValueError):
            decimated_indices(bad)
        with pytest.raises(ValueError):
            decimated_indices(0.5 * decimation_matrix(6, 3))

    def test_observation_selection_and_copy(self):
        d = decimation_matrix(8, 4)
        s = np.arange(8.0)
        kept = decimate_observation(s, d)
        assert np.array_equal(kept, [0.0, 2.0, 4.0, 6.0])
        kept[0] = 99.0
        assert s[0] == 0.0

    def test_dropped_entries_are_never_read(self):
        d = decimation_matrix(10, 5)
        rng = np.random.default_rng(3)
        s = rng.normal(size=(10, 7))
        tampered = s.copy()
        tampered[1::2] = 1e9  # only dropped rows
        assert np.array_equal(decimate_observation(s, d), decimate_observation(tampered, d))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            decimate_observation(np.zeros(9), decimation_matrix(8, 4))


class TestSoftThreshold:
    def test_real_matches_textbook_form(self):
        v = np.array([-3.0, -0.5, 0.0, 0.2, 2.0])
        out = soft_threshold(v, 1.0)
        assert np.allclose(out, [-2.0, 0.0, 0.0, 0.0, 1.0])

    def test_complex_keeps_phase(self):
        v = 3.0 * np.exp(1j * 0.7)
        out = soft_threshold(np.array([v]), 1.0)[0]
        assert abs(np.angle(out) - 0.7) < 1e-12
        assert abs(abs(out) - 2.0) < 1e-12

    def test_kills_small_entries_exactly(self):
        v = np.array([0.3 + 0.2j, -0.1j])
        assert np.array_equal(soft_threshold(v, 0.5), np.zeros(2, complex))

    def test_zero_threshold_is_identity(self):
        rng = np.random.default_rng(5)
        v = rng.normal(size=6) + 1j * rng.normal(size=6)
        assert np.array_equal(soft_threshold(v, 0.0), v)

    @given(seed=st.integers(0, 2**32 - 1), thr=st.floats(0.0, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_modulus_shrinkage_property(self, seed, thr):
        rng = np.random.default_rng(seed)
        v = rng.normal(size=8) + 1j * rng.normal(size=8)
        out = soft_threshold(v, thr)
        assert np.allclose(np.abs(out), np.maximum(np.abs(v) - thr, 0.0), atol=1e-12)


class TestBpSolve:
    def test_agrees_with_plain_proximal_gradient(self):
        g, z = _random_system(0)
        lam = 0.4
        res = bp_solve(z, g, lam, max_iters=4000, tol=1e-8)
        ref_obj = _objective(_ista_reference(z, g, lam, 20000), z, g, lam)
        # the reference lags by its O(1/t) tail, so the solver must land
        # at least as low and within the tail's width
        assert res.objective <= ref_obj + 1e-9
        assert abs(res.objective - ref_obj) <= 1e-6 * max(1.0, res.objective)

    def test_certificate_at_solution(self):
        g, z = _random_system(1)
        lam = 0.3
        res = bp_solve(z, g, lam, max_iters=3000, tol=1e-6)
        assert res.converged
        bound = lam / 2 + 1e-6 * max(1.0, np.abs(g.conj().T @ z).max())
        assert bp_certificate(res.x, z, g) <= bound

    def test_objective_nonincreasing_in_iteration_budget(self):
        # the monotone safeguard means a longer budget can only improve
        g, z = _random_system(2)
        objs = [bp_solve(z, g, 0.5, max_iters=m, tol=0.0).objective for m in range(1, 40, 4)]
        assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))

    def test_large_lambda_gives_exact_zero(self):
        g, z = _random_system(3)
        lam = 2.0 * np.abs(g.conj().T @ z).max()
        res = bp_solve(z, g, lam * 1.001, max_iters=100)
        assert np.array_equal(res.x, np.zeros(g.shape[1], complex))
        assert res.converged

    def test_small_lambda_square_system_approaches_direct_solve(self):
        rng = np.random.default_rng(4)
        g = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        g += 3.0 * np.eye(6)  # keep it well conditioned
        z = rng.normal(size=6) + 1j * rng.normal(size=6)
        direct = np.linalg.solve(g, z)
        res = bp_solve(z, g, 1e-7, max_iters=20000, tol=1e-10)
        assert np.allclose(res.x, direct, atol=1e-4)

    def test_zero_matrix_short_circuits(self):
        res = bp_solve(np.ones(4, complex), np.zeros((4, 6)), 0.5)
        assert np.array_equal(res.x, np.zeros(6, complex))
        assert res.converged and res.iterations == 0

    def test_stack_columns_reach_certificates(self):
        g, z = _random_system(5, n=9)
        lam = 0.4
        res = bp_solve(z, g, lam, max_iters=4000, tol=1e-6)
        assert res.x.shape == (g.shape[1], 9)
        assert np.all(res.converged)
        for j in range(9):
            bound = lam / 2 + 1e-6 * max(1.0, np.abs(g.conj().T @ z[:, j]).max())
            assert bp_certificate(res.x[:, j], z[:, j], g) <= bound

    def test_stack_and_single_agree_on_objective(self):
        g, z = _random_system(6, n=4)
        lam = 0.35
        stack = bp_solve(z, g, lam, max_iters=5000, tol=1e-8)
        for j in range(4):
            single = bp_solve(z[:, j], g, lam, max_iters=5000, tol=1e-8)
            assert abs(stack.objective[j] - single.objective) <= 1e-6 * max(
                1.0, single.objective
            )

    def test_warns_when_budget_too_small(self):
        g, z = _random_system(7)
        with pytest.warns(SolverWarning):
            bp_solve(z, g, 0.01, max_iters=1, tol=1e-12)

    def test_rejects_bad_inputs(self):
        g, z = _random_system(8)
        with pytest.raises(ValueError):
            bp_solve(z, g[0], 0.1)
        with pytest.raises(ValueError):
            bp_solve(z, g, -0.1)
        with pytest.raises(ValueError):
            bp_solve(z[:-1], g, 0.1)


class TestBpCertificate:
    def test_zero_vector_gives_correlation_norm(self):
        g, z = _random_system(9)
        cert = bp_certificate(np.zeros(g.shape[1], complex), z, g)
        assert cert == pytest.approx(np.abs(g.conj().T @ z).max(), rel=1e-12)

    def test_exact_solution_of_noiseless_square_system(self):
        rng = np.random.default_rng(10)
        g = rng.normal(size=(5, 5)) + 4.0 * np.eye(5)
        x = rng.normal(size=5)
        assert bp_certificate(x, g @ x, g) < 1e-10


class TestLsSolve:
    def test_matches_explicit_normal_equations(self):
        for seed in range(5):
            g, z = _random_system(seed, p=8, k=12)
            lam = 0.2
            x = ls_solve(z, g, lam)
            normal = g.conj().T @ g + lam * np.eye(12)
            expected = np.linalg.solve(normal, g.conj().T @ z)
            assert np.allclose(x, expected, rtol=1e-10, atol=1e-13)

    def test_normal_equation_residual_small(self):
        for seed in range(10):
            g, z = _random_system(seed + 20, p=8, k=12)
            lam = 0.15
            x = ls_solve(z, g, lam)
            normal = g.conj().T @ g + lam * np.eye(12)
            rhs = g.conj().T @ z
            resid = np.linalg.norm(normal @ x - rhs)
            assert resid <= 1e-8 * max(1.0, np.linalg.norm(rhs))

    def test_linear_in_observation(self):
        g, z1 = _random_system(30)
        _, z2 = _random_system(31)
        lam = 0.4
        combo = ls_solve(2.0 * z1 - 1.5j * z2, g, lam)
        parts = 2.0 * ls_solve(z1, g, lam) - 1.5j * ls_solve(z2, g, lam)
        assert np.allclose(combo, parts, rtol=1e-10, atol=1e-12)

    def test_zero_lambda_tall_system_is_least_squares(self):
        rng = np.random.default_rng(32)
        g = rng.normal(size=(12, 5)) + 1j * rng.normal(size=(12, 5))
        z = rng.normal(size=12) + 1j * rng.normal(size=12)
        x = ls_solve(z, g, 0.0)
        expected = np.linalg.lstsq(g, z, rcond=None)[0]
        assert np.allclose(x, expected, rtol=1e-8, atol=1e-10)

    def test_zero_lambda_rank_deficient_raises(self):
        rng = np.random.default_rng(33)
        g = rng.normal(size=(4, 7))  # wide: cannot have full column rank
        with pytest.raises(LinAlgError):
            ls_solve(np.zeros(4), g, 0.0)

    def test_huge_lambda_approaches_scaled_backprojection(self):
        g, z = _random_system(34)
        lam = 1e8
        x = ls_solve(z, g, lam)
        assert np.allclose(lam * x, g.conj().T @ z, rtol=1e-6)

    def test_stack_matches_per_column(self):
        g, z = _random_system(35, n=6)
        lam = 0.25
        stack = ls_solve(z, g, lam)
        for j in range(6):
            assert np.allclose(stack[:, j], ls_solve(z[:, j], g, lam), rtol=1e-12)

    def test_rejects_bad_inputs(self):
        g, z = _random_system(36)
        with pytest.raises(ValueError):
            ls_solve(z, g[0], 0.1)
        with pytest.raises(ValueError):
            ls_solve(z, g, -1.0)
        with pytest.raises(ValueError):
            ls_solve(z[:-2], g, 0.1)


def _das_like_image(seed, k=10, n=24):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(k, n)) + 1j * rng.normal(size=(k, n))
    return RfImage(
        data=data,
        kind="rf",
        scan_kind="sector",
        scanline_positions=np.linspace(-0.2, 0.2, k),
        depths=np.linspace(0.02, 0.03, n),
        provenance={"method": "das", "apodization": "none"},
    )


class TestInverseBeamform:
    def setup_method(self):
        rng = np.random.default_rng(77)
        angles = np.linspace(-0.2, 0.2, 10)
        self.a = np.exp(
            1j * np.pi * np.sin(angles)[None, :] * np.arange(6)[:, None]
        ) / np.sqrt(6)
        self.d = decimation_matrix(10, 5)

    def test_ls_route_matches_manual_solve(self):
        img = _das_like_image(40)
        out = inverse_beamform(img, self.a, self.d, SolveConfig("ls", 0.3))
        model = build_forward_model(self.a, self.d)
        z = img.data[model.kept]
        scale = np.max(np.abs(z))
        expected = ls_solve(z / scale, model.G, 0.3) * scale
        assert np.allclose(out.data, expected, rtol=1e-12)
        assert out.data.shape == (10, 24)

    def test_provenance_fields(self):
        img = _das_like_image(41)
        ls = inverse_beamform(img, self.a, self.d, SolveConfig("ls", 0.5))
        assert ls.provenance["method"] == "ls"
        assert ls.provenance["reg_lambda"] == 0.5
        assert ls.provenance["decimation"] == 2
        assert ls.provenance["emissions_used"] == 5
        assert ls.provenance["source"] == "das"
        bp = inverse_beamform(
            img, self.a, self.d, SolveConfig("bp", 0.4, max_iters=800, tol=1e-5)
        )
        assert bp.provenance["method"] == "bp"
        assert {"iterations", "unconverged_depths", "max_iters", "tol"} <= set(
            bp.provenance
        )

    def test_dropped_emissions_cannot_affect_result(self):
        # includes the normalization: the dropped rows hold the global max
        img = _das_like_image(42)
        tampered = _das_like_image(42)
        tampered.data[1::2] *= 50.0
        for cfg in (SolveConfig("ls", 0.2), SolveConfig("bp", 0.2, max_iters=300)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SolverWarning)
                base = inverse_beamform(img, self.a, self.d, cfg)
                mod = inverse_beamform(tampered, self.a, self.d, cfg)
            assert np.array_equal(base.data, mod.data)

    def test_zero_image_stays_zero(self):
        img = _das_like_image(43)
        img.data[:] = 0
        for prior in ("ls", "bp"):
            out = inverse_beamform(img, self.a, self.d, SolveConfig(prior, 0.3))
            assert np.all(out.data == 0)

    def test_rejects_non_rf_image(self):
        img = _das_like_image(44)
        env = RfImage(
            data=np.abs(img.data),
            kind="envelope",
            scan_kind=img.scan_kind,
            scanline_positions=img.scanline_positions,
            depths=img.depths,
            provenance={},
        )
        with pytest.raises(ValueError):
            inverse_beamform(env, self.a, self.d, SolveConfig("ls", 0.1))

    def test_rejects_scanline_mismatch(self):
        img = _das_like_image(45, k=8)
        with pytest.raises(ValueError):
            inverse_beamform(img, self.a, self.d, SolveConfig("ls", 0.1))
