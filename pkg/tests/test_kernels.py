import math

import numpy as np
import pytest

from shewnoise.kernels import (
    ContourQuad,
    KernelAccuracyError,
    KernelEvaluator,
    build_contour,
    rho,
    rho_asymptotic,
    rho_asymptotic_envelope,
    rho_tilde,
)
from shewnoise.rate import Branch, make_solution_spec, solve_gamma_scaled
from shewnoise.scattering import PhiEvaluator
from shewnoise.specfun import heat_kernel


def spec_ns(gamma=0.5, T=2.0):
    return make_solution_spec(Branch.NON_SOLITON, gamma, T)


def spec_s(gamma=0.74, T=2.0):
    return make_solution_spec(Branch.SOLITON, gamma, T)


class TestContour:
    def test_margin_invariant(self):
        spec = spec_ns()
        for t in (0.01, 0.5, 1.0, 1.99):
            quad = build_contour(spec, t)
            tau = min(t, spec.T - t)
            assert (quad.half_width**2 - quad.v0**2) * tau / 2.0 >= 40.0

    def test_node_budget(self):
        spec = spec_ns()
        quad = build_contour(spec, 1.0)
        assert quad.n_nodes >= max(256, int(64 * quad.half_width))

    def test_weights_integrate_gaussian(self):
        # the rule integrates e^{-u^2 t/2} on [-L, L] to machine accuracy
        spec = spec_ns()
        t = 1.0
        quad = build_contour(spec, t)
        got = np.sum(quad.weights * np.exp(-quad.nodes**2 * t / 2.0))
        assert got == pytest.approx(math.sqrt(2.0 * math.pi / t), rel=1e-13)


class TestGammaZero:
    def test_rho_is_heat_kernel(self):
        spec = spec_ns(0.0)
        pe = PhiEvaluator(spec)
        for t in (0.1, 1.0, 1.9):
            quad = build_contour(spec, t)
            for s, x in [(0.0, 0.0), (0.5, -0.2), (2.0, 1.0), (-1.0, 0.3)]:
                want = heat_kernel(t, s + x)
                assert rho(spec, quad, s, t, x, pe) == pytest.approx(
                    want, abs=1e-12 * max(1.0, want)
                )

    def test_rho_tilde_vanishes(self):
        spec = spec_ns(0.0)
        quad = build_contour(spec, 1.0)
        assert rho_tilde(spec, quad, -0.5, 1.0, 0.0) == 0.0


class TestKernelProperties:
    def test_translation_covariance(self):
        for spec in (spec_ns(), spec_s()):
            pe = PhiEvaluator(spec)
            quad = build_contour(spec, 0.7)
            a = rho(spec, quad, 0.4, 0.7, 1.1, pe)
            b = rho(spec, quad, 1.5, 0.7, 0.0, pe)
            assert a == pytest.approx(b, abs=1e-12 * max(1.0, abs(b)))
            at = rho_tilde(spec, quad, -0.4, 0.7, 0.6, pe)
            bt = rho_tilde(spec, quad, -1.0, 0.7, 0.0, pe)
            assert at == pytest.approx(bt, abs=1e-12 * max(1.0, abs(bt)))

    def test_schwartz_decay(self):
        spec = spec_ns(0.9)
        ev = KernelEvaluator(spec)
        t = 0.5
        peak = float(ev.rho0(t, 0.0)[0])
        far = float(ev.rho0(t, ev.window(t))[0])
        assert abs(far) < 1e-11 * abs(peak)

    def test_doubling_nodes_stable(self):
        for spec in (spec_ns(0.9), spec_s(0.74)):
            ev1 = KernelEvaluator(spec, node_factor=1.0)
            ev2 = KernelEvaluator(spec, node_factor=2.0)
            sig = np.array([-1.0, 0.0, 0.7, 2.5])
            for t in (0.3, 1.0):
                a, b = ev1.rho0(t, sig), ev2.rho0(t, sig)
                scale = np.max(np.abs(a))
                assert np.max(np.abs(a - b)) < 1e-10 * scale
                at, bt = ev1.rhot0(t, sig), ev2.rhot0(t, sig)
                scale_t = max(np.max(np.abs(at)), 1e-300)
                assert np.max(np.abs(at - bt)) < 1e-10 * scale_t

    def test_gamma_continuity_at_zero(self):
        ev = KernelEvaluator(spec_ns(1e-8))
        t = 0.8
        sig = np.array([0.0, 0.5, 1.5])
        want = heat_kernel(t, sig)
        assert np.max(np.abs(ev.rho0(t, sig) - want)) < 1e-6

    def test_rho_tilde_sign_soliton(self):
        # rho_tilde(-s) < 0 on the plateau for the soliton branch
        spec = spec_s()
        ev = KernelEvaluator(spec)
        t = 1.0
        vals = ev.rhot0(t, np.array([-0.1, -0.3]))
        assert np.all(vals < 0.0)

    def test_small_t_heat_kernel_reduction(self):
        # gamma = 0, t = 0.01: the contour rule still integrates to hk
        spec = spec_ns(0.0)
        ev = KernelEvaluator(spec)
        sig = np.array([-6.0, -0.05, 0.0, 0.2, 6.0])
        got = ev.rho0(0.01, sig)
        want = heat_kernel(0.01, sig)
        assert np.max(np.abs(got - want)) < 1e-9 * max(1.0, float(np.max(want)))


class TestTables:
    def test_table_matches_direct(self):
        for spec in (spec_ns(0.9), spec_s()):
            ev = KernelEvaluator(spec)
            t = 0.8
            rs = ev.rho_table(t, -3.0, 8.0)
            rts = ev.rhot_table(t, -8.0, 3.0)
            sig = np.linspace(-2.7, 7.7, 57)
            direct = ev.rho0(t, sig)
            scale = np.max(np.abs(direct))
            assert np.max(np.abs(rs(sig) - direct)) < 2e-9 * scale
            sig_t = -sig
            direct_t = ev.rhot0(t, sig_t)
            scale_t = max(np.max(np.abs(direct_t)), 1e-300)
            assert np.max(np.abs(rts(sig_t) - direct_t)) < 2e-9 * scale_t

    def test_table_extension(self):
        ev = KernelEvaluator(spec_ns(0.5))
        ev.rho_table(1.0, 0.0, 2.0)
        rs = ev.rho_table(1.0, -4.0, 6.0)
        direct = ev.rho0(1.0, np.array([-3.5, 5.5]))
        assert float(rs(-3.5)) == pytest.approx(float(direct[0]), abs=1e-9)
        assert float(rs(5.5)) == pytest.approx(float(direct[1]), abs=1e-9)

    def test_outside_range_is_zero(self):
        ev = KernelEvaluator(spec_ns(0.5))
        rs = ev.rho_table(1.0, -1.0, 4.0)
        assert float(rs(50.0)) == 0.0


class TestScaledAsymptotics:
    @pytest.fixture(scope="class")
    def scaled8(self):
        return solve_gamma_scaled(8.0, 1.0)

    def test_plateau(self, scaled8):
        # rho(s;t,0) e^{-gb t/2} tracks 2 sqrt(gb) e^{-sqrt(gb) s} on the
        # plateau 0 < s < sqrt(gb) t - O(sqrt(t))
        spec = scaled8.to_solution_spec()
        ev = KernelEvaluator(spec)
        gb = scaled8.gamma_bar
        t = scaled8.N
        for s in (0.5, 2.0, 4.0):
            got = float(ev.rho0(t, s)[0]) * math.exp(-gb * t / 2.0)
            want = 2.0 * math.sqrt(gb) * math.exp(-math.sqrt(gb) * s)
            envelope = math.sqrt(1.0 + t) * math.exp(-gb * t / 2.0) + math.exp(-gb * scaled8.N)
            assert abs(got / want - 1.0) < 10.0 * envelope + 1e-6

    def test_split_agreement(self, scaled8):
        spec = scaled8.to_solution_spec()
        ev = KernelEvaluator(spec)
        t = scaled8.N
        peak = float(ev.rho0(t, 0.0)[0])
        for s, x in [(0.5, 0.0), (3.0, 1.0), (9.5, 0.0), (12.0, 0.0)]:
            got = float(ev.rho0(t, s + x)[0])
            main = rho_asymptotic(scaled8, s, t, x)
            env = rho_asymptotic_envelope(scaled8, s, t, x)
            assert abs(got - main) <= 5.0 * env + 1e-10 * peak, (s, x)

    def test_phi_smallness(self, scaled8):
        # |phi| = O(e^{-gb N}) on the upper half plane
        spec = scaled8.to_solution_spec()
        pe = PhiEvaluator(spec)
        bound = 5.0 * math.exp(-scaled8.gamma_bar * scaled8.N)
        for lam in (0.5j, 2.0 + 1.0j, -3.0 + 0.3j):
            assert abs(pe(lam)) < bound

    def test_residue_indicator(self, scaled8):
        gb = scaled8.gamma_bar
        t = scaled8.N
        s_in = (math.sqrt(gb) - 2.0 / math.sqrt(t)) * t
        s_out = (math.sqrt(gb) + 0.5) * t
        inside = rho_asymptotic(scaled8, s_in, t, 0.0)
        outside = rho_asymptotic(scaled8, s_out, t, 0.0)
        assert inside > 2.0 * math.sqrt(gb) * math.exp(
            gb * t / 2.0 - math.sqrt(gb) * s_in
        ) * 0.99
        assert outside == pytest.approx(heat_kernel(t, s_out), rel=1e-12)


class TestGuards:
    def test_time_domain(self):
        spec = spec_ns()
        quad = build_contour(spec, 1.0)
        with pytest.raises(ValueError):
            rho(spec, quad, 0.0, 2.5, 0.0)

    def test_contour_invariant_guard(self):
        spec = spec_ns()
        bad = ContourQuad(
            v0=spec.v0,
            half_width=1.0,
            nodes=np.linspace(-1, 1, 64),
            weights=np.full(64, 2.0 / 64),
        )
        from shewnoise.kernels import _check_contour

        with pytest.raises(KernelAccuracyError):
            _check_contour(bad, 0.5)
