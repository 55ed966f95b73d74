import math

import numpy as np
import pytest

from shewnoise.rate import (
    Branch,
    Problem,
    c_star1_objective,
    c_star1_minimum,
    classify,
    make_solution_spec,
    psi,
    psi_prime,
    rate_value,
    solve_gamma,
    solve_gamma_scaled,
    threshold_c_star,
    threshold_c_star1,
)
from shewnoise.specfun import SQRT_4PI

ZETA_52_OVER_SQRT4PI = 0.37842656850150838
C_STAR = 0.73693748002264514
PSI_PRIME_S_HALF = 3.6827449831923989


class TestPsi:
    def test_ns_at_zero(self):
        assert psi(Branch.NON_SOLITON, 0.0) == 0.0

    def test_ns_at_one(self):
        assert psi(Branch.NON_SOLITON, 1.0) == pytest.approx(
            ZETA_52_OVER_SQRT4PI, abs=1e-12
        )

    def test_soliton_correction_vanishes_near_one(self):
        assert psi(Branch.SOLITON, 1.0 - 1e-13) == pytest.approx(
            ZETA_52_OVER_SQRT4PI, abs=1e-9
        )

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            psi(Branch.SOLITON, -0.1)
        with pytest.raises(ValueError):
            psi(Branch.NON_SOLITON, 1.1)

    def test_prime_matches_central_difference(self):
        h = 1e-4
        for branch, gammas in [
            (Branch.NON_SOLITON, (-1.5, -0.2, 0.4, 0.9)),
            (Branch.SOLITON, (0.1, 0.4, 0.8, 0.95)),
        ]:
            for g in gammas:
                fd = (psi(branch, g + h) - psi(branch, g - h)) / (2 * h)
                # stencil error is O(h^2 psi'''), so compare relatively
                assert psi_prime(branch, g) == pytest.approx(fd, rel=2e-6), (branch, g)

    def test_prime_ns_limit_and_top(self):
        assert psi_prime(Branch.NON_SOLITON, 0.0) == pytest.approx(
            1.0 / SQRT_4PI, abs=1e-12
        )
        assert psi_prime(Branch.NON_SOLITON, 1.0) == pytest.approx(C_STAR, abs=1e-10)

    def test_prime_soliton_half(self):
        assert psi_prime(Branch.SOLITON, 0.5) == pytest.approx(
            PSI_PRIME_S_HALF, abs=1e-10
        )

    def test_monotonicity(self):
        ns = [psi_prime(Branch.NON_SOLITON, g) for g in np.linspace(-3.0, 1.0, 100)]
        assert all(b > a for a, b in zip(ns, ns[1:]))
        s = [psi_prime(Branch.SOLITON, g) for g in np.linspace(0.01, 0.99, 100)]
        assert all(b < a for a, b in zip(s, s[1:]))


class TestThresholds:
    def test_c_star_value(self):
        assert threshold_c_star() == pytest.approx(0.736937, abs=1e-5)

    def test_c_star_high_precision(self):
        assert threshold_c_star() == pytest.approx(C_STAR, abs=1e-10)

    def test_c_star_equals_psi_prime_at_one(self):
        assert threshold_c_star() == psi_prime(Branch.NON_SOLITON, 1.0)

    def test_c_star1_objective_at_one(self):
        # closed form: zeta(3/2)/sqrt(4 pi) + 4 Im sqrt(2 pi i), and
        # Im sqrt(2 pi i) = sqrt(pi)
        want = C_STAR + 4.0 * math.sqrt(math.pi)
        assert c_star1_objective(1.0) == pytest.approx(want, abs=1e-10)

    def test_c_star1_minimizer_interior(self):
        gamma_star, value = c_star1_minimum()
        assert 0.0 < gamma_star < 1.0
        assert value <= c_star1_objective(1.0)
        # golden-section oracle on a fresh objective evaluation
        gs = np.linspace(gamma_star - 0.01, gamma_star + 0.01, 2001)
        vals = [c_star1_objective(float(g)) for g in gs if 0 < g <= 1]
        assert value == pytest.approx(min(vals), abs=1e-9)

    def test_c_star1_infimum_definition(self):
        # the returned value is a true lower bound of the objective on a grid
        val = threshold_c_star1()
        for g in np.linspace(0.02, 1.0, 200):
            assert c_star1_objective(float(g)) >= val - 1e-12


class TestClassifyAndSolve:
    def test_classify_examples(self):
        assert classify(Problem(T=2.0, alpha=math.log(0.5))) is Branch.NON_SOLITON
        assert classify(Problem(T=2.0, alpha=math.log(2.0))) is Branch.SOLITON
        # closed boundary stays non-soliton
        assert classify(Problem(T=2.0, alpha=math.log(C_STAR))) is Branch.NON_SOLITON

    def test_solve_at_c_star_returns_gamma_one(self):
        spec = solve_gamma(Problem(T=2.0, alpha=math.log(C_STAR)))
        assert spec.branch is Branch.NON_SOLITON
        assert spec.gamma == pytest.approx(1.0, abs=1e-9)

    def test_solve_at_typical_value_returns_gamma_zero(self):
        # e^alpha = 1/sqrt(4 pi) * sqrt(2/T) makes the target psi'_ns(0)
        T = 2.0
        alpha = math.log(1.0 / (SQRT_4PI * math.sqrt(T / 2.0)))
        spec = solve_gamma(Problem(T=T, alpha=alpha))
        assert spec.gamma == pytest.approx(0.0, abs=1e-11)

    @pytest.mark.parametrize("target", [0.05, 0.3, 0.5, 0.7, 0.736, 0.75, 1.0, 2.0, 9.0])
    def test_round_trip(self, target):
        T = 2.0
        alpha = math.log(target / math.sqrt(T / 2.0))
        problem = Problem(T=T, alpha=alpha)
        spec = solve_gamma(problem)
        assert psi_prime(spec.branch, spec.gamma) == pytest.approx(
            problem.target, rel=1e-11
        )

    def test_soliton_spec_invariants(self):
        spec = solve_gamma(Problem(T=2.0, alpha=math.log(2.0)))
        assert spec.branch is Branch.SOLITON
        assert spec.kappa == pytest.approx(
            math.sqrt((2.0 / spec.T) * math.log(1.0 / spec.gamma)), abs=1e-14
        )
        assert spec.v0 > spec.kappa

    def test_non_soliton_spec_invariants(self):
        spec = solve_gamma(Problem(T=2.0, alpha=math.log(0.5)))
        assert spec.kappa == 0.0
        assert spec.v0 == pytest.approx(1.0 / math.sqrt(2.0))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            make_solution_spec(Branch.SOLITON, 1.5, 2.0)


class TestRateValue:
    @pytest.mark.parametrize("T", [1.0, 2.0, 5.0])
    def test_zero_rate_at_typical_point(self, T):
        alpha = math.log(1.0 / math.sqrt(2.0 * math.pi * T))
        assert abs(rate_value(Problem(T=T, alpha=alpha))) < 1e-10

    def test_at_branch_point(self):
        # gamma = 1: rate = c_star - psi_ns(1) for T = 2
        problem = Problem(T=2.0, alpha=math.log(C_STAR))
        want = C_STAR - ZETA_52_OVER_SQRT4PI
        assert rate_value(problem) == pytest.approx(want, abs=1e-9)

    def test_nonnegative_on_alpha_grid(self):
        for T in (1.0, 2.0):
            for alpha in np.linspace(-6.0, 3.0, 40):
                assert rate_value(Problem(T=T, alpha=float(alpha))) >= -1e-12

    def test_continuous_across_branch_boundary(self):
        T = 2.0
        a0 = math.log(C_STAR / math.sqrt(T / 2.0))
        below = rate_value(Problem(T=T, alpha=a0 - 1e-9))
        above = rate_value(Problem(T=T, alpha=a0 + 1e-9))
        assert below == pytest.approx(above, abs=1e-7)


class TestScaled:
    def test_large_n_limit(self):
        # gamma_bar -> alpha_bar with a log(2 sqrt(alpha_bar))/N correction;
        # taking logs of  2 sqrt(gb) e^{N gb} = e^{N ab}  fixes the sign of
        # that correction to minus.
        ab = 1.0
        errs_plain = []
        errs_first_order = []
        for N in (8.0, 32.0, 128.0, 512.0):
            sp = solve_gamma_scaled(N, ab)
            errs_plain.append(abs(sp.gamma_bar - (ab + math.log(2.0 * math.sqrt(ab)) / N)))
            errs_first_order.append(
                abs(sp.gamma_bar - (ab - math.log(2.0 * math.sqrt(ab)) / N))
            )
        # the difference from alpha_bar + correction-sized terms vanishes
        assert errs_plain[-1] < errs_plain[0]
        # and the signed first-order expansion is sharp: error is O(1/N^2)
        assert errs_first_order[-1] < 3e-6
        assert all(b < a for a, b in zip(errs_first_order, errs_first_order[1:]))

    def test_n8_against_root_oracle(self):
        import mpmath as mp

        N, ab = 8.0, 1.0
        sp = solve_gamma_scaled(N, ab)
        f = lambda gb: (
            mp.polylog(1.5, mp.e ** (-N * gb)) * mp.e ** (N * gb) / mp.sqrt(4 * mp.pi * N)
            + 2 * mp.sqrt(gb) * mp.e ** (N * gb)
            - mp.e ** (N * ab)
        )
        gb_ref = float(mp.findroot(f, 1.1))
        assert sp.gamma_bar == pytest.approx(gb_ref, rel=1e-10)

    def test_residual_small(self):
        sp = solve_gamma_scaled(6.0, 1.0)
        N, gb = sp.N, sp.gamma_bar
        lhs = (
            math.exp(N * gb)
            * (2.0 * math.sqrt(gb))
            * (1.0 + 0.0)
        )
        # residual in log form, matching the solver contract
        from shewnoise.rate import _scaled_lhs_log

        assert abs(_scaled_lhs_log(N, gb) - N * sp.alpha_bar) < 1e-10

    def test_spec_conversion(self):
        sp = solve_gamma_scaled(8.0, 1.0)
        spec = sp.to_solution_spec()
        assert spec.T == 16.0
        assert spec.kappa == pytest.approx(math.sqrt(sp.gamma_bar), rel=1e-12)

    def test_overflow_regime(self):
        # N*gamma_bar ~ 900 would overflow e^{N gb}; the log form must cope.
        sp = solve_gamma_scaled(900.0, 1.0)
        assert sp.gamma_bar == pytest.approx(1.0, abs=1e-2)
