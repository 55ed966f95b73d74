"""Closed-form scattering data for the 1-to-1 problem: the Cauchy-type
integral phi(lambda), the four scattering coefficients, overflow-safe
dressed reflection coefficients, and analytic conserved quantities."""

import math
from dataclasses import dataclass

import numpy as np

from .rate import Branch, psi
from .specfun import EXP_LIMIT, SQRT_4PI, polylog


@dataclass(frozen=True)
class ConservedSet:
    """Analytic values of the first and third conserved quantities."""

    C1: float
    C3: float


def _log_term(gamma, T, eta):
    # log(1 - gamma e^{-x}) written as log((1-gamma) + gamma(1 - e^{-x})),
    # which stays finite at gamma = 1 where e^{-x} rounds to 1 for tiny eta.
    x = np.asarray(eta, dtype=float) ** 2 * (T / 2.0)
    return np.log((1.0 - gamma) - gamma * np.expm1(-x))


class PhiEvaluator:
    """Evaluates phi(lambda) = int_R (d eta/2 pi i) log(1 - gamma
    e^{-eta^2 T/2})/(eta - lambda) for lambda off the real axis.

    Exp-sinh (double exponential) nodes on each half line, split at the
    origin so the integrable log singularity of the gamma = 1 case sits at
    a map endpoint.  Nodes, weights and log values are frozen at
    construction; evaluation is a vectorized Cauchy sum, so instances are
    immutable and safe to share across threads.

    Accuracy note: the discrete Cauchy sum resolves the pole at lambda
    only while |Im lambda| is a few node spacings, i.e. |Im lambda| >~
    0.15 at the default 400 nodes.  Production contours sit at
    v0 >= 1/sqrt(T), which satisfies this for every supported horizon;
    raise n_nodes when probing closer to the axis.
    """

    def __init__(self, spec, n_nodes=400):
        self.spec = spec
        self.n_nodes = int(n_nodes)
        gamma, T = spec.gamma, spec.T
        half = self.n_nodes // 2

        # eta = exp(sinh u); u_lo reaches eta ~ e^-33 (resolving the log
        # singularity at the origin), u_hi reaches past the point where
        # gamma e^{-eta^2 T/2} underflows.
        eta_max = math.sqrt(2.0 * (EXP_LIMIT + 10.0) / T)
        u = np.linspace(-4.2, math.asinh(math.log(max(eta_max, 3.0))) + 0.3, half)
        h = u[1] - u[0]
        eta = np.exp(np.sinh(u))
        deta = np.cosh(u) * eta * h

        self.nodes = np.concatenate([-eta[::-1], eta])
        weights = np.concatenate([deta[::-1], deta])
        self._wL = weights * _log_term(gamma, T, self.nodes)
        self._prefactor = 1.0 / (2.0j * math.pi)

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        if np.any(lam.imag == 0.0):
            raise ValueError(
                "phi requires Im(lambda) != 0; use phi_real for the on-axis principal value"
            )
        flat = np.ravel(lam)
        out = np.empty(flat.shape, dtype=complex)
        step = 4096  # keeps the outer-difference matrix modest
        for i in range(0, flat.size, step):
            block = flat[i : i + step]
            denom = self.nodes[None, :] - block[:, None]
            out[i : i + step] = self._prefactor * (self._wL[None, :] / denom).sum(axis=1)
        out = out.reshape(lam.shape)
        if out.ndim == 0:
            return complex(out)
        return out

    def moment(self, power):
        """-(1/2 pi i) int eta^power L(eta) d eta, the coefficient of
        lambda^{-power-1} in the large-lambda expansion of phi."""
        return complex(-self._prefactor * np.sum(self.nodes**power * self._wL))


def phi(spec, lam, n_nodes=400):
    """One-off phi evaluation; builds a fresh PhiEvaluator."""
    return PhiEvaluator(spec, n_nodes=n_nodes)(lam)


def phi_real(spec, lam):
    """Principal-value phi(lambda) for real lambda.

    Subtracting L(lambda) e^{-(eta-lambda)^2} removes the pole: the
    Gaussian counterterm integrates to zero around lambda by symmetry and
    the remainder is smooth.  Only defined for gamma < 1 or lambda != 0.
    """
    lam = float(lam)
    gamma, T = spec.gamma, spec.T
    if gamma >= 1.0 and lam == 0.0:
        raise ValueError("phi_real is singular at lambda = 0 when gamma = 1")

    L_lam = float(_log_term(gamma, T, np.asarray(lam)))
    eta_max = math.sqrt(2.0 * (EXP_LIMIT + 10.0) / T)
    extent = max(eta_max, abs(lam) + 10.0)

    edges = set(np.linspace(-extent, extent, int(4 * extent) + 2))
    edges.update(np.linspace(lam - 3.0, lam + 3.0, 49))
    edges.update(np.linspace(-1.0, 1.0, 17))
    edges = np.array(sorted(e for e in edges if -extent <= e <= extent))

    xg, wg = np.polynomial.legendre.leggauss(20)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, halfw = 0.5 * (a + b), 0.5 * (b - a)
        eta = mid + halfw * xg
        d = eta - lam
        with np.errstate(divide="ignore", invalid="ignore"):
            f = (_log_term(gamma, T, eta) - L_lam * np.exp(-d * d)) / d
        f = np.where(np.abs(d) < 1e-13, 0.0, f)  # removable point
        total += halfw * np.sum(wg * f)
    return total / (2.0j * math.pi)


def _blaschke(spec, lam):
    # Factor carrying the soliton zero of Sa at i*kappa (upper half plane).
    if spec.branch is Branch.SOLITON:
        return (lam - 1j * spec.kappa) / (lam + 1j * spec.kappa)
    return 1.0 + 0.0j


def scattering_coeffs(spec, lam, t, phi_evaluator=None):
    """Scattering data (Sa, Sa_tilde, Sb_dressed, Sb_tilde_dressed) at the
    spectral point lam and time t.

    Off the real axis the exponents (mu_a, mu_at) are (0,1) above and
    (1,0) below; on the real axis both are 1/2 and phi is taken in the
    principal-value sense.  Sb = 1 and Sb_tilde = -gamma e^{-lambda^2 T/2},
    dressed with e^{-lambda^2 t/2} and e^{+lambda^2 t/2} respectively.
    """
    lam = complex(lam)
    gamma, T = spec.gamma, spec.T
    if spec.branch is Branch.SOLITON and min(
        abs(lam - 1j * spec.kappa), abs(lam + 1j * spec.kappa)
    ) < 1e-12 * max(1.0, spec.kappa):
        raise ValueError("lambda coincides with the soliton zero at +/- i kappa")

    g = 1.0 - gamma * np.exp(-lam * lam * (T / 2.0))
    B = _blaschke(spec, lam)

    if lam.imag > 0.0:
        ph = phi_evaluator(lam) if phi_evaluator is not None else phi(spec, lam)
        sa = B * np.exp(ph)
        sat = g * np.exp(-ph) / B
    elif lam.imag < 0.0:
        ph = phi_evaluator(lam) if phi_evaluator is not None else phi(spec, lam)
        sa = g * B * np.exp(ph)
        sat = np.exp(-ph) / B
    else:
        ph = phi_real(spec, lam.real)
        root = math.sqrt(max(g.real, 0.0))
        sa = root * B * np.exp(ph)
        sat = root * np.exp(-ph) / B

    b_drss = np.exp(-lam * lam * t / 2.0)
    bt_drss = -gamma * np.exp(-lam * lam * (T - t) / 2.0)
    return complex(sa), complex(sat), complex(b_drss), complex(bt_drss)


def dressed_r(spec, lam, t, x, phi_value=None, phi_evaluator=None):
    """r(lambda) e^{-lambda^2 t/2 + i lambda x} = e^{-lambda^2 t/2 +
    i lambda x - phi(lambda)} / Blaschke, assembled as one exponent.

    lam must lie strictly in the upper half plane (the rho contour).
    Raises OverflowError if the combined real exponent exceeds the safe
    range instead of returning inf.
    """
    lam = np.asarray(lam, dtype=complex)
    if not (0.0 < t < spec.T):
        raise ValueError("dressed_r requires 0 < t < T")
    if np.any(lam.imag <= 0.0):
        raise ValueError("dressed_r expects Im(lambda) > 0")
    if phi_value is None:
        phi_value = (
            phi_evaluator(lam) if phi_evaluator is not None else phi(spec, lam)
        )
    exponent = -lam * lam * (t / 2.0) + 1j * lam * x - phi_value
    remax = float(np.max(np.real(exponent)))
    if remax > EXP_LIMIT:
        raise OverflowError(f"dressed_r exponent {remax:.1f} exceeds {EXP_LIMIT}")
    out = np.exp(exponent)
    if spec.branch is Branch.SOLITON:
        out = out * (lam + 1j * spec.kappa) / (lam - 1j * spec.kappa)
    if out.ndim == 0:
        return complex(out)
    return out


def dressed_r_tilde(spec, lam, t, x, phi_value=None, phi_evaluator=None):
    """r_tilde(lambda) e^{lambda^2 t/2 - i lambda x} = -gamma
    e^{-lambda^2 (T-t)/2 - i lambda x + phi(lambda)} * Blaschke.

    lam must lie strictly in the lower half plane (the rho-tilde contour);
    the net Gaussian factor e^{-lambda^2 (T-t)/2} decays for t < T.
    """
    lam = np.asarray(lam, dtype=complex)
    if not (0.0 < t < spec.T):
        raise ValueError("dressed_r_tilde requires 0 < t < T")
    if np.any(lam.imag >= 0.0):
        raise ValueError("dressed_r_tilde expects Im(lambda) < 0")
    if phi_value is None:
        phi_value = (
            phi_evaluator(lam) if phi_evaluator is not None else phi(spec, lam)
        )
    exponent = -lam * lam * ((spec.T - t) / 2.0) - 1j * lam * x + phi_value
    remax = float(np.max(np.real(exponent)))
    if remax > EXP_LIMIT:
        raise OverflowError(f"dressed_r_tilde exponent {remax:.1f} exceeds {EXP_LIMIT}")
    out = -spec.gamma * np.exp(exponent)
    if spec.branch is Branch.SOLITON:
        out = out * (lam - 1j * spec.kappa) / (lam + 1j * spec.kappa)
    if out.ndim == 0:
        return complex(out)
    return out


def gamma_psi_prime(spec):
    """gamma * psi_star'(gamma) on the spec's branch, finite at gamma = 0."""
    gamma = spec.gamma
    base = polylog(1.5, gamma) / SQRT_4PI
    if spec.branch is Branch.SOLITON:
        return base + 2.0 * math.sqrt(math.log(1.0 / gamma))
    return base


def conserved_analytic(spec):
    """C1 and C3 for the physical candidates.

    C1 = sqrt(2/T) gamma psi_star'(gamma) and C3 = -sqrt(2/T^3)
    psi_star(gamma); the sign of C3 is fixed by the defining integral
    C3 = int (p q_xx + p^2 q^2) dx, the large-lambda expansion of log Sa,
    and the action identity  (1/2)||w||^2 = C1 + T C3.
    """
    T = spec.T
    C1 = math.sqrt(2.0 / T) * gamma_psi_prime(spec)
    if spec.gamma == 0.0:
        return ConservedSet(C1=0.0, C3=0.0)
    C3 = -math.sqrt(2.0 / T**3) * psi(spec.branch, spec.gamma)
    return ConservedSet(C1=C1, C3=C3)


def log_sa_expansion_coeffs(spec, phi_evaluator=None):
    """Coefficients (c1, c3) of 1/lambda and 1/lambda^3 in the expansion of
    log Sa(lambda) along the real axis.

    Related to the conserved quantities by c1 = -i C1 and c3 = i C3.  The
    phi part contributes its even moments; the soliton Blaschke factor
    log((lambda - i kappa)/(lambda + i kappa)) adds -2 i kappa / lambda
    + (2 i kappa^3/3) / lambda^3.
    """
    pe = phi_evaluator if phi_evaluator is not None else PhiEvaluator(spec)
    c1 = pe.moment(0)
    c3 = pe.moment(2)
    if spec.branch is Branch.SOLITON:
        kappa = spec.kappa
        c1 = c1 - 2.0j * kappa
        c3 = c3 + 2.0j * kappa**3 / 3.0
    return c1, c3
