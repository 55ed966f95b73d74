"""Rate-function layer: the two branches of psi, the gamma <-> alpha
equation, the soliton thresholds, the minimal action phi_star(alpha), and
the scaled (large-N) gamma-bar equation."""

import math
from dataclasses import dataclass
from enum import Enum

from .specfun import SQRT_4PI, polylog, polylog_prime_52


class NumericalFailure(RuntimeError):
    """A root solve could not bracket or converge."""


class Branch(Enum):
    NON_SOLITON = "ns"
    SOLITON = "s"


@dataclass(frozen=True)
class Problem:
    """The 1-to-1 instance: horizon T and terminal value q(T,0) = e^alpha."""

    T: float
    alpha: float

    def __post_init__(self):
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive and finite, got {self.T}")
        if not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha}")

    @property
    def target(self):
        """The branch-selecting combination sqrt(T/2) e^alpha."""
        return math.sqrt(self.T / 2.0) * math.exp(self.alpha)


@dataclass(frozen=True)
class SolutionSpec:
    """Everything needed to evaluate scattering data for one problem."""

    branch: Branch
    gamma: float
    kappa: float
    v0: float
    T: float

    def __post_init__(self):
        if self.gamma > 1.0:
            raise ValueError("gamma must be <= 1")
        if self.branch is Branch.SOLITON:
            if not (0.0 < self.gamma < 1.0):
                raise ValueError("soliton branch requires gamma in (0,1)")
            if not self.v0 > self.kappa:
                raise ValueError("contour height v0 must clear the pole at i*kappa")
        else:
            if self.kappa != 0.0:
                raise ValueError("non-soliton branch has kappa = 0")
        if not self.v0 > 0.0:
            raise ValueError("v0 must be positive")


@dataclass(frozen=True)
class ScaledProblem:
    """Upper-tail scaling T = 2N, alpha = N*alpha_bar, gamma = e^{-N*gamma_bar}."""

    N: float
    alpha_bar: float
    gamma_bar: float

    def to_solution_spec(self):
        T = 2.0 * self.N
        gamma = math.exp(-self.N * self.gamma_bar)
        return make_solution_spec(Branch.SOLITON, gamma, T)


def make_solution_spec(branch, gamma, T):
    """Fill kappa and the contour height v0 from the branch invariants."""
    if branch is Branch.SOLITON:
        kappa = math.sqrt((2.0 / T) * math.log(1.0 / gamma))
        v0 = kappa + max(1.0 / math.sqrt(T), 0.5 * kappa)
    else:
        kappa = 0.0
        v0 = 1.0 / math.sqrt(T)
    return SolutionSpec(branch=branch, gamma=gamma, kappa=kappa, v0=v0, T=T)


def psi(branch, gamma):
    """psi_star on the given branch.

    Non-soliton: Li_{5/2}(gamma)/sqrt(4 pi) on gamma <= 1.
    Soliton: the same minus (4/3) (log(1/gamma))^{3/2} on gamma in (0,1).
    """
    if branch is Branch.NON_SOLITON:
        if gamma > 1.0:
            raise ValueError("non-soliton branch requires gamma <= 1")
        return polylog(2.5, gamma) / SQRT_4PI
    if not (0.0 < gamma < 1.0):
        raise ValueError("soliton branch requires gamma in (0,1)")
    return polylog(2.5, gamma) / SQRT_4PI - (4.0 / 3.0) * math.log(1.0 / gamma) ** 1.5


def psi_prime(branch, gamma):
    """d psi_star / d gamma on the given branch.

    The non-soliton derivative Li_{3/2}(gamma)/(gamma sqrt(4 pi)) is
    strictly increasing on (-inf, 1] with range (0, c_star]; the soliton
    derivative adds 2 sqrt(log(1/gamma))/gamma and is strictly decreasing
    on (0,1) with range (c_star, inf).
    """
    if branch is Branch.NON_SOLITON:
        if gamma > 1.0:
            raise ValueError("non-soliton branch requires gamma <= 1")
        return polylog_prime_52(gamma) / SQRT_4PI
    if not (0.0 < gamma < 1.0):
        raise ValueError("soliton branch requires gamma in (0,1)")
    base = polylog_prime_52(gamma) / SQRT_4PI
    return base + 2.0 * math.sqrt(math.log(1.0 / gamma)) / gamma


def threshold_c_star():
    """Branch threshold c_star = Li'_{5/2}(1)/sqrt(4 pi) = zeta(3/2)/sqrt(4 pi)."""
    return polylog(1.5, 1.0) / SQRT_4PI


def c_star1_objective(gamma):
    """The bracketed ruling-out bound divided by gamma, whose infimum over
    gamma in (0,1] defines c_star_1.  The square root is the principal one
    (upper half plane for a positive imaginary part)."""
    z2 = complex(math.log(gamma), 2.0 * math.pi) ** 0.5
    return (polylog(1.5, gamma) / SQRT_4PI + 4.0 * z2.imag) / gamma


def c_star1_minimum():
    """Location and value of the minimum of c_star1_objective on (0,1].

    Coarse scan to bracket, then golden-section refinement.
    """
    grid = [k / 512.0 for k in range(1, 513)]
    values = [c_star1_objective(g) for g in grid]
    k = min(range(len(grid)), key=lambda i: values[i])
    a = grid[max(0, k - 1)]
    b = grid[min(len(grid) - 1, k + 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = c_star1_objective(c), c_star1_objective(d)
    for _ in range(120):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = c_star1_objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = c_star1_objective(d)
        if b - a < 1e-13:
            break
    gamma_star = 0.5 * (a + b)
    return gamma_star, c_star1_objective(gamma_star)


def threshold_c_star1():
    """Infimum over gamma in (0,1] of the exclusion bound c_star1_objective.

    The objective at gamma = 1 equals zeta(3/2)/sqrt(4 pi) + 4 sqrt(pi)
    = 7.8268, which already bounds the infimum from above; the minimum sits
    slightly inside, near gamma = 0.9967.
    """
    return c_star1_minimum()[1]


def classify(problem):
    """Non-soliton iff sqrt(T/2) e^alpha <= c_star (closed boundary)."""
    if problem.target <= threshold_c_star():
        return Branch.NON_SOLITON
    return Branch.SOLITON


def _bisect_newton(f, fprime, lo, hi, tol):
    """Bisection with Newton refinement on a strictly monotone f.

    f(lo) and f(hi) must straddle zero.  Returns x with |f(x)| <= tol.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NumericalFailure(
            f"root not bracketed on [{lo}, {hi}]: f = ({flo:.3e}, {fhi:.3e})"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or hi - lo < 1e-16 * max(1.0, abs(mid)):
            lo = hi = mid
            break
        if fm * flo < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    x = 0.5 * (lo + hi)
    for _ in range(8):
        fx = f(x)
        if abs(fx) <= tol:
            break
        dfx = fprime(x)
        if dfx == 0.0:
            break
        step = fx / dfx
        x_new = x - step
        if not (lo - 1e-12 <= x_new <= hi + 1e-12):
            break
        x = x_new
    return x


def _psi_second(branch, gamma):
    # Difference-quotient second derivative used only for Newton refinement.
    h = 1e-6 * max(1.0, abs(gamma))
    lo = gamma - h
    hi = gamma + h
    if branch is Branch.SOLITON:
        lo = max(lo, 1e-15)
        hi = min(hi, 1.0 - 1e-15)
    else:
        hi = min(hi, 1.0)
    return (psi_prime(branch, hi) - psi_prime(branch, lo)) / (hi - lo)


def solve_gamma(problem):
    """Solve sqrt(T/2) e^alpha = psi_star'(gamma) on the branch selected by
    classify, and return the fully populated SolutionSpec."""
    target = problem.target
    branch = classify(problem)
    tol = 1e-12 * max(1.0, target)

    if branch is Branch.NON_SOLITON:
        # gamma = 1 - e^{-u} maps u in [-40, 40] onto a bracket of
        # (-inf, 1] wide enough for any double-precision target.
        def f_u(u):
            return psi_prime(Branch.NON_SOLITON, 1.0 - math.exp(-u)) - target

        # psi'_ns(1) - psi'_ns(1 - eps) ~ sqrt(eps), so targets within
        # ~1e-8 of c_star are indistinguishable from the boundary in
        # double precision; snap them to gamma = 1.
        if target >= threshold_c_star() - 1e-8 * max(1.0, target):
            gamma = 1.0
        else:
            u = _bisect_newton(
                f_u,
                lambda u: _psi_second(branch, 1.0 - math.exp(-u)) * math.exp(-u),
                -40.0,
                40.0,
                tol,
            )
            gamma = 1.0 - math.exp(-u)
    else:
        eps = 1e-16

        def f_g(g):
            return psi_prime(Branch.SOLITON, g) - target

        # Just above c_star the root sits closer to 1 than double precision
        # can represent; clamp to the last representable interior point.
        if f_g(1.0 - eps) >= 0.0:
            gamma = 1.0 - eps
        else:
            gamma = _bisect_newton(
                f_g,
                lambda g: _psi_second(branch, g),
                eps,
                1.0 - eps,
                tol,
            )

    residual = abs(psi_prime(branch, gamma) - target)
    # The boundary snaps above carry an O(1e-8) residual by construction.
    snapped = gamma == 1.0 or gamma == 1.0 - 1e-16
    allowed = 3e-8 if snapped else max(tol, 1e-10 * max(1.0, target))
    if residual > allowed:
        raise NumericalFailure(
            f"gamma solve residual {residual:.3e} exceeds tolerance for {problem}"
        )
    return make_solution_spec(branch, gamma, problem.T)


def rate_value(problem):
    """Minimal action phi_star(alpha) = gamma e^alpha - psi_star(gamma)/sqrt(T/2)."""
    spec = solve_gamma(problem)
    scale = math.sqrt(problem.T / 2.0)
    return spec.gamma * math.exp(problem.alpha) - psi(spec.branch, spec.gamma) / scale


def _scaled_lhs_log(N, gamma_bar):
    # log of  (1/sqrt(4 pi N)) Li'_{5/2}(e^{-N gb}) + 2 sqrt(gb) e^{N gb}.
    # Both terms carry e^{N gb}: factoring it out leaves
    # N gb + log(2 sqrt(gb)) + log1p(Li_{3/2}(e^{-N gb})/(2 sqrt(gb) sqrt(4 pi N))),
    # which never overflows for N gb up to ~700.
    x = N * gamma_bar
    z = math.exp(-x) if x < 700.0 else 0.0
    corr = polylog(1.5, z) / (2.0 * math.sqrt(gamma_bar) * math.sqrt(4.0 * math.pi * N))
    return x + math.log(2.0 * math.sqrt(gamma_bar)) + math.log1p(corr)


def solve_gamma_scaled(N, alpha_bar):
    """Solve the scaled equation
    (1/sqrt(4 pi N)) Li'_{5/2}(e^{-N gb}) + 2 sqrt(gb) e^{N gb} = e^{N ab}
    for gamma_bar, working with logarithms of both sides."""
    if N < 1.0:
        raise ValueError("scaled solve requires N >= 1")
    if alpha_bar <= 0.0:
        raise ValueError("scaled solve requires alpha_bar > 0")
    rhs = N * alpha_bar

    def f(gb):
        return _scaled_lhs_log(N, gb) - rhs

    lo = 1e-8
    hi = alpha_bar + (10.0 + abs(math.log(2.0 * math.sqrt(alpha_bar)))) / N
    if f(lo) > 0.0 or f(hi) < 0.0:
        raise NumericalFailure("scaled gamma-bar solve failed to bracket")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    gb = 0.5 * (lo + hi)
    if abs(f(gb)) > 1e-10:
        raise NumericalFailure(f"scaled solve residual {abs(f(gb)):.3e} too large")
    return ScaledProblem(N=N, alpha_bar=alpha_bar, gamma_bar=gb)
