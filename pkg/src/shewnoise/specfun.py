"""Special functions shared by all modules: polylogarithms on (-inf, 1],
the truncated heat kernel, hyperbolic secant, and overflow-guarded
exponentials."""

import math

import numpy as np

SQRT_4PI = math.sqrt(4.0 * math.pi)

# Largest real exponent we allow before exp() is considered out of range.
EXP_LIMIT = 700.0

_POLYLOG_ORDERS = (1.5, 2.5)

# 200-node Gauss-Legendre rule, built once; used by the Bose-Einstein
# integral on each subinterval of the split domain.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(200)


class PolylogOrder:
    """The two polylogarithm orders in use, 3/2 and 5/2."""

    THREE_HALVES = 1.5
    FIVE_HALVES = 2.5


def _check_order(s):
    if s not in _POLYLOG_ORDERS:
        raise ValueError(f"polylog order must be 3/2 or 5/2, got {s}")


def _polylog_series(s, z):
    # Direct power series; |z| <= 0.5 so the tail is below 1e-16 well
    # before 60 terms.
    total = 0.0
    zk = 1.0
    for k in range(1, 80):
        zk *= z
        term = zk / k**s
        total += term
        if abs(term) < 1e-18 * max(1.0, abs(total)):
            break
    return total


def _gl_on_interval(a, b):
    half = 0.5 * (b - a)
    return a + half * (_GL_NODES + 1.0), half * _GL_WEIGHTS


def _polylog_bose_einstein(s, z):
    # Li_s(z) = (z / Gamma(s)) * int_0^inf u^{s-1} / (e^u - z) du, valid
    # for z <= 1 with s > 1.  Split domain: [0,1] under u = v^2 to tame
    # the u^{s-2} behaviour at 0 (worst case s=3/2, z=1), then geometric
    # panels out to where e^{-u} has died relative to |z|.
    gamma_s = math.gamma(s)

    v, wv = _gl_on_interval(0.0, 1.0)
    u = v * v
    core = np.where(u > 1e-300, u ** (s - 1.0), 0.0)
    integral = np.sum(wv * 2.0 * v * core / (np.exp(u) - z))

    u_hi = max(40.0, math.log1p(abs(z)) + 45.0)
    edges = [1.0]
    while edges[-1] < u_hi:
        edges.append(min(edges[-1] * 2.0, u_hi))
    for a, b in zip(edges[:-1], edges[1:]):
        u, wu = _gl_on_interval(a, b)
        integral += np.sum(wu * u ** (s - 1.0) / (np.exp(u) - z))

    return z * integral / gamma_s


def polylog(s, z):
    """Polylogarithm Li_s(z) for s in {3/2, 5/2} and real z <= 1.

    Power series for |z| <= 0.5, Bose-Einstein integral otherwise;
    absolute accuracy is ~1e-12, comfortably inside the 1e-10 target.

    Raises
    ------
    ValueError
        If z > 1 (the admissible range ends at 1) or s is unsupported.
    """
    _check_order(s)
    z = float(z)
    if z > 1.0:
        raise ValueError(f"polylog requires z <= 1, got {z}")
    if z == 0.0:
        return 0.0
    if abs(z) <= 0.5:
        return _polylog_series(s, z)
    return float(_polylog_bose_einstein(s, z))


def polylog_prime_52(z):
    """Derivative of Li_{5/2}: Li'_{5/2}(z) = Li_{3/2}(z)/z, with the
    removable singularity at z = 0 filled by its limit 1."""
    z = float(z)
    if z > 1.0:
        raise ValueError(f"polylog_prime_52 requires z <= 1, got {z}")
    if abs(z) < 1e-8:
        # Li_{3/2}(z)/z = 1 + z/2^{3/2} + O(z^2)
        return 1.0 + z / 2.0**1.5
    return polylog(1.5, z) / z


def heat_kernel(t, x):
    """Heat kernel exp(-x^2/(2t))/sqrt(2 pi t), truncated to 0 for t <= 0.

    Accepts scalars or arrays and broadcasts like numpy.
    """
    t, x = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
    tsafe = np.where(t > 0.0, t, 1.0)
    val = np.exp(-(x * x) / (2.0 * tsafe)) / np.sqrt(2.0 * np.pi * tsafe)
    out = np.where(t > 0.0, val, 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def sech(x):
    """Hyperbolic secant, overflow-safe for large |x|."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    out = 2.0 * np.exp(-a) / (1.0 + np.exp(-2.0 * a))
    if out.ndim == 0:
        return float(out)
    return out


def exp_complex(z):
    """exp(z) for complex z (scalar or array), raising OverflowError if any
    real part exceeds EXP_LIMIT instead of silently returning inf."""
    z = np.asarray(z, dtype=complex)
    if z.size and float(np.max(z.real)) > EXP_LIMIT:
        raise OverflowError(
            f"combined exponent {float(np.max(z.real)):.1f} exceeds {EXP_LIMIT}; "
            "rescale the grid"
        )
    out = np.exp(z)
    if out.ndim == 0:
        return complex(out)
    return out
