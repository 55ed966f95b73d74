"""Convolution kernels rho(s;t,x) and rho_tilde(s;t,x) by contour
quadrature, with the asymptotic split representation for the scaled
(upper-tail) regime.

Both kernels depend on (s, x) only through s+x (rho) or s-x (rho_tilde),
so everything is computed for x = 0 and shifted:
    rho(s;t,x) = rho0(s+x;t),   rho_tilde(s;t,x) = rhot0(s-x;t).
"""

import math
import threading
from dataclasses import dataclass

import numpy as np

from .rate import Branch
from .specfun import EXP_LIMIT, heat_kernel
from .scattering import PhiEvaluator


class KernelAccuracyError(RuntimeError):
    """A kernel evaluation violated its accuracy invariant."""


class _LagrangeTable:
    """Piecewise-uniform lookup with 4-point Lagrange interpolation.

    Each segment is (lo, hi, grid0, h, values) where values cover
    [lo - 2h, hi + 2h] so the stencil never leaves the data.  Queries
    outside every segment return 0 (the kernels are negligible there by
    window construction).  Accuracy matches a cubic spline, but the
    evaluation is pure index arithmetic, which matters when the Fredholm
    assembly reads n^2 points per (t, x).
    """

    def __init__(self, segments):
        self.segments = segments

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        flat_x = x.ravel()
        flat_out = out.ravel()
        remaining = np.ones(flat_x.shape, dtype=bool)
        for lo, hi, grid0, h, vals in self.segments:
            mask = remaining & (flat_x >= lo) & (flat_x <= hi)
            if not mask.any():
                continue
            xq = flat_x[mask]
            pos = (xq - grid0) / h
            i = np.clip(np.floor(pos).astype(np.intp), 1, vals.size - 3)
            th = pos - i
            w_m1 = -th * (th - 1.0) * (th - 2.0) / 6.0
            w_0 = (th + 1.0) * (th - 1.0) * (th - 2.0) / 2.0
            w_p1 = -(th + 1.0) * th * (th - 2.0) / 2.0
            w_p2 = (th + 1.0) * th * (th - 1.0) / 6.0
            flat_out[mask] = (
                w_m1 * vals[i - 1] + w_0 * vals[i] + w_p1 * vals[i + 1] + w_p2 * vals[i + 2]
            )
            remaining &= ~mask
        return out


@dataclass(frozen=True)
class ContourQuad:
    """Gauss-Legendre panel rule for the lambda contours R +/- i v0.

    Truncated to |Re lambda| <= half_width, sized so the Gaussian factor
    e^{-(half_width^2 - v0^2) min(t, T-t)/2} is below 4e-18 of its peak.
    """

    v0: float
    half_width: float
    nodes: np.ndarray  # real abscissae u
    weights: np.ndarray

    @property
    def n_nodes(self):
        return self.nodes.size


_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


def build_contour(spec, t, node_factor=1.0):
    """Contour rule serving time t: half width sqrt(80/min(t,T-t) + v0^2),
    64 Gauss-Legendre nodes per unit (16-node panels), at least 256."""
    T, v0 = spec.T, spec.v0
    tau = min(t, T - t)
    if tau <= 0.0:
        raise ValueError("contour rule requires 0 < t < T")
    # 82 rather than the bare 80 keeps the >= 40 margin check clear of
    # floating-point ties
    half_width = math.sqrt(82.0 / tau + v0 * v0)
    n = max(256, int(math.ceil(64.0 * half_width * node_factor)))
    n_panels = (n + 15) // 16
    edges = np.linspace(-half_width, half_width, n_panels + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1] - edges[0])
    nodes = (mids[:, None] + half * _GL16_X[None, :]).ravel()
    weights = np.broadcast_to(half * _GL16_W[None, :], (n_panels, 16)).ravel().copy()
    quad = ContourQuad(v0=v0, half_width=half_width, nodes=nodes, weights=weights)
    _check_contour(quad, tau)
    return quad


def _check_contour(quad, tau):
    margin = (quad.half_width**2 - quad.v0**2) * tau / 2.0
    if margin < 40.0:
        raise KernelAccuracyError(
            f"contour truncation margin {margin:.1f} < 40; kernel tails unresolved"
        )


def _upper_integrand_exponent(spec, lam, t, sigma, phi_vals):
    # i lam sigma - lam^2 t/2 - phi(lam); sigma may broadcast against lam
    return 1j * lam * sigma - lam * lam * (t / 2.0) - phi_vals


def _blaschke_inv(spec, lam):
    if spec.branch is Branch.SOLITON:
        return (lam + 1j * spec.kappa) / (lam - 1j * spec.kappa)
    return np.ones_like(lam)


def _blaschke_fwd(spec, lam):
    if spec.branch is Branch.SOLITON:
        return (lam - 1j * spec.kappa) / (lam + 1j * spec.kappa)
    return np.ones_like(lam)


class KernelEvaluator:
    """Evaluates rho0 and rhot0 with per-time caching of contour rules,
    phi values along the contour, and dense cubic-spline sections.

    The spline sections serve the Fredholm solver, which reads the same
    kernel sections for every quadrature node pair; direct (uncached)
    evaluation is also exposed for single points and cross-checks.
    A lock guards cache mutation so threads may share one evaluator.
    """

    def __init__(self, spec, node_factor=1.0, section_h_factor=1.0, n_phi_nodes=400):
        self.spec = spec
        self.node_factor = float(node_factor)
        self.section_h_factor = float(section_h_factor)
        self.phi = PhiEvaluator(spec, n_nodes=int(n_phi_nodes))
        self._contours = {}
        self._phi_on_contour = {}
        self._rho_tables = {}
        self._rhot_tables = {}
        self._lock = threading.Lock()

    # -- contour / phi caching -------------------------------------------

    def contour(self, t):
        key = round(float(t), 12)
        with self._lock:
            quad = self._contours.get(key)
        if quad is None:
            quad = build_contour(self.spec, t, node_factor=self.node_factor)
            with self._lock:
                self._contours[key] = quad
        return quad

    def _phi_upper(self, t):
        # phi on R + i v0 for the contour serving t; the lower contour
        # needs phi(u - i v0) = -conj(phi(u + i v0)).
        key = round(float(t), 12)
        with self._lock:
            cached = self._phi_on_contour.get(key)
        if cached is None:
            quad = self.contour(t)
            lam = quad.nodes + 1j * quad.v0
            cached = self.phi(lam)
            with self._lock:
                self._phi_on_contour[key] = cached
        return cached

    # -- direct evaluation -----------------------------------------------

    def rho0(self, t, sigma):
        """rho(sigma; t, 0) by direct contour quadrature, vectorized in sigma."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        quad = self.contour(t)
        lam = quad.nodes + 1j * quad.v0
        phi_vals = self._phi_upper(t)
        blas = _blaschke_inv(self.spec, lam)
        out = np.empty(sigma.shape)
        peak = self._rho_peak_scale(t)
        step = max(1, (1 << 22) // quad.n_nodes)
        for i in range(0, sigma.size, step):
            sig = sigma[i : i + step, None]
            expo = 1j * lam[None, :] * sig - lam[None, :] ** 2 * (t / 2.0) - phi_vals[None, :]
            terms = quad.weights[None, :] * blas[None, :] * np.exp(expo)
            vals = terms.sum(axis=1) / (2.0 * math.pi)
            floor = float(np.max(np.abs(terms).sum(axis=1))) / (2.0 * math.pi) * 1e-15
            self._check_imag(vals, peak, floor, "rho")
            out[i : i + step] = vals.real
        return out

    def rhot0(self, t, sigma):
        """rho_tilde(sigma; t, 0) by direct contour quadrature."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        spec = self.spec
        quad = self.contour(t)
        lam = quad.nodes - 1j * quad.v0
        phi_vals = -np.conj(self._phi_upper(t))
        blas = _blaschke_fwd(spec, lam)
        out = np.empty(sigma.shape)
        peak = self._rhot_peak_scale(t)
        step = max(1, (1 << 22) // quad.n_nodes)
        for i in range(0, sigma.size, step):
            sig = sigma[i : i + step, None]
            expo = (
                1j * lam[None, :] * sig
                - lam[None, :] ** 2 * ((spec.T - t) / 2.0)
                + phi_vals[None, :]
            )
            terms = quad.weights[None, :] * blas[None, :] * np.exp(expo)
            vals = (-spec.gamma) * terms.sum(axis=1) / (2.0 * math.pi)
            floor = (
                abs(spec.gamma)
                * float(np.max(np.abs(terms).sum(axis=1)))
                / (2.0 * math.pi)
                * 1e-15
            )
            self._check_imag(vals, max(peak, 1e-300), floor, "rho_tilde")
            out[i : i + step] = vals.real
        return out

    def _check_imag(self, vals, peak, noise_floor, name):
        # the imaginary part must vanish up to the larger of 1e-8 of the
        # kernel peak and the roundoff floor of the (possibly amplified)
        # oscillatory sum
        imax = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
        if imax > max(1e-8 * peak, 100.0 * noise_floor):
            raise KernelAccuracyError(
                f"{name} imaginary residual {imax:.3e} exceeds 1e-8 of peak {peak:.3e}"
            )

    def _rho_peak_scale(self, t):
        spec = self.spec
        peak = heat_kernel(t, 0.0)
        if spec.branch is Branch.SOLITON:
            peak += 2.0 * spec.kappa * math.exp(min(spec.kappa**2 * t / 2.0, EXP_LIMIT))
        return peak

    def _rhot_peak_scale(self, t):
        spec = self.spec
        peak = abs(spec.gamma) * heat_kernel(spec.T - t, 0.0)
        if spec.branch is Branch.SOLITON:
            peak += 2.0 * spec.kappa * math.exp(-spec.kappa**2 * t / 2.0)
        return peak

    # -- decay windows -----------------------------------------------------

    def window(self, t):
        """Half-line truncation S with kernel envelopes below 1e-12 of peak,
        capped at 20 sqrt(T) + 10/max(kappa, 1/sqrt(T))."""
        spec = self.spec
        cap = 20.0 * math.sqrt(spec.T) + 10.0 / max(spec.kappa, 1.0 / math.sqrt(spec.T))
        s = np.linspace(0.0, cap, 4001)
        env = self._rho_envelope(t, s) + self._rhot_envelope(t, s)
        peak = max(float(env[0]), 1e-300)
        below = np.nonzero(env <= 1e-12 * peak)[0]
        if below.size == 0:
            return cap
        return float(s[below[0]])

    def _rho_envelope(self, t, s):
        # Gaussian part (with a factor for the Blaschke boost near the
        # light cone) plus the residue exponential, which only exists for
        # s < kappa t and dies into the Gaussian a few widths beyond.
        spec = self.spec
        env = 5.0 * heat_kernel(t, s)
        if spec.branch is Branch.SOLITON:
            k = spec.kappa
            cone = s <= k * t + 6.0 * math.sqrt(t) + 1.0
            env = env + np.where(
                cone, 4.0 * k * np.exp(np.minimum(k * k * t / 2.0 - k * s, EXP_LIMIT)), 0.0
            )
        return env

    def _rhot_envelope(self, t, s):
        spec = self.spec
        tm = spec.T - t
        env = 5.0 * abs(spec.gamma) * heat_kernel(tm, s)
        if spec.branch is Branch.SOLITON:
            k = spec.kappa
            cone = s <= k * tm + 6.0 * math.sqrt(tm) + 1.0
            env = env + np.where(cone, 4.0 * k * np.exp(-k * k * t / 2.0 - k * s), 0.0)
        return env

    # -- table-backed sections ----------------------------------------------

    def _table_segments(self, t, gauss_width, lo, hi):
        # Fine spacing where the Gaussian core lives, coarser on the
        # exponential tails; 4-point Lagrange on these grids interpolates
        # to ~1e-9 of the local scale.
        spec = self.spec
        h_core = max(0.005 * gauss_width, 5e-5) * self.section_h_factor
        h_tail = min(0.008 / max(spec.kappa, 0.25), 0.03) * self.section_h_factor
        core_hw = 9.0 * gauss_width + 4.0 * h_tail
        spans = []
        if lo < -core_hw:
            spans.append((lo, min(-core_hw, hi), h_tail))
        a, b = max(lo, -core_hw), min(hi, core_hw)
        if a < b:
            spans.append((a, b, h_core))
        if hi > core_hw:
            spans.append((max(core_hw, lo), hi, h_tail))
        return spans

    def _build_table(self, t, which, lo, hi):
        gauss_width = math.sqrt(t if which == "rho" else self.spec.T - t)
        fn = self.rho0 if which == "rho" else self.rhot0
        segs = []
        for a, b, h in self._table_segments(t, gauss_width, lo, hi):
            grid = np.arange(a - 2.0 * h, b + 3.0 * h, h)
            segs.append((a, b, grid[0], h, fn(t, grid)))
        return _LagrangeTable(segs)

    def _table(self, cache, which, t, lo, hi):
        key = round(float(t), 12)
        with self._lock:
            entry = cache.get(key)
        if entry is not None and entry[0] <= lo and entry[1] >= hi:
            return entry[2]
        pad = 0.5
        new_lo = min(lo - pad, entry[0] if entry else lo - pad)
        new_hi = max(hi + pad, entry[1] if entry else hi + pad)
        table = self._build_table(t, which, new_lo, new_hi)
        with self._lock:
            cache[key] = (new_lo, new_hi, table)
        return table

    def rho_table(self, t, lo, hi):
        """Fast lookup table for rho0(.;t) on [lo, hi] (0 outside);
        cached per t and extended on out-of-range requests."""
        return self._table(self._rho_tables, "rho", t, lo, hi)

    def rhot_table(self, t, lo, hi):
        """Fast lookup table for rhot0(.;t) on [lo, hi] (0 outside)."""
        return self._table(self._rhot_tables, "rhot", t, lo, hi)


def rho(spec, quad, s, t, x, phi_evaluator=None):
    """rho(s;t,x): Fourier transform of the dressed reflection coefficient
    along R + i v0.  Reference (uncached) evaluation path."""
    if not (0.0 < t < spec.T):
        raise ValueError("rho requires 0 < t < T")
    pe = phi_evaluator if phi_evaluator is not None else PhiEvaluator(spec)
    lam = quad.nodes + 1j * quad.v0
    phi_vals = pe(lam)
    sigma = float(s) + float(x)
    expo = 1j * lam * sigma - lam * lam * (t / 2.0) - phi_vals
    if float(np.max(expo.real)) > EXP_LIMIT:
        raise OverflowError("rho integrand exponent out of range")
    val = complex(
        np.sum(quad.weights * _blaschke_inv(spec, lam) * np.exp(expo)) / (2.0 * math.pi)
    )
    peak = heat_kernel(t, 0.0) + (
        2.0 * spec.kappa * math.exp(spec.kappa**2 * t / 2.0)
        if spec.branch is Branch.SOLITON
        else 0.0
    )
    if abs(val.imag) > 1e-8 * peak:
        raise KernelAccuracyError(f"rho imaginary residual {val.imag:.3e}")
    return val.real


def rho_tilde(spec, quad, s, t, x, phi_evaluator=None):
    """rho_tilde(s;t,x): Fourier transform of the dressed conjugate
    reflection coefficient along R - i v0."""
    if not (0.0 < t < spec.T):
        raise ValueError("rho_tilde requires 0 < t < T")
    pe = phi_evaluator if phi_evaluator is not None else PhiEvaluator(spec)
    lam = quad.nodes - 1j * quad.v0
    phi_vals = pe(lam)
    sigma = float(s) - float(x)
    expo = 1j * lam * sigma - lam * lam * ((spec.T - t) / 2.0) + phi_vals
    if float(np.max(expo.real)) > EXP_LIMIT:
        raise OverflowError("rho_tilde integrand exponent out of range")
    val = complex(
        (-spec.gamma)
        * np.sum(quad.weights * _blaschke_fwd(spec, lam) * np.exp(expo))
        / (2.0 * math.pi)
    )
    peak = abs(spec.gamma) * heat_kernel(spec.T - t, 0.0) + (
        2.0 * spec.kappa * math.exp(-spec.kappa**2 * t / 2.0)
        if spec.branch is Branch.SOLITON
        else 0.0
    )
    if abs(val.imag) > 1e-8 * max(peak, 1e-300):
        raise KernelAccuracyError(f"rho_tilde imaginary residual {val.imag:.3e}")
    return val.real


def rho_asymptotic(scaled, s, t, x):
    """Leading split of rho in the scaled regime T = 2N: heat-kernel term
    plus the soliton residue 2 sqrt(gb) e^{gb t/2 - sqrt(gb)(s+x)} on the
    indicator (s+x)/t < sqrt(gb) - 1/sqrt(t)."""
    gb = scaled.gamma_bar
    sigma = s + x
    val = heat_kernel(t, sigma)
    if sigma / t < math.sqrt(gb) - 1.0 / math.sqrt(t):
        val += 2.0 * math.sqrt(gb) * math.exp(gb * t / 2.0 - math.sqrt(gb) * sigma)
    return val


def rho_asymptotic_envelope(scaled, s, t, x):
    """Width of the error band around rho_asymptotic (unit constants):
    e^{-gb N} times both terms plus the heat-kernel correction factor
    1/max(|sigma/t - sqrt(gb)|, 1/sqrt(t))."""
    gb, N = scaled.gamma_bar, scaled.N
    sigma = s + x
    hk = heat_kernel(t, sigma)
    soliton = (
        2.0 * math.sqrt(gb) * math.exp(gb * t / 2.0 - math.sqrt(gb) * sigma)
        if sigma / t < math.sqrt(gb) - 1.0 / math.sqrt(t)
        else 0.0
    )
    small = math.exp(-gb * N)
    hk_corr = hk / max(abs(sigma / t - math.sqrt(gb)), 1.0 / math.sqrt(t))
    return small * (hk + soliton) + hk_corr
