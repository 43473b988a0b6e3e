"""Radial heat kernel via the perturbation series, and the assembled
transition density on the glued space.

The signed radial diffusion is a skew Brownian motion perturbed by a
bounded-window drift.  Its transition density (with respect to the
kappa-weighted reference measure) is built as a series whose base term is
the explicit skew kernel and whose higher terms convolve the previous term
against drift times kernel gradient.  The series is summed on a base time
window; larger times are reached by composing kernels through the
semigroup property.

Numerical scheme
----------------
* The space integral in each series term is done in closed form against a
  piecewise-linear interpolant of the previous term: the gradient of the
  skew kernel is, per sign region, an exact derivative of Gaussians, so
  each linear piece integrates to Gaussian and error-function evaluations.
  This absorbs the 1/s endpoint singularity of the time integral exactly.
* The remaining time integral uses Gauss-Legendre panels after the
  square-root substitutions s = u^2 near both endpoints.
* Terms are tabulated on a shared (time x space x space) grid; pointwise
  values interpolate the smooth ratio term/base-kernel and multiply back
  the exact base kernel.
"""

from __future__ import annotations

import csv
import json
import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RectBivariateSpline
from scipy.special import ndtr

from .analytic import (SkewMeasure, _skew_coeffs, chi, drift_at_zero_minus,
                       drift_b, gauss_kernel, killed_kernel_q, log_chi,
                       skew_density)
from .model import (HALF_LINE, SPACE3, BranchPoint, ModelError, ModelParams,
                    NumericsError, SingularityError)

_trapz = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "KernelOptions", "KernelGrid", "BoundFit", "ParametrixEngine",
    "get_engine", "parametrix_term", "radial_kernel", "assemble_full_kernel",
    "build_kernel_grid", "fit_gaussian_bounds", "full_kernel_mass",
]


@dataclass(frozen=True)
class KernelOptions:
    """Tuning knobs of the series engine."""

    series_depth: int = 8           # highest term retained
    time_levels: int = 40           # tabulation levels on (0, t0]
    n_gauss: int = 12               # Gauss-Legendre points per half window
    base_time: float | None = None  # series window; None = adaptive
    r_extent: float = 10.0          # tabulation half-width
    fine_spacing: float = 0.02      # composition grid spacing
    tolerance: float = 1e-6         # quadrature tolerance (clamping scale)
    clamp_factor: float = 10.0      # negative values beyond factor*tol fail
    max_extension: int = 64         # refuse t > max_extension * t0

    def key(self):
        return (self.series_depth, self.time_levels, self.n_gauss,
                self.base_time, self.r_extent, self.fine_spacing,
                self.tolerance, self.clamp_factor, self.max_extension)


def _simpson_weights(n, h):
    """Composite Simpson weights for n equally spaced points (n odd)."""
    if n % 2 == 0:
        raise ValueError("Simpson weights need an odd point count")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _space_grid(extent):
    """Nonuniform symmetric grid: fine near the gluing point, coarser in
    the tails.  Always contains 0 exactly."""
    seg = np.concatenate([
        np.arange(0.0, 2.5, 0.025),
        np.arange(2.5, 4.0, 0.05),
        np.arange(4.0, extent + 1e-9, 0.15),
    ])
    seg = seg[seg <= extent]
    if seg[-1] < extent:
        seg = np.append(seg, extent)
    grid = np.unique(np.concatenate([-seg[::-1], seg]))
    return grid


class ParametrixEngine:
    """Series tabulation and evaluation of the radial heat kernel for one
    parameter set.  Engines are cached; use :func:`get_engine`."""

    def __init__(self, params: ModelParams, opts: KernelOptions | None = None):
        self.params = params
        self.opts = opts or KernelOptions()
        self.kappa = params.kappa
        self.skew = SkewMeasure(self.kappa)
        self.grid = _space_grid(self.opts.r_extent)
        self._terms = None            # list of (M, N, N) arrays
        self._ratio = None            # (M, N, N): sum of terms / base term
        self._term_ratios = None      # per-term ratio tables
        self.t0 = None
        self.tau = None
        self.truncation_estimate = None
        self._spline_cache = {}
        self._fine_cache = {}
        b_vals = drift_b(self.grid, params)
        self.drift_free = bool(np.max(np.abs(b_vals)) < 1e-14
                               and abs(drift_at_zero_minus(params)) < 1e-14)

    # -- measures ----------------------------------------------------------

    def lam_hat(self, r):
        """Density of the kappa-weighted reference measure."""
        return self.skew.density(r)

    def ell_density(self, r):
        """Density of the symmetric (speed) measure of the radial process."""
        r = np.asarray(r, dtype=float)
        pos = np.exp(-2.0 * self.params.gamma * np.abs(r)) / np.pi
        neg = self.params.weight_p * self.params.rho(-r)
        return np.where(r >= 0, pos, neg)

    def measure_ratio(self, r):
        """d(ell)/d(lam_hat) at r."""
        return self.ell_density(r) / self.lam_hat(r)

    def symmetric_kernel(self, t, r1, r2):
        """Transition density w.r.t. the symmetric measure; this is the
        object that is exactly symmetric in (r1, r2)."""
        return self.phat(t, r1, r2) / self.measure_ratio(r2)

    # -- series construction ------------------------------------------------

    def _ensure_built(self):
        if self._terms is not None:
            return
        t0 = self.opts.base_time or self._choose_base_time()
        self._build_series(t0)

    def _choose_base_time(self):
        """Largest dyadic fraction of the horizon whose empirical term
        ratio stays below 1/2, starting from T/8."""
        T = self.params.horizon_T
        if self.drift_free:
            return T / 2.0
        candidates = [T / 2 ** k for k in range(1, 7)]
        start = T / 8.0
        order = sorted(candidates, key=lambda c: (c < start, abs(c - start)))
        # probe from the largest candidate downward with a cheap build
        probe = ParametrixEngine(
            self.params,
            replace(self.opts, series_depth=2, time_levels=6, n_gauss=6,
                    base_time=1.0))  # base_time placeholder, set per probe
        for cand in sorted(candidates, reverse=True):
            probe._terms = None
            probe._build_series(cand, probe_only=True)
            m1 = np.abs(probe._terms[1][-1]).max()
            m2 = np.abs(probe._terms[2][-1]).max()
            if m1 == 0.0 or m2 / m1 <= 0.5:
                return cand
        return candidates[-1]

    def _build_series(self, t0, probe_only=False):
        opts = self.opts
        M = opts.time_levels if not probe_only else 6
        depth = opts.series_depth if not probe_only else 2
        ng = opts.n_gauss if not probe_only else 6
        X = self.grid
        N = X.size
        self.t0 = float(t0)
        self.tau = t0 * np.arange(1, M + 1) / M

        A0, B0 = _skew_coeffs(X[:, None], X[None, :], self.kappa)
        diff = X[None, :] - X[:, None]
        summ = X[None, :] + X[:, None]

        def pz_matrix(t):
            return A0 * gauss_kernel(t, diff) + B0 * gauss_kernel(t, summ)

        terms = [np.stack([pz_matrix(t) for t in self.tau])]

        # static piece structures
        dx = np.diff(X)
        mid = 0.5 * (X[:-1] + X[1:])
        neg_pieces = np.nonzero(mid < 0)[0]
        pos_pieces = np.nonzero(mid > 0)[0]
        gamma = self.params.gamma
        b_node_neg = drift_b(np.minimum(X, -1e-300), self.params)
        b_node_neg[X >= 0] = drift_at_zero_minus(self.params)
        b_pos = -gamma

        # one-sided drift values at piece endpoints; the inner integral of
        # the recursion runs against the weighted measure, so the drift
        # carries the side density of that measure
        w_neg = 2.0 / (1.0 + self.kappa)
        w_pos = 2.0 / (1.0 - self.kappa)
        bl = {"neg": w_neg * b_node_neg[neg_pieces],
              "pos": np.full(pos_pieces.size, w_pos * b_pos)}
        br = {"neg": w_neg * b_node_neg[neg_pieces + 1],
              "pos": np.full(pos_pieces.size, w_pos * b_pos)}
        lidx = {"neg": neg_pieces, "pos": pos_pieces}
        ridx = {"neg": neg_pieces + 1, "pos": pos_pieces + 1}
        pdx = {"neg": dx[neg_pieces], "pos": dx[pos_pieces]}

        # branch coefficients of grad p^Z in its first argument, as vectors
        # over the target point r2 (columns)
        k = self.kappa
        tpos = X > 0
        tneg = X < 0
        a_from_pos = np.where(tpos, (1 - k) / 2, (1 - k * k) / 2)
        b_from_pos = np.where(tpos, (1 - k) * k / 2, 0.0)
        a_from_neg = np.where(tneg, (1 + k) / 2, (1 - k * k) / 2)
        b_from_neg = np.where(tneg, -(1 + k) * k / 2, 0.0)
        acoef = {"neg": a_from_neg, "pos": a_from_pos}
        bcoef = {"neg": b_from_neg, "pos": b_from_pos}
        use_plus = abs(k) > 0.0

        xg, wg = np.polynomial.legendre.leggauss(ng)
        xg = 0.5 * (xg + 1.0)
        wg = 0.5 * wg

        def prev_matrix(n, tk):
            """k_{n-1} at time tk on the (r1, r3) grid."""
            if n == 1:
                return pz_matrix(tk)
            prev = terms[n - 1]
            if tk <= self.tau[0]:
                return (tk / self.tau[0]) * prev[0]
            j = int(np.searchsorted(self.tau, tk)) - 1
            j = min(j, M - 2)
            w = (tk - self.tau[j]) / (self.tau[j + 1] - self.tau[j])
            return (1.0 - w) * prev[j] + w * prev[j + 1]

        for n in range(1, depth + 1):
            kn = np.zeros((M, N, N))
            for j in range(M):
                tj = self.tau[j]
                half = math.sqrt(tj / 2.0)
                # s = u^2 on the lower half, s = tj - v^2 on the upper half
                u = half * xg
                s_lo = u * u
                w_lo = 2.0 * u * half * wg
                s_hi = tj - u * u
                w_hi = w_lo
                svals = np.concatenate([s_lo, s_hi])
                sweights = np.concatenate([w_lo, w_hi])
                acc = np.zeros((N, N))
                for s, ws in zip(svals, sweights):
                    if s <= 0.0 or s >= tj:
                        continue
                    K = prev_matrix(n, tj - s)
                    sq = math.sqrt(s)
                    Gm = gauss_kernel(s, diff)
                    Cm = ndtr(diff / sq)
                    if use_plus:
                        Gp = gauss_kernel(s, summ)
                        Cp = ndtr(summ / sq)
                    inc = np.zeros((N, N))
                    for side in ("neg", "pos"):
                        li, ri = lidx[side], ridx[side]
                        fL = K[:, li] * bl[side][None, :]
                        fR = K[:, ri] * br[side][None, :]
                        slope = (fR - fL) / pdx[side][None, :]
                        Mm = (fR @ Gm[ri, :] - fL @ Gm[li, :]
                              - slope @ (Cm[li, :] - Cm[ri, :]))
                        inc += acoef[side][None, :] * Mm
                        if use_plus:
                            Mp = (fR @ Gp[ri, :] - fL @ Gp[li, :]
                                  - slope @ (Cp[ri, :] - Cp[li, :]))
                            inc += bcoef[side][None, :] * Mp
                    acc += ws * inc
                kn[j] = acc
            terms.append(kn)
            if not probe_only and np.abs(kn[-1]).max() < 1e-15:
                break  # drift-free or fully converged; higher terms vanish

        self._terms = terms
        if probe_only:
            return
        base = terms[0]
        tiny = np.maximum(base, 1e-300)
        # where the base kernel has underflowed the quotient is pure
        # rounding noise; the terms share its Gaussian decay, so zero the
        # correction there and cap legitimate far-tail growth
        dead = base < 1e-30
        ratios = []
        for tm in terms:
            r = np.clip(tm / tiny, -1e8, 1e8)
            r[dead] = 0.0
            ratios.append(r)
        ratios[0][dead] = 1.0
        self._term_ratios = ratios
        total = sum(self._term_ratios[1:], np.zeros_like(base)) + 1.0
        # the summed ratio spans many orders of magnitude in the tails;
        # interpolating its logarithm keeps the error relative
        self._log_ratio = np.log(np.clip(total, 1e-12, 1e12))
        maxima = [np.abs(t[-1]).max() for t in terms]
        if len(maxima) > 2 and maxima[-2] > 0:
            r = min(maxima[-1] / maxima[-2], 0.9)
            self.truncation_estimate = maxima[-1] * r / (1.0 - r)
        else:
            self.truncation_estimate = 0.0
        self.term_maxima = maxima

    # -- interpolation on the base window -----------------------------------

    def _quadrant_splines(self, table_id, level, table):
        key = (table_id, level)
        if key not in self._spline_cache:
            X = self.grid
            i0 = int(np.searchsorted(X, 0.0))
            halves = [(slice(0, i0 + 1)), (slice(i0, None))]
            spls = []
            for sx in halves:
                for sy in halves:
                    spls.append((sx, sy, RectBivariateSpline(
                        X[sx], X[sy], table[sx, sy], kx=3, ky=3)))
            self._spline_cache[key] = spls
        return self._spline_cache[key]

    def _time_pairs(self, t, limit_value):
        """Bracketing tabulation levels and weights for linear-in-time
        interpolation; below the first level blend toward limit_value."""
        if t <= self.tau[0]:
            w = t / self.tau[0]
            return [(0, w)], (1.0 - w) * limit_value
        j = min(int(np.searchsorted(self.tau, t)) - 1, self.tau.size - 2)
        w = (t - self.tau[j]) / (self.tau[j + 1] - self.tau[j])
        return [(j, 1.0 - w), (j + 1, w)], 0.0

    @staticmethod
    def _quadrant_eval(spls, r1, r2):
        """Evaluate a quadrant-split spline family at scalar r1 and vector
        r2.  Quadrant sides share the zero node; points assign to exactly
        one quadrant (zero goes with the nonnegative side)."""
        out = np.empty(r2.shape)
        xside = 0 if r1 < 0.0 else 1
        mneg = r2 < 0.0
        for sx, sy, spl in spls:
            x_is_neg = sx.start == 0
            if (0 if x_is_neg else 1) != xside:
                continue
            mask = mneg if sy.start == 0 else ~mneg
            if np.any(mask):
                out[mask] = spl(r1, r2[mask], grid=False)
        return out

    def _interp_table(self, table_id, tables, t, r1, r2, limit_value):
        """Interpolate a tabulated smooth field at (t, r1, r2); r2 may be a
        vector.  Quadrant-wise bicubic in space, linear in time."""
        r2 = np.atleast_1d(np.asarray(r2, dtype=float))
        pairs, base = self._time_pairs(t, limit_value)
        out = np.full(r2.shape, base)
        for level, weight in pairs:
            if weight == 0.0:
                continue
            spls = self._quadrant_splines(table_id, level, tables[level])
            out += weight * self._quadrant_eval(spls, r1, r2)
        return out

    # -- public evaluation ---------------------------------------------------

    def phat(self, t, r1, r2):
        """Radial kernel value(s) at time t from r1 to r2 (r2 may be an
        array), with respect to the kappa-weighted measure."""
        if t <= 0:
            raise ModelError("radial kernel requires t > 0")
        r2 = np.asarray(r2, dtype=float)
        scalar = r2.ndim == 0
        r2v = np.atleast_1d(r2)
        if self.drift_free:
            out = np.asarray(skew_density(t, r1, r2v, self.kappa))
        else:
            self._ensure_built()
            if t <= self.t0 * (1 + 1e-12):
                logr = self._interp_table("logratio", self._log_ratio,
                                          min(t, self.t0), r1, r2v, 0.0)
                out = np.exp(logr) * skew_density(t, r1, r2v, self.kappa)
            else:
                out = self._extended_eval(t, r1, r2v)
        out = self._clamp(out)
        return float(out[0]) if scalar else out

    def term(self, n, t, r1, r2):
        """Series term n at (t, r1, r2); only defined on the base window."""
        if n == 0:
            return skew_density(t, r1, r2, self.kappa)
        if self.drift_free:
            return np.zeros_like(np.asarray(r2, dtype=float)) + 0.0
        self._ensure_built()
        if t > self.t0 * (1 + 1e-12):
            raise ModelError(
                f"series terms are only defined for t <= t0 = {self.t0}")
        if n >= len(self._terms):
            return np.zeros_like(np.asarray(r2, dtype=float)) + 0.0
        r2 = np.asarray(r2, dtype=float)
        scalar = r2.ndim == 0
        r2v = np.atleast_1d(r2)
        ratio = self._interp_table(("term", n), self._term_ratios[n],
                                   t, r1, r2v, 0.0)
        out = ratio * skew_density(t, r1, r2v, self.kappa)
        return float(out[0]) if scalar else out

    def _clamp(self, out):
        thr = self.opts.clamp_factor * self.opts.tolerance
        worst = out.min() if out.size else 0.0
        if worst < -thr:
            raise NumericsError(
                f"kernel value {worst} below the clamping threshold -{thr}")
        return np.maximum(out, 0.0)

    # -- semigroup extension beyond the base window --------------------------

    def _fine_grid(self):
        h = self.opts.fine_spacing
        L = self.opts.r_extent
        n = int(round(L / h))
        F = np.arange(-n, n + 1) * h
        if F.size % 2 == 0:
            F = np.append(F, F[-1] + h)
        return F

    def fine_matrix(self, t):
        """Kernel matrix on the uniform composition grid at time t > t0,
        built by repeated composition from the base window."""
        self._ensure_built()
        key = round(t, 12)
        if key in self._fine_cache:
            return self._fine_cache[key]
        if t / self.t0 > self.opts.max_extension:
            raise ModelError(
                f"t = {t} exceeds {self.opts.max_extension} base windows")
        m = max(0, math.ceil(math.log2(t / self.t0)))
        tb = t / 2 ** m
        F = self._fine_grid()
        P = self._base_matrix_on(F, tb)
        w = _simpson_weights(F.size, F[1] - F[0]) * self.lam_hat(F)
        for _ in range(m):
            P = (P * w[None, :]) @ P
        self._fine_cache[key] = (F, P)
        return F, P

    def _base_matrix_on(self, F, tb):
        pairs, _ = self._time_pairs(tb, 0.0)
        logr = np.zeros((F.size, F.size))
        fneg = F < 0.0
        fpos = ~fneg
        for level, weight in pairs:
            if weight == 0.0:
                continue
            spls = self._quadrant_splines("logratio", level,
                                          self._log_ratio[level])
            for sx, sy, spl in spls:
                mx = fneg if sx.start == 0 else fpos
                my = fneg if sy.start == 0 else fpos
                logr[np.ix_(mx, my)] += weight * spl(F[mx], F[my], grid=True)
        A, B = _skew_coeffs(F[:, None], F[None, :], self.kappa)
        pz = (A * gauss_kernel(tb, F[None, :] - F[:, None])
              + B * gauss_kernel(tb, F[None, :] + F[:, None]))
        return np.exp(np.clip(logr, -60.0, 60.0)) * pz

    def _extended_eval(self, t, r1, r2v):
        F, P = self.fine_matrix(t)
        key = ("fine", round(t, 12))
        if key not in self._spline_cache:
            i0 = int(np.searchsorted(F, 0.0))
            halves = [slice(0, i0 + 1), slice(i0, None)]
            spls = []
            for sx in halves:
                for sy in halves:
                    spls.append((sx, sy, RectBivariateSpline(
                        F[sx], F[sy], P[sx, sy], kx=3, ky=3)))
            self._spline_cache[key] = spls
        return self._quadrant_eval(self._spline_cache[key], r1, r2v)

    # -- integrals -----------------------------------------------------------

    def mass(self, t, r1):
        """Total mass of the kernel started at r1 (1 for a conservative
        process, up to quadrature error)."""
        F = self._fine_grid()
        vals = self.phat(t, r1, F)
        w = _simpson_weights(F.size, F[1] - F[0])
        return float(np.sum(vals * self.lam_hat(F) * w))

    def cdf(self, t, r1):
        """Distribution function of the radial value at time t started at
        r1, returned as (grid, cdf values)."""
        F = self._fine_grid()
        dens = self.phat(t, r1, F) * self.lam_hat(F)
        cum = np.concatenate([[0.0], np.cumsum(
            0.5 * (dens[1:] + dens[:-1]) * np.diff(F))])
        return F, cum

    def series_ratio(self):
        """Empirical decay ratios of consecutive term maxima at the top of
        the base window."""
        self._ensure_built()
        m = self.term_maxima
        return [m[i + 1] / m[i] if m[i] > 0 else 0.0
                for i in range(1, len(m) - 1)]


# ---------------------------------------------------------------------------
# engine cache and functional API
# ---------------------------------------------------------------------------

_ENGINES = {}


def get_engine(params: ModelParams, opts: KernelOptions | None = None):
    opts = opts or KernelOptions()
    key = (params.digest(), opts.key())
    if key not in _ENGINES:
        _ENGINES[key] = ParametrixEngine(params, opts)
    return _ENGINES[key]


def parametrix_term(n, t, r1, r2, params, opts=None):
    """Series term ``k_n`` at (t, r1, r2); ``k_0`` is the skew kernel."""
    if n < 0:
        raise ModelError("term index must be >= 0")
    if t <= 0:
        raise ModelError("terms require t > 0")
    return get_engine(params, opts).term(n, t, r1, r2)


def radial_kernel(t, r1, r2, params, opts=None):
    """Transition density of the signed radial diffusion with respect to
    the kappa-weighted measure."""
    return get_engine(params, opts).phat(t, r1, r2)


# ---------------------------------------------------------------------------
# full kernel on E
# ---------------------------------------------------------------------------

def _qbar(t, rx, ry, params, engine):
    """Density contribution of paths that visit the origin, for two points
    on the 3-d branch with radii rx, ry.  Depends on the radii only."""
    k = params.kappa
    g = params.gamma
    gap = 2.0 * rx * ry / t
    main = (2.0 * np.pi / (1.0 - k) * math.exp(2.0 * g * ry)
            * engine.phat(t, rx, ry))
    if gap > 45.0:
        # the direct-passage term cancels the free term to below double
        # precision; the remainder is numerically zero
        return 0.0
    # the subtracted term is the free kernel routed past the origin; its
    # coefficient 2 pi^2 makes the two terms cancel in the far field
    log_corr = (math.log(2.0 * np.pi ** 2) - g * g * t / 2.0
                - 1.5 * math.log(2.0 * np.pi * t)
                + math.log(rx) + math.log(ry)
                + g * (rx + ry) - (rx * rx + ry * ry) / (2.0 * t)
                + log_chi(rx * ry / t))
    return main - math.exp(log_corr)


def assemble_full_kernel(t, x: BranchPoint, y: BranchPoint,
                         params: ModelParams, opts=None, engine=None):
    """Transition density on the glued space with respect to the reference
    measure, assembled from the radial kernel and the killed kernel."""
    if t <= 0:
        raise ModelError("assemble_full_kernel requires t > 0")
    engine = engine or get_engine(params, opts)
    k = params.kappa
    g = params.gamma
    p = params.weight_p
    if y.branch == SPACE3 and y.radius == 0.0:
        raise SingularityError("density singular at the 3-d origin")
    bx, by = x.branch, y.branch
    if bx == HALF_LINE and by == HALF_LINE:
        val = (2.0 / ((1.0 + k) * p * float(params.rho(y.r)))
               * engine.phat(t, -x.r, -y.r))
    elif bx != by:
        h, s = (x, y) if bx == HALF_LINE else (y, x)
        ry = s.radius
        val = (2.0 * np.pi / (1.0 - k) * math.exp(2.0 * g * ry)
               * engine.phat(t, -h.r, ry))
    else:
        q = killed_kernel_q(t, np.array(x.x), np.array(y.x), g)
        val = q + _qbar(t, x.radius, y.radius, params, engine)
    thr = engine.opts.clamp_factor * engine.opts.tolerance
    if val < -thr:
        raise NumericsError(
            f"assembled density {val} negative beyond tolerance")
    return max(val, 0.0)


def full_kernel_mass(t, x: BranchPoint, params, opts=None, engine=None,
                     n_half=1500, n_rad=1500):
    """Total mass of the assembled kernel from x, computed as the sum of a
    half-line quadrature and a radial 3-d quadrature."""
    engine = engine or get_engine(params, opts)
    g = params.gamma
    L = engine.opts.r_extent
    # graded grids resolve the integrable peak at the gluing point; the
    # kernel is continuous there, so the r = 0 node takes the boundary
    # value reached along the half-line
    u = np.linspace(0.0, 1.0, n_half + 1)
    r = L * u * u
    p0 = assemble_full_kernel(t, x, BranchPoint.half_line(0.0), params,
                              engine=engine)
    dens_h = np.array([p0] + [
        assemble_full_kernel(t, x, BranchPoint.half_line(ri), params,
                             engine=engine) for ri in r[1:]])
    dens_h *= params.weight_p * np.asarray([float(params.rho(ri)) for ri in r])
    mass_h = float(_trapz(dens_h, r))
    # 3-d part
    ur = np.linspace(0.0, 1.0, n_rad + 1)
    rr = L * ur * ur
    m3 = np.exp(-2.0 * g * rr) / np.pi
    if x.branch == HALF_LINE:
        dens_3 = np.array([p0] + [
            assemble_full_kernel(t, x, BranchPoint.space3(ri, 0.0, 0.0),
                                 params, engine=engine) for ri in rr[1:]])
        mass_3 = float(_trapz(dens_3 * m3, rr))
    else:
        rx = x.radius
        # visiting-the-origin part is radial; its limit at the origin is
        # the continuous boundary value p0 (the direct part vanishes)
        qb = np.array([p0] + [_qbar(t, rx, ri, params, engine)
                              for ri in rr[1:]]) * m3
        mass_qb = float(_trapz(qb, rr))
        # direct part integrates over angles into the chi factor; the
        # solid-angle integral contributes the leading 2 pi
        logc = (math.log(2.0 * np.pi) - g * g * t / 2.0
                - 1.5 * math.log(2.0 * np.pi * t)
                + math.log(rx) + g * rx - rx * rx / (2.0 * t))
        integrand = np.zeros_like(rr)
        integrand[1:] = np.exp(logc + np.log(rr[1:]) - g * rr[1:]
                               - rr[1:] ** 2 / (2.0 * t)
                               + log_chi(rx * rr[1:] / t))
        mass_q = float(_trapz(integrand, rr))
        mass_3 = mass_qb + mass_q
    return mass_h + mass_3


# ---------------------------------------------------------------------------
# tabulated kernel grid
# ---------------------------------------------------------------------------

@dataclass
class KernelGrid:
    """Tabulated radial kernel with its build metadata."""

    times: np.ndarray
    rgrid: np.ndarray
    values: np.ndarray  # (n_times, n_r, n_r)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "r1", "r2", "phat"])
            for it, t in enumerate(self.times):
                for i, r1 in enumerate(self.rgrid):
                    for j, r2 in enumerate(self.rgrid):
                        wr.writerow([f"{t:.17g}", f"{r1:.17g}",
                                     f"{r2:.17g}",
                                     f"{self.values[it, i, j]:.17g}"])

    def metadata_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)


def build_kernel_grid(params, times=None, rgrid=None, opts=None) -> KernelGrid:
    """Tabulate the radial kernel over a (time, r1, r2) grid."""
    engine = get_engine(params, opts)
    times = np.asarray(times if times is not None
                       else np.linspace(0.1, 1.0, 10), dtype=float)
    rgrid = np.asarray(rgrid if rgrid is not None
                       else np.arange(-3.0, 3.0 + 1e-9, 0.25), dtype=float)
    vals = np.empty((times.size, rgrid.size, rgrid.size))
    for it, t in enumerate(times):
        for i, r1 in enumerate(rgrid):
            vals[it, i] = engine.phat(t, r1, rgrid)
    if not engine.drift_free:
        engine._ensure_built()
    meta = {
        "schema": "v1",
        "series_depth": engine.opts.series_depth,
        "base_time": engine.t0,
        "tolerance": engine.opts.tolerance,
        "r_extent": engine.opts.r_extent,
        "truncation_estimate": engine.truncation_estimate,
        "params_hash": params.digest(),
        "built_at": _time.strftime("%Y-%m-%dT%H:%M:%SZ", _time.gmtime()),
    }
    return KernelGrid(times=times, rgrid=rgrid, values=vals, meta=meta)


# ---------------------------------------------------------------------------
# Gaussian envelope fitting
# ---------------------------------------------------------------------------

@dataclass
class BoundFit:
    case: str
    C_lower: float
    c_lower: float
    C_upper: float
    c_upper: float
    violations: int
    n_nodes: int
    worst_nodes: list = field(default_factory=list)

    @property
    def feasible(self):
        return self.violations == 0 and self.C_lower > 0

    def to_dict(self):
        return {"case": self.case, "C_lower": self.C_lower,
                "c_lower": self.c_lower, "C_upper": self.C_upper,
                "c_upper": self.c_upper, "violations": self.violations,
                "n_nodes": self.n_nodes}


def _fit_envelope(case, z, v):
    """Fit constants so that C_l exp(-c_l z) <= v <= C_u exp(-c_u z) at all
    nodes, with z = d^2/t and v the prefactor-normalized kernel value."""
    pos = v > 0
    if not np.all(pos):
        bad = int(np.sum(~pos))
        raise NumericsError(
            f"envelope fit for case {case}: {bad} non-positive node values")
    logs = np.log(v)
    A = np.vstack([np.ones_like(z), -z]).T
    coef, *_ = np.linalg.lstsq(A, logs, rcond=None)
    chat = max(coef[1], 0.0)
    resid = np.abs(A @ coef - logs).max()
    if resid < 1e-8:
        c_u = c_l = chat
    else:
        c_u = 0.8 * chat
        c_l = 1.25 * chat + 1e-6
    C_u = float(np.exp((logs + c_u * z).max()))
    C_l = float(np.exp((logs + c_l * z).min()))
    upper = C_u * np.exp(-c_u * z)
    lower = C_l * np.exp(-c_l * z)
    viol = int(np.sum((v > upper * (1 + 1e-12)) | (v < lower * (1 - 1e-12))))
    order = np.argsort(np.minimum(upper - v, v - lower))
    worst = [(float(z[i]), float(v[i])) for i in order[:3]]
    return BoundFit(case=case, C_lower=C_l, c_lower=float(c_l), C_upper=C_u,
                    c_upper=float(c_u), violations=viol, n_nodes=z.size,
                    worst_nodes=worst)


def fit_gaussian_bounds(source, case, params=None, opts=None,
                        times=None, radii=None):
    """Empirical Gaussian sandwich constants for the tabulated radial
    kernel (case 'radial') or the assembled kernel (cases 'i', 'ii',
    'iii').  The constants are existential in the underlying estimates;
    this fits feasible values and counts violations (which must be 0).
    """
    if case == "radial":
        grid: KernelGrid = source
        zs, vs = [], []
        for it, t in enumerate(grid.times):
            d = np.abs(grid.rgrid[:, None] - grid.rgrid[None, :])
            vals = grid.values[it]
            keep = vals > 1e-280
            zs.append((d[keep] ** 2 / t))
            vs.append(vals[keep] * math.sqrt(t))
        return _fit_envelope(case, np.concatenate(zs), np.concatenate(vs))

    if params is None:
        raise ModelError("cases i/ii/iii need model parameters")
    engine = get_engine(params, opts)
    g = params.gamma
    times = np.asarray(times if times is not None else [0.25, 0.5, 1.0])
    radii = np.asarray(radii if radii is not None
                       else np.arange(0.1, 2.01, 0.19))
    zs, vs = [], []
    for t in times:
        for rx in radii:
            for ry in radii:
                if case == "i":
                    x = BranchPoint.half_line(rx)
                    y = BranchPoint.half_line(ry)
                    v = (assemble_full_kernel(t, x, y, params, engine=engine)
                         * float(params.rho(ry)) * math.sqrt(t))
                    d = abs(rx - ry)
                elif case == "ii":
                    x = BranchPoint.half_line(rx)
                    y = BranchPoint.space3(ry, 0.0, 0.0)
                    v = (assemble_full_kernel(t, x, y, params, engine=engine)
                         * math.exp(-2 * g * ry) * math.sqrt(t))
                    d = rx + ry
                elif case == "iii":
                    if 2.0 * rx * ry / t > 4.0:
                        continue  # avoid catastrophic cancellation in qbar
                    v = (_qbar(t, rx, ry, params, engine)
                         * math.exp(-2 * g * ry) * math.sqrt(t))
                    d = rx + ry
                else:
                    raise ModelError(f"unknown envelope case {case!r}")
                if v > 1e-280:
                    zs.append(d * d / t)
                    vs.append(v)
    return _fit_envelope(case, np.asarray(zs), np.asarray(vs))
