"""Closed-form kernels and one-dimensional diffusion characteristics.

Everything here is an explicit formula: the skew Brownian transition
density and its spatial gradient, the drift of the signed radial SDE, the
killed kernel on the three-dimensional branch, the ``chi`` angular factor,
scale functions and speed measures, and the recurrence/transience
classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .model import (ModelError, ModelParams, NumericsError, RhoProfile,
                    psi_gamma_radial)


def gauss_kernel(t, r):
    """Heat kernel ``exp(-r^2/2t) / sqrt(2 pi t)``."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.exp(-r * r / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)


# ---------------------------------------------------------------------------
# skew Brownian motion kernel (density w.r.t. the kappa-weighted measure)
# ---------------------------------------------------------------------------

def _skew_coeffs(r1, r2, kappa):
    """Coefficients (A, B) such that the skew kernel equals
    ``A*g_t(r2-r1) + B*g_t(r2+r1)`` on the branch containing (r1, r2).

    Branches are resolved in a fixed order so that boundary points
    (r1 = 0 or r2 = 0) take the mixed-sign coefficient; all branches agree
    in the limit, so the order only fixes measure-zero points.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    r1, r2 = np.broadcast_arrays(r1, r2)
    A = np.full(r1.shape, (1.0 - kappa * kappa) / 2.0)
    B = np.zeros(r1.shape)
    pp = (r1 > 0) & (r2 > 0)
    nn = (r1 < 0) & (r2 < 0)
    A[pp] = (1.0 - kappa) / 2.0
    B[pp] = (1.0 - kappa) * kappa / 2.0
    A[nn] = (1.0 + kappa) / 2.0
    B[nn] = -(1.0 + kappa) * kappa / 2.0
    return A, B


def skew_density(t, r1, r2, kappa):
    """Transition density of skew Brownian motion with skew constant
    ``kappa``, taken with respect to the measure with density
    ``2/(1+kappa)`` on the negative axis and ``2/(1-kappa)`` on the
    positive axis.  Symmetric in (r1, r2).
    """
    if np.any(np.asarray(t) <= 0):
        raise ModelError("skew_density requires t > 0")
    if not -1.0 < kappa < 1.0:
        raise ModelError(f"kappa must lie in (-1, 1), got {kappa}")
    A, B = _skew_coeffs(r1, r2, kappa)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    out = A * gauss_kernel(t, r2 - r1) + B * gauss_kernel(t, r2 + r1)
    return out if out.ndim else float(out)


def skew_density_grad(t, r1, r2, kappa):
    """Derivative of :func:`skew_density` in its first spatial argument.

    Undefined at ``r1 = 0`` (the skew point), where the kernel has a kink.
    """
    if np.any(np.asarray(t) <= 0):
        raise ModelError("skew_density_grad requires t > 0")
    if np.any(np.asarray(r1) == 0.0):
        raise ModelError("gradient undefined at the skew point r1 = 0")
    A, B = _skew_coeffs(r1, r2, kappa)
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    out = (A * ((r2 - r1) / t) * gauss_kernel(t, r2 - r1)
           - B * ((r2 + r1) / t) * gauss_kernel(t, r2 + r1))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SkewMeasure:
    """Reference measure of the skew kernel: Lebesgue density
    ``2/(1+kappa)`` on (-inf, 0) and ``2/(1-kappa)`` on (0, inf)."""

    kappa: float

    @property
    def neg_density(self):
        return 2.0 / (1.0 + self.kappa)

    @property
    def pos_density(self):
        return 2.0 / (1.0 - self.kappa)

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 0, self.neg_density, self.pos_density)


# ---------------------------------------------------------------------------
# drift
# ---------------------------------------------------------------------------

def drift_b(r, params: ModelParams):
    """Drift of the signed radial SDE: ``-gamma`` for ``r >= 0`` and
    ``-rho'(-r) / (2 rho(-r))`` for ``r < 0``."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, -params.gamma)
    neg = r < 0
    if np.any(neg):
        u = -r[neg]
        rho_u = params.rho(u)
        if np.any(rho_u <= 0):
            raise ModelError("rho must be positive where the drift is evaluated")
        out[neg] = -params.rho.derivative(u) / (2.0 * rho_u)
    return out if out.ndim else float(out)


def drift_at_zero_minus(params: ModelParams) -> float:
    """One-sided limit of the drift as r -> 0-."""
    return float(-params.rho.derivative(0.0) / (2.0 * params.rho.rho0))


# ---------------------------------------------------------------------------
# Kato window norm
# ---------------------------------------------------------------------------

def kato_window_norm(f, lo=-20.0, hi=20.0, spacing=0.01):
    """Sup over window centers ``x`` of ``int_{|x-y|<=1} |f(y)| dy``.

    Evaluated on a finite grid; a sup over finitely many centers
    under-estimates the true sup, which is acceptable for a finiteness
    check.  Integrable singularities are handled by the trapezoid rule at
    the given spacing.
    """
    y = np.arange(lo, hi + spacing / 2, spacing)
    vals = np.abs(np.asarray(f(y), dtype=float))
    vals = np.where(np.isfinite(vals), vals, 0.0)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1])
                                           * np.diff(y))])
    n_win = int(round(1.0 / spacing))
    window = cum[2 * n_win:] - cum[:-2 * n_win]
    return float(window.max())


# ---------------------------------------------------------------------------
# killed kernel on the 3-d branch and the chi factor
# ---------------------------------------------------------------------------

def killed_kernel_q(t, x, y, gamma):
    """Transition density (w.r.t. the reference measure) of the 3-d branch
    process killed at the origin:

        sqrt(2 pi / t^3) |x||y| exp(-gamma^2 t/2 + gamma(|x|+|y|)
                                    - |x-y|^2 / 2t).

    Returns 0 when either argument is the origin (killing convention).
    """
    if t <= 0:
        raise ModelError("killed_kernel_q requires t > 0")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rx = math.sqrt(float(np.dot(x, x)))
    ry = math.sqrt(float(np.dot(y, y)))
    if rx == 0.0 or ry == 0.0:
        return 0.0
    d2 = float(np.dot(x - y, x - y))
    return (math.sqrt(2.0 * math.pi / t ** 3) * rx * ry
            * math.exp(-gamma * gamma * t / 2.0 + gamma * (rx + ry)
                       - d2 / (2.0 * t)))


def chi(a):
    """Angular factor ``int_0^pi exp(a cos(theta)) sin(theta) dtheta``,
    equal to ``2 sinh(a)/a`` (and 2 at ``a = 0``).  Even in ``a``.

    A short Taylor series is used for small ``|a|`` to avoid cancellation.
    Overflows for ``|a|`` beyond ~709; use :func:`log_chi` there.
    """
    a = np.asarray(a, dtype=float)
    out = np.empty(a.shape)
    small = np.abs(a) < 1e-4
    asq = a[small] * a[small]
    out[small] = 2.0 * (1.0 + asq / 6.0 + asq * asq / 120.0)
    with np.errstate(over="raise"):
        out[~small] = 2.0 * np.sinh(a[~small]) / a[~small]
    return out if out.ndim else float(out)


def log_chi(a):
    """``log(chi(a))``, stable for large ``|a|``."""
    a = np.abs(np.asarray(a, dtype=float))
    out = np.empty(a.shape)
    small = a < 1e-4
    out[small] = np.log(2.0 + a[small] * a[small] / 3.0)
    ab = a[~small]
    # log(2 sinh(a)/a) = a + log(1 - exp(-2a)) - log(a)  for a > 0
    out[~small] = ab + np.log1p(-np.exp(-2.0 * ab)) - np.log(ab)
    return out if out.ndim else float(out)


def chi_quadrature(a, tol=1e-12):
    """Defining integral of :func:`chi` by adaptive quadrature.  Kept as an
    independent oracle; production code uses the closed form."""
    val, err = quad(lambda th: math.exp(a * math.cos(th)) * math.sin(th),
                    0.0, math.pi, epsabs=tol, epsrel=tol, limit=200)
    return val


# ---------------------------------------------------------------------------
# scale functions / speed measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSpeed:
    """Scale function and speed-measure density of the signed radial
    diffusion, together with the radial and half-line pairs it is glued
    from."""

    params: ModelParams

    # signed radial process -----------------------------------------------

    def scale(self, r):
        """Scale function of the signed radial process; strictly
        increasing, vanishing at 0."""
        r = np.asarray(r, dtype=float)
        g = self.params.gamma
        out = np.empty(r.shape)
        pos = r >= 0
        if g == 0.0:
            out[pos] = np.pi * r[pos]
        else:
            out[pos] = (np.pi * np.exp(2.0 * g * r[pos]) - np.pi) / (2.0 * g)
        if np.any(~pos):
            out[~pos] = [-self._neg_scale_integral(float(ri))
                         for ri in r[~pos]]
        return out if out.ndim else float(out)

    def _neg_scale_integral(self, r):
        # int_r^0 ds / (p * rho(-s)),  r < 0
        p = self.params.weight_p
        rho = self.params.rho
        if rho.family == "exponential":
            al = rho.alpha
            if al == 0.0:
                return -np.pi * r / p
            # rho(-s) = exp(2 alpha s)/pi for s < 0
            return np.pi * (math.exp(-2.0 * al * r) - 1.0) / (2.0 * al * p)
        val, err = quad(lambda s: 1.0 / (p * float(rho(-s))), r, 0.0,
                        limit=200)
        if not np.isfinite(val):
            raise NumericsError(f"scale-function quadrature failed at r={r}")
        return val

    def speed_density(self, r):
        """Lebesgue density of the speed measure: ``exp(-2 gamma r)/pi``
        for ``r > 0`` and ``p rho(-r)`` for ``r < 0``."""
        r = np.asarray(r, dtype=float)
        pos_part = np.exp(-2.0 * self.params.gamma * np.abs(r)) / np.pi
        neg_part = self.params.weight_p * self.params.rho(-r)
        out = np.where(r >= 0, pos_part, neg_part)
        return out if out.ndim else float(out)

    # radial process of the 3-d branch -------------------------------------

    def radial_scale(self, r):
        g = self.params.gamma
        r = np.asarray(r, dtype=float)
        if g == 0.0:
            out = np.pi * r
        else:
            out = np.pi * np.exp(2.0 * g * r) / (2.0 * g)
        return out if out.ndim else float(out)

    def radial_speed_density(self, r):
        r = np.asarray(r, dtype=float)
        out = np.exp(-2.0 * self.params.gamma * r) / np.pi
        return out if out.ndim else float(out)

    # half-line part --------------------------------------------------------

    def half_line_scale(self, r):
        r = np.asarray(r, dtype=float)
        out = np.array([self._neg_scale_integral(-float(ri)) * self.params.weight_p
                        for ri in np.atleast_1d(r)])
        out = out.reshape(r.shape)
        return out if out.ndim else float(out)

    def half_line_speed_density(self, r):
        return self.params.rho(r)


def scale_speed(params: ModelParams) -> ScaleSpeed:
    """Scale/speed characteristics of the signed radial diffusion."""
    return ScaleSpeed(params)


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Classification:
    recurrent: bool
    conservative: bool
    divergence_witness: float

    @property
    def label(self):
        return "recurrent" if self.recurrent else "transient"

    def __str__(self):
        c = "conservative" if self.conservative else "non-conservative"
        return f"{self.label}, {c}"


def classify(params: ModelParams, r_max=50.0) -> Classification:
    """Recurrent iff ``1/rho`` is not integrable and ``gamma >= 0``;
    conservative always (the infinities are not approachable in finite
    time), reported with the numeric divergence witness."""
    recurrent = (not params.rho.one_over_rho_integrable) and params.gamma >= 0.0
    # conservativeness witness: int_1^R speed((1,r)) d(scale)(r) grows
    ss = scale_speed(params)
    rr = np.linspace(1.0, r_max, 400)
    speed_mass = np.concatenate([[0.0], np.cumsum(
        0.5 * (ss.speed_density(rr[1:]) + ss.speed_density(rr[:-1]))
        * np.diff(rr))])
    ds = np.diff(ss.scale(rr))
    witness = float(np.sum(0.5 * (speed_mass[1:] + speed_mass[:-1]) * ds))
    return Classification(recurrent=recurrent, conservative=True,
                          divergence_witness=witness)


# ---------------------------------------------------------------------------
# radial density of the reference measure on the 3-d branch
# ---------------------------------------------------------------------------

def m3_radial_density(r, gamma):
    """Radial Lebesgue density of the 3-d branch reference measure:
    ``4 pi r^2 psi_gamma(r)^2 = exp(-2 gamma r)/pi``."""
    r = np.asarray(r, dtype=float)
    return 4.0 * np.pi * r * r * psi_gamma_radial(np.maximum(r, 1e-300), gamma) ** 2
