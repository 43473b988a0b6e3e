"""Model parameterization and the geometry of the glued state space.

The state space ``E`` consists of a three-dimensional branch and a half-line
branch joined at a single origin.  This module provides the parameter bundle
(:class:`ModelParams`), the weight profile of the half-line part
(:class:`RhoProfile`), points of ``E`` (:class:`BranchPoint`), the reference
densities that define the symmetrizing measure, and the validation routine
that checks the standing assumptions numerically.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator


class ModelError(Exception):
    """Base class for errors raised by this package."""


class SingularityError(ModelError):
    """An evaluation was requested at a point where the quantity blows up."""


class ConfigurationError(ModelError):
    """The model is missing data required for the requested operation."""


class NumericsError(ModelError):
    """A numerical procedure failed to reach its target accuracy."""


# ---------------------------------------------------------------------------
# rho profile
# ---------------------------------------------------------------------------

class RhoProfile:
    """Weight profile ``rho`` on the half-line.

    Two families are supported:

    * ``exponential``: ``rho(r) = exp(-2*alpha*r) / pi``, evaluated
      analytically (value, derivative, antiderivative).
    * ``tabulated``: values on a finite grid, interpolated with a monotone
      cubic (PCHIP).  Beyond the last grid point the profile is held
      constant at its final value; this extrapolation is flagged during
      validation.  The derivative is taken from user-supplied samples when
      given, otherwise from the interpolant.

    Use the :meth:`exponential` / :meth:`tabulated` factories rather than
    the constructor.
    """

    def __init__(self, family, *, alpha=None, grid=None, values=None,
                 derivatives=None):
        self.family = family
        if family == "exponential":
            if alpha is None:
                raise ConfigurationError("exponential profile requires alpha")
            self.alpha = float(alpha)
            self._interp = None
            self._dinterp = None
        elif family == "tabulated":
            grid = np.asarray(grid, dtype=float)
            values = np.asarray(values, dtype=float)
            if grid.ndim != 1 or grid.shape != values.shape or grid.size < 4:
                raise ConfigurationError(
                    "tabulated profile needs matching 1-d grid/values, >= 4 points")
            if not np.all(np.diff(grid) > 0):
                raise ConfigurationError("tabulated grid must be strictly increasing")
            bad = np.nonzero(values <= 0.0)[0]
            if bad.size:
                raise ConfigurationError(
                    f"rho must be positive; rho({grid[bad[0]]}) = "
                    f"{values[bad[0]]} at grid index {bad[0]}")
            self.alpha = None
            self.grid = grid
            self.values = values
            self._interp = PchipInterpolator(grid, values, extrapolate=False)
            if derivatives is not None:
                derivatives = np.asarray(derivatives, dtype=float)
                if derivatives.shape != grid.shape:
                    raise ConfigurationError("derivative samples must match the grid")
                self._dinterp = PchipInterpolator(grid, derivatives,
                                                  extrapolate=False)
            else:
                self._dinterp = self._interp.derivative()
            self.derivatives = derivatives
        else:
            raise ConfigurationError(f"unknown rho family {family!r}")

    # factories ------------------------------------------------------------

    @classmethod
    def exponential(cls, alpha):
        """``rho(r) = exp(-2*alpha*r)/pi``."""
        return cls("exponential", alpha=alpha)

    @classmethod
    def tabulated(cls, grid, values, derivatives=None):
        """Profile given by samples on a finite grid."""
        return cls("tabulated", grid=grid, values=values,
                   derivatives=derivatives)

    # evaluation -----------------------------------------------------------

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            return np.exp(-2.0 * self.alpha * r) / np.pi
        out = self._interp(np.clip(r, self.grid[0], self.grid[-1]))
        return np.asarray(out, dtype=float)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        if self.family == "exponential":
            return -2.0 * self.alpha * np.exp(-2.0 * self.alpha * r) / np.pi
        rc = np.clip(r, self.grid[0], self.grid[-1])
        out = np.asarray(self._dinterp(rc), dtype=float)
        # held-constant extrapolation has zero slope
        return np.where((r < self.grid[0]) | (r > self.grid[-1]), 0.0, out)

    def integral(self, a, b):
        """``int_a^b rho(r) dr``."""
        if self.family == "exponential":
            al = self.alpha
            if al == 0.0:
                return (b - a) / np.pi
            return (math.exp(-2 * al * a) - math.exp(-2 * al * b)) / (2 * al * np.pi)
        val, _ = quad(lambda r: float(self(r)), a, b, limit=200)
        return val

    @property
    def rho0(self):
        return float(self(0.0))

    @property
    def one_over_rho_integrable(self):
        """Whether ``1/rho`` is integrable on the positive half-line.

        Decided analytically for the exponential family.  For a tabulated
        profile the tail behaviour beyond the grid is undefined; with the
        held-constant extrapolation ``1/rho`` is never integrable, which is
        what this returns (validation flags the extrapolation separately).
        """
        if self.family == "exponential":
            return self.alpha < 0.0
        return False

    # serialization --------------------------------------------------------

    def to_dict(self):
        if self.family == "exponential":
            return {"family": "exponential", "alpha": self.alpha}
        d = {"family": "tabulated", "grid": self.grid.tolist(),
             "values": self.values.tolist()}
        if self.derivatives is not None:
            d["derivatives"] = self.derivatives.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        family = d.get("family")
        if family == "exponential":
            return cls.exponential(d["alpha"])
        if family == "tabulated":
            return cls.tabulated(d["grid"], d["values"], d.get("derivatives"))
        raise ConfigurationError(f"unknown rho family {family!r}")

    def __repr__(self):
        if self.family == "exponential":
            return f"RhoProfile.exponential(alpha={self.alpha})"
        return f"RhoProfile.tabulated(<{self.grid.size} points>)"


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Parameter bundle: drift ``gamma``, branch weight ``p``, horizon ``T``
    and the half-line profile ``rho``."""

    gamma: float
    weight_p: float
    horizon_T: float
    rho: RhoProfile

    def __post_init__(self):
        if not self.weight_p > 0:
            raise ModelError(f"weight_p must be positive, got {self.weight_p}")
        if not self.horizon_T > 0:
            raise ModelError(f"horizon_T must be positive, got {self.horizon_T}")
        k = self.kappa
        if not -1.0 < k < 1.0:
            raise ModelError(f"derived kappa = {k} outside (-1, 1)")

    @property
    def kappa(self):
        """Skew constant ``(1 - pi*p*rho(0)) / (1 + pi*p*rho(0))``."""
        a = np.pi * self.weight_p * self.rho.rho0
        return (1.0 - a) / (1.0 + a)

    def to_dict(self):
        return {"gamma": self.gamma, "p": self.weight_p,
                "T": self.horizon_T, "rho": self.rho.to_dict()}

    @classmethod
    def from_dict(cls, d):
        known = {"gamma", "p", "T", "rho"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(gamma=float(d["gamma"]), weight_p=float(d["p"]),
                   horizon_T=float(d["T"]),
                   rho=RhoProfile.from_dict(d["rho"]))

    def digest(self):
        """Stable hash of the parameter values, used to tag artifacts."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# points of E
# ---------------------------------------------------------------------------

HALF_LINE = "half_line"
SPACE3 = "space3"


@dataclass(frozen=True)
class BranchPoint:
    """A point of the glued space: either on the half-line (radius ``r``)
    or in the three-dimensional branch (coordinates ``x``).

    The two representations of the origin are canonicalized to the
    half-line tag with ``r = 0``, so equality of origins holds exactly with
    no tolerance involved.
    """

    branch: str
    r: float = 0.0
    x: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def half_line(cls, r):
        r = float(r)
        if r < 0:
            raise ModelError(f"half-line radius must be >= 0, got {r}")
        return cls(branch=HALF_LINE, r=r)

    @classmethod
    def space3(cls, x1, x2, x3):
        x = (float(x1), float(x2), float(x3))
        if x == (0.0, 0.0, 0.0):
            return cls(branch=HALF_LINE, r=0.0)
        return cls(branch=SPACE3, r=0.0, x=x)

    @classmethod
    def origin(cls):
        return cls(branch=HALF_LINE, r=0.0)

    @property
    def radius(self):
        if self.branch == HALF_LINE:
            return self.r
        return math.sqrt(self.x[0] ** 2 + self.x[1] ** 2 + self.x[2] ** 2)

    @property
    def is_origin(self):
        return self.branch == HALF_LINE and self.r == 0.0

    @property
    def signed_radius(self):
        """Signed radial coordinate: ``|x|`` on the 3-d branch, ``-r`` on
        the half-line."""
        if self.branch == HALF_LINE:
            return -self.r
        return self.radius


def dist_E(x: BranchPoint, y: BranchPoint) -> float:
    """Distance on the glued space.

    Euclidean within a branch; the sum of the two radii for points on
    different branches (every path between branches passes through the
    origin).
    """
    if x.branch == y.branch:
        if x.branch == HALF_LINE:
            return abs(x.r - y.r)
        return math.dist(x.x, y.x)
    return x.radius + y.radius


def psi_gamma(x, gamma):
    """Reference density ``exp(-gamma*|x|) / (2*pi*|x|)`` on the 3-d branch.

    ``x`` is a 3-vector or an array of shape (..., 3); singular at the
    origin.
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r == 0.0):
        raise SingularityError("psi_gamma is singular at the origin")
    return np.exp(-gamma * r) / (2.0 * np.pi * r)


def psi_gamma_radial(r, gamma):
    """``psi_gamma`` as a function of the radius ``r > 0``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise SingularityError("psi_gamma is singular at the origin")
    return np.exp(-gamma * r) / (2.0 * np.pi * r)


def reference_density(x: BranchPoint, params: ModelParams) -> float:
    """Density ``h`` of the symmetrizing measure: ``sqrt(p*rho(r))`` on the
    half-line, ``psi_gamma`` on the 3-d branch.  The squared value is the
    measure's density against Lebesgue measure on the respective branch.
    """
    if x.is_origin:
        raise SingularityError("reference density is singular at the origin")
    if x.branch == HALF_LINE:
        return math.sqrt(params.weight_p * float(params.rho(x.r)))
    return float(psi_gamma(np.array(x.x), params.gamma))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class ConditionCheck:
    name: str
    passed: bool
    witness: float
    note: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    kappa: float = float("nan")

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def __str__(self):
        lines = [f"kappa = {self.kappa:.6g}"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}: witness={c.witness:.6g} {c.note}")
        return "\n".join(lines)


def validate(params: ModelParams, r_max=50.0, kato_range=20.0,
             kato_spacing=0.01) -> ValidationReport:
    """Check the standing assumptions numerically.

    Positivity of ``rho``, divergence of the recurrence-type integral
    (checked monotonically up to ``r_max``; divergence of an improper
    integral cannot be certified from finite data, so this is a witness,
    not a proof), and the sliding-window (Kato) norm of ``|rho'/rho|^2``.
    """
    from .analytic import kato_window_norm  # local import to avoid a cycle

    report = ValidationReport(kappa=params.kappa)
    rho = params.rho

    rr = np.linspace(0.0, r_max, 2001)
    vals = rho(rr)
    pos = bool(np.all(vals > 0.0))
    report.checks.append(ConditionCheck(
        "rho positive", pos, float(vals.min()),
        "" if pos else f"non-positive at r={rr[int(np.argmin(vals))]:.4g}"))

    # int_0^R (1/rho) int_0^r rho : monotone growth witness for divergence
    inner = np.concatenate([[0.0], np.cumsum(
        0.5 * (vals[1:] + vals[:-1]) * np.diff(rr))])
    with np.errstate(divide="ignore"):
        integrand = np.where(vals > 0, inner / vals, np.inf)
    _trapz = getattr(np, "trapezoid", np.trapz)
    outer = _trapz(integrand, rr)
    half = _trapz(integrand[rr <= r_max / 2], rr[rr <= r_max / 2])
    growing = np.isfinite(outer) and outer > 2.0 * half * 0.99 and outer > 1.0
    note = f"integral({r_max})={outer:.4g}, integral({r_max/2})={half:.4g}"
    if rho.family == "tabulated":
        note += "; tail extrapolated by holding the last value"
    report.checks.append(ConditionCheck(
        "scale-speed divergence (finite-range witness)", bool(growing),
        float(outer), note))

    # Kato-window norm of |rho'/rho|^2, extended by 0 off the half-line
    def f(y):
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        m = y >= 0
        if np.any(m):
            ratio = rho.derivative(y[m]) / rho(y[m])
            out[m] = ratio * ratio
        return out

    knorm = kato_window_norm(f, lo=-kato_range, hi=kato_range,
                             spacing=kato_spacing)
    report.checks.append(ConditionCheck(
        "Kato-window norm of |rho'/rho|^2 finite", bool(np.isfinite(knorm)),
        float(knorm)))

    report.checks.append(ConditionCheck(
        "kappa in (-1, 1)", -1.0 < report.kappa < 1.0, report.kappa))

    report.checks.append(ConditionCheck(
        "1/rho integrable on the half-line",
        True,  # informational, not a pass/fail condition
        1.0 if rho.one_over_rho_integrable else 0.0,
        "informational flag"))
    return report
