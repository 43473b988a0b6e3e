"""Numerical cross-checks between the kernel machinery and independent
constructions: semigroup consistency, mass conservation, detailed
balance, and Monte Carlo agreement.

Every check returns a :class:`CheckReport`; reports serialize to JSON
(one object per report, schema "v1") so batch runs can be audited.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .analytic import drift_b, skew_density
from .model import BranchPoint, HALF_LINE, ModelError, ModelParams, SPACE3
from .parametrix import (_simpson_weights, assemble_full_kernel,
                         full_kernel_mass, get_engine)
from .simulate import sample_terminal, simulate_killed3d

__all__ = [
    "CheckReport", "ck_residual", "mass_check", "symmetry_check",
    "mc_compare", "killed_kernel_mc", "write_reports",
]


@dataclass
class CheckReport:
    """Outcome of one verification check."""

    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"schema": "v1", "name": self.name, "passed": bool(self.passed),
                "metrics": {k: _plain(v) for k, v in self.metrics.items()},
                "details": {k: _plain(v) for k, v in self.details.items()}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def write_reports(reports, path):
    """Write reports as JSON lines; returns True if all passed."""
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_json() + "\n")
    return all(r.passed for r in reports)


def ck_residual(params, times=(0.2, 0.4, 0.8), starts=(-1.5, -0.5, 0.0, 0.5, 1.5),
                targets=(-1.5, -0.5, 0.0, 0.5, 1.5), tol=1e-3, opts=None):
    """Chapman-Kolmogorov consistency of the radial kernel.

    For each t, compares p(t) against the composition of p(t/2) with
    itself through the weighted reference measure, at a grid of start and
    target points.  The residual at a pair is relative to the direct
    value, floored at a small fraction of the grid peak so that far-tail
    pairs (where the kernel underflows toward zero) are judged on the
    scale of the kernel rather than of rounding noise.
    """
    engine = get_engine(params, opts)
    F = engine._fine_grid()
    w = _simpson_weights(F.size, F[1] - F[0]) * engine.lam_hat(F)
    worst = 0.0
    worst_at = None
    for t in times:
        th = t / 2.0
        # rows of the second half-kernel at the target points
        second = np.vstack([engine.phat(th, z, np.asarray(targets, float))
                            for z in F])
        directs = np.vstack([engine.phat(t, r1, np.asarray(targets, float))
                             for r1 in starts])
        floor = 1e-3 * directs.max()
        for j, r1 in enumerate(starts):
            direct = directs[j]
            first = engine.phat(th, r1, F)
            comp = (first * w) @ second
            rel = np.abs(comp - direct) / np.maximum(np.abs(direct), floor)
            i = int(np.argmax(rel))
            if rel[i] > worst:
                worst = float(rel[i])
                worst_at = (float(t), float(r1), float(targets[i]))
    return CheckReport(
        name="chapman_kolmogorov", passed=worst <= tol,
        metrics={"max_rel_residual": worst, "tolerance": tol},
        details={"worst_at": worst_at, "times": list(times)})


def mass_check(params, times=(0.25, 0.5, 1.0), starts=(-0.7, 0.0, 0.9),
               tol_radial=1e-3, tol_full=2e-3, opts=None):
    """Conservativeness: unit mass of the radial kernel against the
    weighted measure, and of the assembled kernel over the whole space
    from starts on both branches."""
    engine = get_engine(params, opts)
    worst_r = 0.0
    worst_f = 0.0
    rows = []
    for t in times:
        for r1 in starts:
            err = abs(engine.mass(t, r1) - 1.0)
            worst_r = max(worst_r, err)
            rows.append({"kind": "radial", "t": t, "start": r1, "err": err})
        for x in (BranchPoint.half_line(0.7), BranchPoint.space3(0.9, 0, 0)):
            err = abs(full_kernel_mass(t, x, params, engine=engine) - 1.0)
            worst_f = max(worst_f, err)
            rows.append({"kind": "full", "t": t,
                         "start": f"{x.branch}:{x.radius}", "err": err})
    return CheckReport(
        name="mass_conservation",
        passed=worst_r <= tol_radial and worst_f <= tol_full,
        metrics={"max_radial_err": worst_r, "max_full_err": worst_f,
                 "tol_radial": tol_radial, "tol_full": tol_full},
        details={"rows": rows})


def symmetry_check(params, times=(0.3, 0.6), pairs=((0.6, -0.8), (1.5, 0.2),
                                                    (-0.5, 2.0), (-1.2, -0.3)),
                   tol=5e-2, opts=None):
    """Detailed balance of the radial kernel: after conversion to the
    symmetric (speed) measure the kernel must be symmetric in its space
    arguments.  The raw kernel against the weighted measure is not."""
    engine = get_engine(params, opts)
    worst = 0.0
    worst_at = None
    for t in times:
        for a, b in pairs:
            s1 = float(engine.symmetric_kernel(t, a, np.atleast_1d(b))[0])
            s2 = float(engine.symmetric_kernel(t, b, np.atleast_1d(a))[0])
            rel = abs(s1 - s2) / max(abs(s1), 1e-300)
            if rel > worst:
                worst, worst_at = rel, (t, a, b)
    return CheckReport(
        name="detailed_balance", passed=worst <= tol,
        metrics={"max_rel_asymmetry": worst, "tolerance": tol},
        details={"worst_at": worst_at})


def _empirical_ks(samples, grid, cdf):
    emp = np.searchsorted(np.sort(samples), grid, side="right") / samples.size
    return float(np.abs(emp - cdf).max())


def mc_compare(params, t, r0, n_paths, dt, seed, kappa_shift=0.0, opts=None):
    """Kolmogorov-Smirnov comparison of simulated terminal values against
    the analytic distribution of the radial process.

    kappa_shift perturbs the skew constant used by the simulator only;
    a nonzero shift is a negative control that must make the check fail.
    """
    engine = get_engine(params, opts)
    kappa = params.kappa + kappa_shift
    if not -1.0 < kappa < 1.0:
        raise ModelError("perturbed kappa leaves (-1, 1)")
    samples = sample_terminal(params, r0, t, dt, seed, n_paths,
                              kappa_override=kappa if kappa_shift else None)
    grid, cdf = engine.cdf(t, r0)
    ks = _empirical_ks(samples, grid, cdf)
    threshold = 2.0 * 1.63 / math.sqrt(n_paths)
    passed = ks <= threshold
    return CheckReport(
        name="mc_kolmogorov_smirnov", passed=passed,
        metrics={"ks_statistic": ks, "threshold": threshold,
                 "n_paths": n_paths, "kappa_shift": kappa_shift},
        details={"t": t, "r0": r0, "dt": dt, "seed": seed})


def killed_kernel_mc(params, t, x_radius, n_paths, dt, seed, tol=0.05,
                     min_hits=500, smooth_bins=5):
    """Monte Carlo check of the killed kernel q.

    Simulates the origin-killed 3-d process and compares the smoothed
    radial histogram of survivors against the radial marginal of
    q(t,x,.) d(m3), plus the survival probability against its quadrature.
    A moving-average smoothing over smooth_bins bins tames the Poisson
    noise so the 5 percent band is meaningful at moderate path counts.
    """
    g = params.gamma
    radii, alive = simulate_killed3d(g, x_radius, t, dt, seed, n_paths)
    surv = float(alive.mean())

    def radial_density(r):
        a = x_radius
        gk = lambda u: np.exp(-u * u / (2 * t)) / math.sqrt(2 * math.pi * t)
        return np.exp(-g * (r - a) - g * g * t / 2.0) * (gk(r - a) - gk(r + a))

    hi = x_radius + 5.0 * math.sqrt(t) + abs(g) * t
    rq = np.linspace(0.0, hi, 4001)
    surv_true = float(np.trapezoid(radial_density(rq), rq)) \
        if hasattr(np, "trapezoid") else float(np.trapz(radial_density(rq), rq))
    sigma = math.sqrt(surv_true * (1.0 - surv_true) / n_paths)
    z = (surv - surv_true) / sigma if sigma > 0 else 0.0

    data = radii[alive]
    # Freedman-Diaconis width, floored so bins hold enough mass
    iqr = np.subtract(*np.percentile(data, [75, 25]))
    width = max(2.0 * iqr / data.size ** (1 / 3), 1e-3)
    nbins = max(10, int(math.ceil(hi / width)))
    cnt, edges = np.histogram(data, bins=nbins, range=(0.0, hi))
    mids = 0.5 * (edges[1:] + edges[:-1])
    pred = radial_density(mids) * (edges[1] - edges[0]) * n_paths
    kern = np.ones(smooth_bins) / smooth_bins
    cnt_s = np.convolve(cnt, kern, mode="same")
    pred_s = np.convolve(pred, kern, mode="same")
    keep = cnt_s >= min_hits
    rel = np.abs(cnt_s[keep] / np.maximum(pred_s[keep], 1e-300) - 1.0)
    max_rel = float(rel.max()) if rel.size else float("nan")
    passed = abs(z) <= 3.0 and rel.size > 0 and max_rel <= tol
    return CheckReport(
        name="killed_kernel_mc", passed=passed,
        metrics={"survival_mc": surv, "survival_quadrature": surv_true,
                 "survival_z": z, "max_bin_rel_err": max_rel,
                 "bins_compared": int(keep.sum()), "tolerance": tol},
        details={"t": t, "x_radius": x_radius, "n_paths": n_paths,
                 "dt": dt, "seed": seed})
