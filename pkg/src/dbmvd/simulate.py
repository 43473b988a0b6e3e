"""Pathwise simulation of the distorted Brownian motion through its
signed radial process, plus the spherical lift onto the 3-d branch.

The signed radial process is a skew Brownian motion with drift.  The
Euler scheme resolves every origin straddle exactly: when a proposed
increment crosses zero, the exit side is drawn with the skew
probabilities (1 +/- kappa)/2 and the proposal magnitude is kept.  This
reproduces the local-time push of the SDE without resolving the local
time itself; the symmetric local time is estimated separately from the
occupation of a sqrt(dt) neighborhood of the origin.

Randomness comes from the counter-based Philox generator, so runs are
reproducible for a given seed regardless of block sizes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analytic import drift_b
from .model import HALF_LINE, SPACE3, ModelError, ModelParams

__all__ = [
    "PathSample", "OccupationStats", "simulate_radial", "sample_terminal",
    "straddle_statistics", "hitting_time_origin", "occupation_statistics",
    "lift_path", "simulate_killed3d", "ball_occupation_target",
]

_BLOCK = 1 << 20


def _rng(seed, stream=0):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def _drift_table(params, extent=60.0, spacing=0.01):
    """Drift sampled on a uniform grid for fast interpolation; constant
    extrapolation beyond the window matches the model (drift is -gamma on
    the positive side and follows the held profile tail on the negative)."""
    grid = np.arange(-extent, extent + spacing / 2, spacing)
    vals = drift_b(grid, params)
    return grid, vals


@njit(cache=True)
def _radial_block(y, occ, straddles, pos_exits, dt, sqdt, p_plus, eps,
                  bgrid, bvals, normals, uniforms, out_y, out_lt):
    """Advance one path through a block of steps, recording every state.

    Returns the updated (y, occ, straddles, pos_exits)."""
    n = normals.shape[0]
    for i in range(n):
        b = np.interp(y, bgrid, bvals)
        prop = y + b * dt + sqdt * normals[i]
        if (y > 0.0 and prop < 0.0) or (y < 0.0 and prop > 0.0) or y == 0.0:
            straddles += 1
            if uniforms[i] < p_plus:
                pos_exits += 1
                prop = abs(prop)
            else:
                prop = -abs(prop)
        y = prop
        if abs(y) < eps:
            occ += dt
        out_y[i] = y
        out_lt[i] = occ
    return y, occ, straddles, pos_exits


@njit(cache=True)
def _ensemble_block(y, dt, sqdt, p_plus, bgrid, bvals, normals, uniforms):
    """Advance an ensemble of paths through a block of steps in place."""
    nsteps, npaths = normals.shape
    for i in range(nsteps):
        for j in range(npaths):
            yj = y[j]
            b = np.interp(yj, bgrid, bvals)
            prop = yj + b * dt + sqdt * normals[i, j]
            if (yj > 0.0 and prop < 0.0) or (yj < 0.0 and prop > 0.0) \
                    or yj == 0.0:
                if uniforms[i, j] < p_plus:
                    prop = abs(prop)
                else:
                    prop = -abs(prop)
            y[j] = prop
    return y


@dataclass
class PathSample:
    """One simulated path of the signed radial process, possibly lifted
    to the 3-d branch."""

    times: np.ndarray
    y: np.ndarray
    local_time: np.ndarray
    dt: float
    seed: int
    params_digest: str
    straddles: int = 0
    positive_exits: int = 0
    x: np.ndarray | None = None   # (n, 3) coordinates on the 3-d branch

    @property
    def branch(self):
        out = np.where(self.y > 0, SPACE3,
                       np.where(self.y < 0, HALF_LINE, "origin"))
        return out

    def to_csv(self, path):
        br = self.branch
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["step", "t", "y", "branch",
                         "x1", "x2", "x3", "local_time"])
            for i in range(self.times.size):
                if self.x is not None and self.y[i] > 0:
                    x1, x2, x3 = (f"{v:.17g}" for v in self.x[i])
                else:
                    x1 = x2 = x3 = ""
                wr.writerow([i, f"{self.times[i]:.17g}",
                             f"{self.y[i]:.17g}", br[i], x1, x2, x3,
                             f"{self.local_time[i]:.17g}"])


def simulate_radial(params, r0, t_max, dt, seed, record_stride=1,
                    local_time_eps=None):
    """Simulate one path of the signed radial process up to t_max.

    Parameters
    ----------
    params : ModelParams
    r0 : float
        Starting value of the signed radial coordinate (positive means
        the 3-d branch).
    t_max, dt : float
        Horizon and Euler step.
    seed : int
        Philox key; identical seeds give identical paths.
    record_stride : int
        Keep every record_stride-th state (step 0 is always kept).
    local_time_eps : float, optional
        Window of the occupation estimator of the local time at the
        origin; defaults to sqrt(dt).
    """
    if dt <= 0 or t_max <= 0:
        raise ModelError("simulate_radial needs positive dt and t_max")
    nsteps = int(round(t_max / dt))
    eps = local_time_eps if local_time_eps is not None else math.sqrt(dt)
    bgrid, bvals = _drift_table(params)
    p_plus = (1.0 + params.kappa) / 2.0
    sqdt = math.sqrt(dt)
    rng = _rng(seed)
    y = float(r0)
    occ = 0.0
    straddles = 0
    pos_exits = 0
    rec_y = [np.array([y])]
    rec_lt = [np.array([0.0])]
    rec_idx = [np.array([0])]
    done = 0
    while done < nsteps:
        m = min(_BLOCK, nsteps - done)
        normals = rng.standard_normal(m)
        uniforms = rng.random(m)
        out_y = np.empty(m)
        out_lt = np.empty(m)
        y, occ, straddles, pos_exits = _radial_block(
            y, occ, straddles, pos_exits, dt, sqdt, p_plus, eps,
            bgrid, bvals, normals, uniforms, out_y, out_lt)
        idx = np.arange(done + 1, done + m + 1)
        keep = (idx % record_stride == 0) | (idx == nsteps)
        rec_y.append(out_y[keep])
        rec_lt.append(out_lt[keep])
        rec_idx.append(idx[keep])
        done += m
    idx = np.concatenate(rec_idx)
    return PathSample(
        times=idx * dt,
        y=np.concatenate(rec_y),
        local_time=np.concatenate(rec_lt) / (2.0 * eps),
        dt=dt, seed=seed, params_digest=params.digest(),
        straddles=straddles, positive_exits=pos_exits)


def sample_terminal(params, r0, t, dt, seed, n_paths, kappa_override=None):
    """Terminal values Y_t of an ensemble of independent paths.

    kappa_override replaces the skew constant of the straddle resolution
    only (the drift is untouched); it exists for negative-control runs.
    """
    if n_paths <= 0:
        raise ModelError("n_paths must be positive")
    nsteps = int(round(t / dt))
    bgrid, bvals = _drift_table(params)
    kap = params.kappa if kappa_override is None else float(kappa_override)
    p_plus = (1.0 + kap) / 2.0
    sqdt = math.sqrt(dt)
    rng = _rng(seed, stream=1)
    y = np.full(n_paths, float(r0))
    block = max(1, _BLOCK // max(n_paths, 1))
    done = 0
    while done < nsteps:
        m = min(block, nsteps - done)
        normals = rng.standard_normal((m, n_paths))
        uniforms = rng.random((m, n_paths))
        y = _ensemble_block(y, dt, sqdt, p_plus, bgrid, bvals,
                            normals, uniforms)
        done += m
    return y


def straddle_statistics(params, n_straddles, dt, seed, r0=0.0,
                        max_steps=50_000_000):
    """Exit-side frequency over origin straddles.

    Runs the radial scheme from r0 until n_straddles origin crossings
    have been resolved, and reports the fraction that exited to the
    positive (3-d) side together with the binomial comparison against
    (1 + kappa)/2.
    """
    bgrid, bvals = _drift_table(params)
    p_plus = (1.0 + params.kappa) / 2.0
    sqdt = math.sqrt(dt)
    rng = _rng(seed, stream=2)
    y = float(r0)
    occ = 0.0
    straddles = 0
    pos_exits = 0
    total = 0
    while straddles < n_straddles:
        if total >= max_steps:
            raise ModelError(
                f"straddle budget exhausted: {straddles} < {n_straddles}")
        m = _BLOCK
        normals = rng.standard_normal(m)
        uniforms = rng.random(m)
        out_y = np.empty(m)
        out_lt = np.empty(m)
        y, occ, straddles, pos_exits = _radial_block(
            y, occ, straddles, pos_exits, dt, sqdt, p_plus, sqdt,
            bgrid, bvals, normals, uniforms, out_y, out_lt)
        total += m
    frac = pos_exits / straddles
    sigma = math.sqrt(p_plus * (1.0 - p_plus) / straddles)
    return {
        "n_straddles": straddles,
        "positive_exits": pos_exits,
        "frac_positive": frac,
        "expected": p_plus,
        "sigma": sigma,
        "z_score": (frac - p_plus) / sigma if sigma > 0 else 0.0,
    }


def hitting_time_origin(params, r0, dt, seed, n_paths, t_max):
    """First times the signed radial process crosses the origin, for an
    ensemble started at r0.  Paths that never cross return nan."""
    nsteps = int(round(t_max / dt))
    bgrid, bvals = _drift_table(params)
    sqdt = math.sqrt(dt)
    rng = _rng(seed, stream=3)
    y = np.full(n_paths, float(r0))
    hit = np.full(n_paths, np.nan)
    alive = np.ones(n_paths, dtype=bool)
    s0 = np.sign(r0)
    for i in range(nsteps):
        if not alive.any():
            break
        b = np.interp(y, bgrid, bvals)
        y = y + b * dt + sqdt * rng.standard_normal(n_paths)
        crossed = alive & (np.sign(y) != s0)
        hit[crossed] = (i + 1) * dt
        alive &= ~crossed
    return hit


def ball_occupation_target(params, ball_radius=1.0, n_quad=20001):
    """Quadrature value of 2 pi gamma m_gamma(B): the limiting occupation
    fraction of the ball of the given radius among time spent on the 3-d
    branch, for gamma > 0."""
    g = params.gamma
    r = np.linspace(0.0, ball_radius, n_quad)
    dens = np.exp(-2.0 * g * r) / np.pi
    m_ball = float(np.trapezoid(dens, r)) if hasattr(np, "trapezoid") \
        else float(np.trapz(dens, r))
    return 2.0 * np.pi * g * m_ball


@dataclass
class OccupationStats:
    """Occupation summary of one radial path."""

    t_total: float
    time_3d: float
    time_half_line: float
    time_ball: float
    frac_ball_raw: float
    frac_ball_conditional: float
    target_conditional: float
    rel_error: float
    local_time_final: float
    mean_drift_3d: float

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in (
            "t_total", "time_3d", "time_half_line", "time_ball",
            "frac_ball_raw", "frac_ball_conditional", "target_conditional",
            "rel_error", "local_time_final", "mean_drift_3d")}


def occupation_statistics(sample: PathSample, params, ball_radius=1.0):
    """Time-average occupation of the unit ball (and diagnostics) for a
    radial path.  The ergodic comparison is conditional on time spent on
    the 3-d branch, matching the weight of the ball in the invariant
    measure restricted to that branch."""
    y = sample.y
    w = np.empty(y.size)
    w[:-1] = np.diff(sample.times)
    w[-1] = 0.0
    in3d = y > 0
    t3d = float(w[in3d].sum())
    thalf = float(w[y < 0].sum())
    tball = float(w[in3d & (y <= ball_radius)].sum())
    target = ball_occupation_target(params, ball_radius)
    cond = tball / t3d if t3d > 0 else np.nan
    # crude drift diagnostic on the 3-d branch, away from the origin
    inc = np.diff(y)
    interior = in3d[:-1] & (y[:-1] > 0.5) & (np.abs(np.diff(sample.times)) > 0)
    mean_drift = float(np.sum(inc[interior]) / np.sum(w[:-1][interior])) \
        if interior.any() else np.nan
    return OccupationStats(
        t_total=float(w.sum()), time_3d=t3d, time_half_line=thalf,
        time_ball=tball,
        frac_ball_raw=tball / float(w.sum()) if w.sum() > 0 else np.nan,
        frac_ball_conditional=cond,
        target_conditional=target,
        rel_error=abs(cond - target) / target if target > 0 else np.nan,
        local_time_final=float(sample.local_time[-1]),
        mean_drift_3d=mean_drift)


def _sphere_step(u, da, rng, max_sub=0.05):
    """Advance a point on the unit sphere by spherical Brownian motion for
    clock increment da, sub-stepping so each Euler move stays small."""
    nsub = max(1, int(math.ceil(da / max_sub)))
    h = da / nsub
    for _ in range(nsub):
        xi = rng.standard_normal(3)
        xi -= np.dot(xi, u) * u
        u = u + math.sqrt(h) * xi
        u /= np.linalg.norm(u)
    return u


def lift_path(sample: PathSample, seed, clock_cap=8.0):
    """Attach 3-d coordinates to the positive excursions of a radial path.

    The angular part is a spherical Brownian motion run on the clock
    A_t = integral dt / Y_t^2.  The clock diverges at every origin visit,
    so each new excursion starts from an independent uniform direction;
    a clock increment above clock_cap is treated as full mixing.
    """
    rng = _rng(seed, stream=4)
    y = sample.y
    n = y.size
    x = np.full((n, 3), np.nan)
    u = None
    for i in range(n):
        if y[i] <= 0:
            u = None
            continue
        if u is None:
            v = rng.standard_normal(3)
            u = v / np.linalg.norm(v)
        else:
            dtl = sample.times[i] - sample.times[i - 1]
            ym = max(min(abs(y[i - 1]), abs(y[i])), 1e-12)
            da = dtl / ym ** 2
            if da > clock_cap:
                v = rng.standard_normal(3)
                u = v / np.linalg.norm(v)
            else:
                u = _sphere_step(u, da, rng)
        x[i] = y[i] * u
    out = PathSample(times=sample.times, y=sample.y,
                     local_time=sample.local_time, dt=sample.dt,
                     seed=sample.seed, params_digest=sample.params_digest,
                     straddles=sample.straddles,
                     positive_exits=sample.positive_exits, x=x)
    return out


def simulate_killed3d(gamma, r0, t, dt, seed, n_paths):
    """Monte Carlo of the 3-d process killed at the origin, i.e. the
    drift process dX = grad log psi_gamma(X) dt + dW absorbed at 0.

    The simulation uses the skew-product form of that process: its
    radius is exactly a Brownian motion with drift -gamma (the Bessel
    repulsion and the 1/|x| part of the drift cancel), absorbed when it
    reaches 0.  Radial increments are sampled exactly and intra-step
    absorption uses the exact Brownian bridge crossing probability
    exp(-2 r r' / dt), so the survival law carries no time-step bias.
    A naive 3-d Euler walk with a kill radius distorts both the survival
    probability and the near-origin histogram at order sqrt(dt).

    Returns (radii, survived): terminal radii (nan once absorbed) and
    the boolean survival mask.
    """
    nsteps = int(round(t / dt))
    rng = _rng(seed, stream=5)
    r = np.full(n_paths, float(r0))
    alive = np.ones(n_paths, dtype=bool)
    sqdt = math.sqrt(dt)
    for _ in range(nsteps):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        ra = r[idx]
        rn = ra - gamma * dt + sqdt * rng.standard_normal(idx.size)
        crossed = rn <= 0.0
        surv = ~crossed
        # bridge correction for paths that stayed positive at both ends
        p_cross = np.exp(-2.0 * ra[surv] * np.maximum(rn[surv], 0.0) / dt)
        surv_idx = idx[surv]
        bridge_dead = rng.random(surv_idx.size) < p_cross
        alive[idx[crossed]] = False
        alive[surv_idx[bridge_dead]] = False
        r[idx] = rn
    radii = np.where(alive, r, np.nan)
    return radii, alive
