"""Reflecting Brownian motion on the model charts.

Walkers carry continuous chart coordinates (never mesh-snapped): wall axes
reflect by mirror folding, periodic axes wrap, and the disk reflects
radially.  The generator convention is (1/2) Laplacian -- each coordinate
receives a Gaussian increment of variance dt -- so the time-t position
density is g(t, x, y), the same density heat.heat_kernel(m, y, t) returns.

First-passage studies correct for within-step boundary crossings with the
Brownian-bridge crossing probability exp(-2 d_a d_b / dt) for the flat
boundary; without it, discrete reflection biases exit times upward by
O(sqrt(dt)).

RNG: counter-based Philox streams keyed by (seed, block) with a fixed
block size of 16384 paths, so serial and parallel runs produce identical
samples for identical (seed, config).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from flowlab.geometry import (Mesh, boundary_normal_derivative,
                              convexity_report, geodesic_distance,
                              laplace_beltrami)

_BLOCK = 16384


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) << 20)
                                                + int(block)))


# --------------------------------------------------------------------------- #
# chart geometry
# --------------------------------------------------------------------------- #

class _Chart:
    """Reflection/wrap rules and wall distance for one model chart."""

    def __init__(self, m: Mesh):
        self.kind = m.kind
        self.dim = m.dim
        if m.kind == "disk":
            self.radius = m.descriptor.radius
        else:
            self.lengths = np.array([m.spacing[a] * m.grid_shape[a]
                                     if m.periodic[a] else
                                     m.spacing[a] * (m.grid_shape[a] - 1)
                                     for a in range(m.dim)])
            self.periodic = np.array(m.periodic, dtype=bool)

    def confine(self, pos: np.ndarray) -> np.ndarray:
        """Mirror-fold / wrap / radially reflect positions into the chart."""
        if self.kind == "disk":
            rr = np.sqrt(np.sum(pos ** 2, axis=-1))
            out = rr > self.radius
            if np.any(out):
                scale = (2 * self.radius - rr[out]) / rr[out]
                pos[out] *= scale[:, None]
            return pos
        for a in range(self.dim):
            La = self.lengths[a]
            if self.periodic[a]:
                pos[..., a] %= La
            else:
                r = pos[..., a] % (2 * La)
                pos[..., a] = np.minimum(r, 2 * La - r)
        return pos

    def wall_distance(self, pos: np.ndarray) -> np.ndarray:
        """Distance to the reflecting boundary (inf -> large if none)."""
        if self.kind == "disk":
            return self.radius - np.sqrt(np.sum(pos ** 2, axis=-1))
        best = np.full(pos.shape[:-1], np.inf)
        for a in range(self.dim):
            if not self.periodic[a]:
                La = self.lengths[a]
                best = np.minimum(best,
                                  np.minimum(pos[..., a], La - pos[..., a]))
        return best

    def dist_to(self, pos: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Chart geodesic distance to the fixed point y (periodic-aware)."""
        d = pos - y
        if self.kind != "disk":
            for a in range(self.dim):
                if self.periodic[a]:
                    La = self.lengths[a]
                    d[..., a] -= La * np.round(d[..., a] / La)
        return np.sqrt(np.sum(d ** 2, axis=-1))


def _start_point(m: Mesh, y) -> np.ndarray:
    if np.isscalar(y) or (isinstance(y, np.ndarray) and y.ndim == 0):
        return np.array(m.coords[int(y)], dtype=float)
    return np.array(y, dtype=float)


# --------------------------------------------------------------------------- #
# walker API
# --------------------------------------------------------------------------- #

@dataclass
class WalkerState:
    """One reflecting walker in chart coordinates."""

    position: np.ndarray
    time: float = 0.0
    local_time: float = 0.0
    rng: np.random.Generator = field(
        default_factory=lambda: _block_rng(0, 0))


def rbm_step(w: WalkerState, dt: float, mesh: Mesh) -> WalkerState:
    """Advance one walker by a variance-dt Gaussian increment, reflect at
    the boundary, and accumulate the collar local-time estimate
    (occupation of the sqrt(dt)-collar divided by 2 sqrt(dt))."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    chart = _Chart(mesh)
    pos = w.position + math.sqrt(dt) * w.rng.standard_normal(mesh.dim)
    pos = chart.confine(pos[None].copy())[0]
    eps = math.sqrt(dt)
    hit = chart.wall_distance(pos[None])[0] < eps
    lt = w.local_time + (dt / (2 * eps) if hit else 0.0)
    return WalkerState(pos, w.time + dt, lt, w.rng)


# --------------------------------------------------------------------------- #
# position sampling
# --------------------------------------------------------------------------- #

def sample_rbm_positions(m: Mesh, y, t: float, n_paths: int, seed: int = 0,
                         dt: Optional[float] = None) -> np.ndarray:
    """Positions of n_paths independent reflecting walkers started at y
    after elapsed time t; shape (n_paths, dim)."""
    if t <= 0:
        raise ValueError("t must be positive")
    dt = t / 400 if dt is None else dt
    n_steps = max(1, int(round(t / dt)))
    dt = t / n_steps
    chart = _Chart(m)
    y0 = _start_point(m, y)
    out = np.empty((n_paths, m.dim))
    for block in range(0, n_paths, _BLOCK):
        nb = min(_BLOCK, n_paths - block)
        rng = _block_rng(seed, block // _BLOCK)
        pos = np.tile(y0, (nb, 1))
        for _ in range(n_steps):
            pos += math.sqrt(dt) * rng.standard_normal((nb, m.dim))
            pos = chart.confine(pos)
        out[block:block + nb] = pos
    return out


# --------------------------------------------------------------------------- #
# exit times
# --------------------------------------------------------------------------- #

@dataclass
class ExitTimeSamples:
    """First exit times of RBM from the ball B(y, r)."""

    y: np.ndarray
    r: float
    dt: float
    horizon: float
    seed: int
    tau: np.ndarray          # exit time, = horizon where censored
    censored: np.ndarray     # bool
    warning: Optional[str] = None

    @property
    def n_paths(self) -> int:
        return self.tau.size


def sample_exit_times(m: Mesh, y, r: float, dt: Optional[float] = None,
                      n_paths: int = 100_000,
                      horizon: Optional[float] = None,
                      seed: int = 0) -> ExitTimeSamples:
    """First exit times from B(y, r) for reflecting walkers started at y.

    Exit is declared on the first step whose endpoint has chart distance
    > r from y, or, for steps ending inside, with the Brownian-bridge
    crossing probability exp(-2 d_a d_b / dt) against the sphere.  Paths
    alive at the horizon are censored (tau = horizon).
    """
    if not 0 < r < 1:
        raise ValueError("need r in (0, 1)")
    dt = 1e-4 * r * r if dt is None else dt
    horizon = 2.0 * r * r if horizon is None else horizon
    n_steps = int(np.ceil(horizon / dt))
    chart = _Chart(m)
    y0 = _start_point(m, y)
    tau = np.full(n_paths, n_steps * dt)
    censored = np.ones(n_paths, dtype=bool)
    sqdt = math.sqrt(dt)
    for block in range(0, n_paths, _BLOCK):
        nb = min(_BLOCK, n_paths - block)
        rng = _block_rng(seed, block // _BLOCK)
        pos = np.tile(y0, (nb, 1))
        idx = np.arange(block, block + nb)
        d_prev = np.full(nb, r)          # distance from the exit sphere
        for k in range(n_steps):
            pos += sqdt * rng.standard_normal((pos.shape[0], m.dim))
            pos = chart.confine(pos)
            d_new = r - chart.dist_to(pos, y0)
            crossed = d_new <= 0
            inside = ~crossed
            if inside.any():
                p_cross = np.exp(-2 * d_prev[inside] * d_new[inside] / dt)
                u = rng.random(int(inside.sum()))
                bridge = np.zeros_like(crossed)
                bridge[inside] = u < p_cross
            else:
                bridge = np.zeros_like(crossed)
            gone = crossed | bridge
            if gone.any():
                texit = np.where(crossed[gone], (k + 1) * dt,
                                 (k + 0.5) * dt)
                tau[idx[gone]] = texit
                censored[idx[gone]] = False
                keep = ~gone
                pos, idx, d_prev = pos[keep], idx[keep], d_new[keep]
            else:
                d_prev = d_new
            if idx.size == 0:
                break
    samples = ExitTimeSamples(y0, r, dt, n_steps * dt, seed, tau, censored)
    frac = censored.mean()
    if frac >= 0.05:
        samples.warning = (f"{100 * frac:.1f}% of paths censored at the "
                           f"horizon {samples.horizon:g}; tail estimates "
                           "beyond it are unavailable")
    return samples


@dataclass
class ExitTailReport:
    """Empirical tail P(tau < kappa r^2) against the e^{-eta/kappa} shape."""

    kappa: np.ndarray
    counts: np.ndarray
    p_hat: np.ndarray
    se: np.ndarray
    neg_log_p: np.ndarray
    eta_hat: float
    monotone: bool           # -log p vs 1/kappa increasing within 2 SE
    n_paths: int
    dropped: list
    notes: Optional[str] = None


def exit_tail_estimate(samples: ExitTimeSamples,
                       kappa_grid: np.ndarray) -> Tuple[float,
                                                        ExitTailReport]:
    """Fit eta_hat = min over the grid of -kappa log P(tau < kappa r^2)."""
    kappa_grid = np.sort(np.asarray(kappa_grid, float))
    r2 = samples.r ** 2
    if kappa_grid.max() * r2 > samples.horizon:
        raise ValueError("kappa grid probes beyond the sampling horizon")
    n = samples.n_paths
    kept_k, counts, dropped = [], [], []
    for k in kappa_grid:
        cnt = int(np.sum(samples.tau < k * r2))
        if cnt == 0:
            dropped.append((float(k), "zero exits: tail below resolution, "
                            "consistent with the bound"))
        else:
            kept_k.append(float(k))
            counts.append(cnt)
    kappa = np.array(kept_k)
    counts = np.array(counts, dtype=int)
    p_hat = counts / n
    se = np.sqrt(p_hat * (1 - p_hat) / n)
    neg_log = -np.log(p_hat)
    eta_hat = float(np.min(kappa * neg_log)) if kappa.size else float("nan")
    # e^{-eta/kappa} shape: -log p should increase with 1/kappa, i.e.
    # decrease along increasing kappa, up to 2-SE noise
    se_log = se / p_hat
    monotone = True
    for i in range(1, kappa.size):
        slack = 2 * (se_log[i] + se_log[i - 1])
        if neg_log[i] > neg_log[i - 1] + slack:
            monotone = False
    report = ExitTailReport(kappa, counts, p_hat, se, neg_log, eta_hat,
                            monotone, n, dropped, samples.warning)
    return eta_hat, report


# --------------------------------------------------------------------------- #
# expectation functionals
# --------------------------------------------------------------------------- #

def interpolate_vertex_field(m: Mesh, f: np.ndarray,
                             pos: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a vertex field at chart positions
    (product meshes); nearest-vertex on the disk."""
    f = np.asarray(f, float)
    if m.grid_shape is None:
        d2 = (np.sum(pos ** 2, axis=1)[:, None]
              - 2 * pos @ m.coords.T
              + np.sum(m.coords ** 2, axis=1)[None, :])
        return f[np.argmin(d2, axis=1)]
    g = f.reshape(m.grid_shape)
    xi = np.empty_like(pos)
    for a in range(m.dim):
        xi[:, a] = pos[:, a] / m.spacing[a]
    out = np.zeros(pos.shape[0])
    base = np.floor(xi).astype(int)
    frac = xi - base
    for corner in range(1 << m.dim):
        w = np.ones(pos.shape[0])
        idx = []
        for a in range(m.dim):
            bit = (corner >> a) & 1
            ia = base[:, a] + bit
            if m.periodic[a]:
                ia %= m.grid_shape[a]
            else:
                ia = np.clip(ia, 0, m.grid_shape[a] - 1)
            idx.append(ia)
            w *= frac[:, a] if bit else 1 - frac[:, a]
        out += w * g[tuple(idx)]
    return out


def expectation_along_rbm(run, y, s: float, s0: float, n_paths: int = 50_000,
                          seed: int = 0,
                          dt: Optional[float] = None) -> Tuple[float, float]:
    """Monte Carlo estimate of E q(s0 - s, X_s^y) with X reflecting BM.

    Returns (mean, standard error); the vertex field q(s0 - s) must be a
    stored flow snapshot.  This is the sampled counterpart of
    zeta_functional(run, r=s0, y, t=s).
    """
    from flowlab.yang_mills import _snapshot
    if not 0 < s <= s0:
        raise ValueError("need 0 < s <= s0")
    q = _snapshot(run, s0 - s)
    m = run.mesh
    pos = sample_rbm_positions(m, y, s, n_paths, seed=seed, dt=dt)
    vals = interpolate_vertex_field(m, q, pos)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))


# --------------------------------------------------------------------------- #
# squared-distance diagnostics
# --------------------------------------------------------------------------- #

@dataclass
class SquaredDistanceReport:
    """Discrete checks of the flat squared-distance identities."""

    y: int
    eps: float
    laplacian_target: float          # 2 n on a flat manifold
    max_laplacian_error: float       # over interior vertices in B(y, eps)
    l2_laplacian_error: float        # dual-volume-weighted RMS error
    max_laplacian_excess: float      # one-sided overshoot above 2 n
    min_boundary_normal_derivative: float
    n_checked: int


def squared_distance_checks(m: Mesh, y: int,
                            eps: Optional[float] = None
                            ) -> SquaredDistanceReport:
    """Evaluate Laplacian(dist_y^2) = 2 dim and the boundary sign
    d/dnu dist_y^2 >= 0 inside B(y, eps) on a convex-boundary mesh."""
    rep = convexity_report(m)
    if not rep.convex:
        raise ValueError("squared_distance_checks requires a convex "
                         "boundary")
    dist = geodesic_distance(m, y)
    if eps is None:
        # stay below the injectivity radius of the periodic directions
        eps = float(dist.max())
        if m.grid_shape is not None:
            for a in range(m.dim):
                if m.periodic[a]:
                    eps = min(eps, 0.45 * m.spacing[a] * m.grid_shape[a])
    d2 = dist ** 2
    L = laplace_beltrami(m)
    lap = L @ d2
    h = (m.descriptor.radius / m.descriptor.nr if m.kind == "disk"
         else float(np.max(m.spacing)))
    # FV boundary rows impose a zero-flux closure that dist^2 violates;
    # the interior identity is the lemma's content
    interior = (~m.boundary_mask) & (dist < eps)
    # keep the stencil clear of the cut locus of periodic directions,
    # where dist^2 has a min-image kink
    if m.grid_shape is not None:
        y0 = _start_point(m, y)
        off = m.coords - y0
        for a in range(m.dim):
            if m.periodic[a]:
                La = m.spacing[a] * m.grid_shape[a]
                off[:, a] -= La * np.round(off[:, a] / La)
                interior &= np.abs(off[:, a]) < La / 2 - 1.5 * m.spacing[a]
    ball_bnd = m.bnd_vertices[dist[m.bnd_vertices] < eps]
    dn = boundary_normal_derivative(m, d2)
    dn_in_ball = dn[dist[m.bnd_vertices] < eps]
    target = 2.0 * m.dim
    if interior.any():
        resid = lap[interior] - target
        w = m.weights[interior]
        err = float(np.abs(resid).max())
        # the vertex-sup error on the polar disk mesh carries an O(h)
        # center artifact; the FV-natural weighted RMS is second order
        l2 = float(np.sqrt(np.sum(w * resid ** 2) / np.sum(w)))
        excess = float(resid.max())
    else:
        err = l2 = excess = float("nan")
    mind = float(dn_in_ball.min()) if ball_bnd.size else float("inf")
    return SquaredDistanceReport(int(y) if np.isscalar(y) else -1, eps,
                                 target, err, l2, excess, mind,
                                 int(interior.sum()))


def halfline_exit_times(r: float, dt: Optional[float] = None,
                        n_paths: int = 100_000,
                        horizon: Optional[float] = None,
                        seed: int = 0) -> ExitTimeSamples:
    """First passage of |BM| (reflection at 0) to the level r, started at 0.

    The 1-D validation case for the exit-tail machinery: its law is known
    in closed form (oracles.rbm_halfline_oracle)."""
    if r <= 0:
        raise ValueError("r must be positive")
    dt = 1e-4 * r * r if dt is None else dt
    horizon = 3.0 * r * r if horizon is None else horizon
    n_steps = int(np.ceil(horizon / dt))
    sqdt = math.sqrt(dt)
    tau = np.full(n_paths, n_steps * dt)
    censored = np.ones(n_paths, dtype=bool)
    for block in range(0, n_paths, _BLOCK):
        nb = min(_BLOCK, n_paths - block)
        rng = _block_rng(seed, block // _BLOCK)
        x = np.zeros(nb)
        idx = np.arange(block, block + nb)
        d_prev = np.full(nb, r)
        for k in range(n_steps):
            x = np.abs(x + sqdt * rng.standard_normal(x.size))
            d_new = r - x
            crossed = d_new <= 0
            inside = ~crossed
            bridge = np.zeros_like(crossed)
            if inside.any():
                p = np.exp(-2 * d_prev[inside] * d_new[inside] / dt)
                bridge[inside] = rng.random(int(inside.sum())) < p
            gone = crossed | bridge
            if gone.any():
                tau[idx[gone]] = np.where(crossed[gone], (k + 1) * dt,
                                          (k + 0.5) * dt)
                censored[idx[gone]] = False
                keep = ~gone
                x, idx, d_prev = x[keep], idx[keep], d_new[keep]
            else:
                d_prev = d_new
            if idx.size == 0:
                break
    out = ExitTimeSamples(np.zeros(1), r, dt, n_steps * dt, seed, tau,
                          censored)
    if censored.mean() >= 0.05:
        out.warning = (f"{100 * censored.mean():.1f}% of paths censored at "
                       f"the horizon {out.horizon:g}")
    return out
