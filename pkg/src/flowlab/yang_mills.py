"""Lattice Yang-Mills gradient flow with relative/absolute boundary modes.

The connection lives on mesh edges (one group element per stored
orientation), curvature on plaquettes as F(P) = log(holonomy dP)/area(P).
The flow is the exact gradient flow of the finite-volume energy
E = sum_P w_P |F(P)|^2 in the metric induced by the edge dual volumes, which
realizes d*F discretely and makes energy descent a theorem of the scheme
rather than an observation: each accepted step satisfies
E(t+dt) <= E(t) + 1e-12 or the run aborts.

Boundary modes:

* Absolute -- free flow of the FV energy (boundary-tangential plaquettes
  carry half dual volume).  This *is* the mirror-ghost construction: the
  doubled reflection-symmetric configuration has twice the FV energy, so the
  free FV flow equals the ghost-layer flow restricted to symmetric data, and
  the normal curvature at the wall vanishes by reflection antisymmetry.
* Relative -- boundary-tangential plaquettes are pinned at identity
  holonomy (in 3-D by pinning boundary-tangential links; in 2-D the
  constraint set is empty), and the flow direction is projected to keep the
  tangential boundary links frozen.  Projected gradient flow still descends.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from flowlab.geometry import Mesh, boundary_normal_derivative
from flowlab.groups import get_group, BranchCutError

MODES = ("Relative", "Absolute")


@dataclass
class LatticeConnection:
    mesh: Mesh
    group: type
    links: np.ndarray  # (E,) for U1, (E, 4) for SU2

    def copy(self) -> "LatticeConnection":
        return LatticeConnection(self.mesh, self.group, self.links.copy())


class FlowAbort(RuntimeError):
    """Flow stopped (branch cut or descent failure); carries the state."""

    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def random_connection(m: Mesh, group, amplitude: float,
                      seed: int) -> LatticeConnection:
    """i.i.d. links exp(amplitude * xi * generator), xi ~ U[-1, 1]."""
    G = get_group(group)
    if not 0 <= amplitude <= np.pi / 4:
        raise ValueError("amplitude must lie in [0, pi/4] to keep holonomies "
                         "inside the log principal branch")
    rng = np.random.default_rng(seed)
    E = m.n_edges
    xi = rng.uniform(-1, 1, E)
    if G.algebra_dim == 1:
        v = (amplitude * xi)[:, None]
    else:
        n = rng.standard_normal((E, 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        v = amplitude * xi[:, None] * n
    return LatticeConnection(m, G, G.exp(v))


def gauge_transform(c: LatticeConnection, site: np.ndarray) -> LatticeConnection:
    """Vertex-wise change of frame: U_e -> g_head U_e g_tail^{-1}."""
    G, m = c.group, c.mesh
    head, tail = m.edges[:, 1], m.edges[:, 0]
    links = G.multiply(site[head],
                       G.multiply(c.links, G.inverse(site[tail])))
    return LatticeConnection(m, G, G.normalize(links))


# --------------------------------------------------------------------------- #
# holonomy / curvature
# --------------------------------------------------------------------------- #

def _slot_elements(c: LatticeConnection):
    """Per-plaquette, per-traversal-slot group elements (pads -> identity)."""
    G, m = c.group, c.mesh
    pe, ps = m.plaq_edges, m.plaq_signs
    P, S = pe.shape
    out = []
    for j in range(S):
        e = np.where(pe[:, j] < 0, 0, pe[:, j])
        u = c.links[e]
        if G.algebra_dim == 1:
            g = ps[:, j] * u
        else:
            g = np.where((ps[:, j] < 0)[:, None], G.inverse(u), u)
            g = np.where((ps[:, j] == 0)[:, None],
                         G.identity(P), g)
        out.append(g)
    return out


def plaquette_holonomy(c: LatticeConnection) -> np.ndarray:
    """Holonomy around each 2-cell, later traversal factors on the left."""
    slots = _slot_elements(c)
    hol = slots[0]
    for g in slots[1:]:
        hol = c.group.multiply(g, hol)
    return hol


def plaquette_curvature(c: LatticeConnection) -> np.ndarray:
    """F(P) = log(holonomy dP) / area(P), shape (P, algebra_dim).

    Raises BranchCutError (with the flagged plaquette list) if any holonomy
    sits within the guard band of the log branch cut.
    """
    hol = plaquette_holonomy(c)
    return c.group.log(hol) / c.mesh.plaq_areas[:, None]


def yang_mills_energy(c: LatticeConnection,
                      F: Optional[np.ndarray] = None) -> float:
    """E = sum_P w_P |F(P)|^2 (FV quadrature of the curvature density)."""
    if F is None:
        F = plaquette_curvature(c)
    return float(np.dot(c.mesh.plaq_weights, np.sum(F * F, axis=1)))


def q_vertex_field(c: LatticeConnection,
                   F: Optional[np.ndarray] = None) -> np.ndarray:
    """Curvature density |F|^2 averaged to vertices (dual-volume weighted)."""
    m = c.mesh
    if F is None:
        F = plaquette_curvature(c)
    q2 = np.sum(F * F, axis=1)
    corners = (m.plaq_vertices >= 0).sum(axis=1)
    share = m.plaq_weights / corners
    num = np.zeros(m.n_vertices)
    den = np.zeros(m.n_vertices)
    for j in range(m.plaq_vertices.shape[1]):
        v = m.plaq_vertices[:, j]
        ok = v >= 0
        np.add.at(num, v[ok], (share * q2)[ok])
        np.add.at(den, v[ok], share[ok])
    return num / np.maximum(den, 1e-300)


# --------------------------------------------------------------------------- #
# boundary conditions
# --------------------------------------------------------------------------- #

def apply_boundary_conditions(c: LatticeConnection,
                              mode: str) -> LatticeConnection:
    """Project onto the constraint set of the given boundary mode.

    Relative: plaquettes lying inside the boundary face are forced to
    identity holonomy by pinning boundary-tangential links (3-D walls); in
    2-D the boundary is one-dimensional, the projection set is empty and the
    connection is returned unchanged.  Absolute: the normal curvature at the
    wall is the average of each wall-adjacent normal plaquette with its
    mirror-ghost image, which is its own negation -- zero by antisymmetry --
    so no link changes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = c.copy()
    if mode == "Relative" and c.mesh.plaq_tangent_boundary.any():
        tan = c.mesh.edge_tangent_boundary
        ident = c.group.identity(int(tan.sum()))
        out.links[tan] = ident
    return out


def bc_residual(c: LatticeConnection, mode: str) -> float:
    """Residual of the configured first boundary equation.

    Relative: max |F| over boundary-tangential plaquettes (exactly the
    projected set).  Absolute: max |F + mirror(F)|/2 over wall-adjacent
    normal plaquettes, where the ghost value is the reflection image
    -mirror(F); the cancellation is computed literally.
    """
    m = c.mesh
    F = plaquette_curvature(c)
    if mode == "Relative":
        sel = m.plaq_tangent_boundary
        if not sel.any():
            return 0.0
        return float(np.abs(F[sel]).max())
    # Absolute: ghost curvature of a wall-adjacent normal plaquette is the
    # negated reflection of the real one; the normal trace at the wall is
    # their mean.
    ghost = -F
    return float(np.abs((F + ghost) / 2).max())


# --------------------------------------------------------------------------- #
# gradient and flow
# --------------------------------------------------------------------------- #

def energy_gradient(c: LatticeConnection,
                    F: Optional[np.ndarray] = None) -> np.ndarray:
    """Euclidean gradient dE/da_e in the left trivialization, shape (E, adim).

    Uses <log h, d(log)|_h(X h)> = <log h, X>: every ad-term annihilates
    log h, so the chain rule through the Lie log is exact, and the flow
    built on this gradient descends to round-off.
    """
    G, m = c.group, c.mesh
    if F is None:
        F = plaquette_curvature(c)
    pe, ps = m.plaq_edges, m.plaq_signs
    P, S = pe.shape
    coef = (2 * m.plaq_weights / m.plaq_areas)[:, None]
    slots = _slot_elements(c)
    grad = np.zeros((m.n_edges, G.algebra_dim))
    # suffix products A_j = slot_{S-1} ... slot_{j+1}
    if G.algebra_dim == 1:
        for j in range(S):
            ok = pe[:, j] >= 0
            contrib = (coef * F * ps[:, j][:, None])[ok]
            np.add.at(grad, pe[:, j][ok], contrib)
        return grad
    A = G.identity(P)
    for j in range(S - 1, -1, -1):
        b = G.adjoint_inv(A, coef * F)    # transport F to slot j's frame
        sj = ps[:, j]
        u = c.links[np.where(pe[:, j] < 0, 0, pe[:, j])]
        back = -G.adjoint(u, b)           # reversed-edge contribution
        contrib = np.where((sj > 0)[:, None], b,
                           np.where((sj < 0)[:, None], back, 0.0))
        ok = pe[:, j] >= 0
        np.add.at(grad, pe[:, j][ok], contrib[ok])
        A = G.multiply(A, slots[j])
    return grad


def codifferential_of_curvature(c: LatticeConnection) -> np.ndarray:
    """(d*F)_e = dE/da_e / (2 c_e): the discrete divergence of F."""
    return energy_gradient(c) / (2 * c.mesh.edge_stiffness)[:, None]


@dataclass
class FlowState:
    t: float
    connection: LatticeConnection
    mode: str
    energy: float


def max_stable_dt(m: Mesh) -> float:
    h = min(m.spacing) if m.spacing is not None else float(m.edge_lengths.min())
    return h * h / 4


def default_dt(m: Mesh) -> float:
    h = min(m.spacing) if m.spacing is not None else float(m.edge_lengths.min())
    return h * h / 8


def flow_step(s: FlowState, dt: float,
              descent_tol: float = 1e-12) -> FlowState:
    """One explicit Euler step U_e <- exp(-(dt/2) (d*F)_e) U_e.

    The half in the evolution equation combines with the metric factor
    1/(2 c_e) of the gradient; Relative mode zeroes the tangential boundary
    components of the update (the constrained flow direction).
    """
    c = s.connection
    m, G = c.mesh, c.group
    if dt > max_stable_dt(m) * (1 + 1e-12):
        raise ValueError(f"dt={dt} violates the CFL bound {max_stable_dt(m)}")
    try:
        F = plaquette_curvature(c)
    except BranchCutError as e:
        raise FlowAbort(f"branch cut at t={s.t}: {e}", s) from e
    grad = energy_gradient(c, F)
    upd = -(dt / (4 * m.edge_stiffness))[:, None] * grad
    if s.mode == "Relative":
        upd[m.edge_tangent_boundary] = 0.0
    links = G.multiply(G.exp(upd), c.links)
    c2 = LatticeConnection(m, G, G.normalize(links))
    e_new = yang_mills_energy(c2)
    if e_new > s.energy + descent_tol:
        raise FlowAbort(
            f"descent violated at t={s.t}: {s.energy} -> {e_new}", s)
    return FlowState(s.t + dt, c2, s.mode, e_new)


# --------------------------------------------------------------------------- #
# instrumented runs
# --------------------------------------------------------------------------- #

@dataclass
class EnergyTrace:
    times: np.ndarray
    energies: np.ndarray
    sup_q: np.ndarray
    bnd_dq_min: np.ndarray
    bnd_dq_max: np.ndarray


@dataclass
class FlowRun:
    mesh: Mesh
    group: str
    mode: str
    trace: EnergyTrace
    initial_energy: float
    final_state: FlowState
    descent_violations: int
    max_bc_residual: float
    second_bc_residual: float
    snapshots: Dict[float, np.ndarray] = field(default_factory=dict)
    snapshot_connections: Dict[float, LatticeConnection] = \
        field(default_factory=dict)

    @property
    def ym0(self) -> float:
        return self.initial_energy


def run_flow(m: Mesh, group, mode: str, amplitude: float, seed: int,
             t_final: float, dt: Optional[float] = None,
             record_every: int = 1,
             snapshot_times: Optional[np.ndarray] = None,
             keep_connections: bool = False,
             connection: Optional[LatticeConnection] = None) -> FlowRun:
    """Flow an initial random connection to t_final, instrumented.

    Records (t, energy, sup q, boundary dq/dnu extrema) every
    ``record_every`` steps, q-field snapshots at ``snapshot_times`` (each
    rounded to the nearest step), per-step BC residuals, and the emergent
    second-boundary-equation residual of the final state.
    """
    G = get_group(group)
    dt = default_dt(m) if dt is None else dt
    c = connection if connection is not None \
        else random_connection(m, G, amplitude, seed)
    c = apply_boundary_conditions(c, mode)
    state = FlowState(0.0, c, mode, yang_mills_energy(c))

    n_steps = max(1, int(round(t_final / dt)))
    snap_steps = {}
    if snapshot_times is not None:
        for t in np.asarray(snapshot_times, float):
            snap_steps.setdefault(
                min(n_steps, max(0, int(round(t / dt)))), []).append(t)

    rows = []
    violations = 0
    max_res = 0.0
    snapshots, snap_conns = {}, {}

    def record(st):
        F = plaquette_curvature(st.connection)
        q = q_vertex_field(st.connection, F)
        dq = boundary_normal_derivative(m, q)
        rows.append((st.t, st.energy, float(q.max()),
                     float(dq.min()), float(dq.max())))

    def snap(st, asked):
        for t_ask in asked:
            snapshots[t_ask] = q_vertex_field(st.connection)
            if keep_connections:
                snap_conns[t_ask] = st.connection.copy()

    record(state)
    if 0 in snap_steps:
        snap(state, snap_steps[0])
    for k in range(1, n_steps + 1):
        try:
            state = flow_step(state, dt)
        except FlowAbort as e:
            if "descent" in str(e):
                violations += 1
                state = e.state
                break
            raise
        max_res = max(max_res, bc_residual(state.connection, mode))
        if k % record_every == 0 or k == n_steps:
            record(state)
        if k in snap_steps:
            snap(state, snap_steps[k])

    dstar = codifferential_of_curvature(state.connection)
    if mode == "Relative":
        sel = m.edge_tangent_boundary
    else:
        # normal edges incident to the wall
        sel = np.zeros(m.n_edges, dtype=bool)
        bset = set(m.bnd_vertices.tolist())
        touches = np.fromiter(
            ((a in bset) != (b in bset) for a, b in m.edges),
            dtype=bool, count=m.n_edges)
        sel = touches & ~m.edge_tangent_boundary
    second = float(np.abs(dstar[sel]).max()) if sel.any() else 0.0

    arr = np.array(rows)
    trace = EnergyTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])
    return FlowRun(mesh=m, group=G.name, mode=mode, trace=trace,
                   initial_energy=trace.energies[0], final_state=state,
                   descent_violations=violations, max_bc_residual=max_res,
                   second_bc_residual=second, snapshots=snapshots,
                   snapshot_connections=snap_conns)


def curvature_sup(c: LatticeConnection) -> float:
    """sup over vertices of the curvature density q."""
    return float(q_vertex_field(c).max())


# --------------------------------------------------------------------------- #
# coupling with the heat kernel: zeta, monotonicity, Bochner
# --------------------------------------------------------------------------- #

def _snapshot(run: FlowRun, t: float, atol: float = 1e-9) -> np.ndarray:
    keys = np.array(sorted(run.snapshots))
    if keys.size == 0:
        raise KeyError("flow run stored no snapshots")
    k = keys[np.argmin(np.abs(keys - t))]
    if abs(k - t) > atol:
        raise KeyError(f"no curvature snapshot at t={t}; nearest stored "
                       f"time is t={k}")
    return run.snapshots[k]


def zeta_functional(run: FlowRun, r: float, y: int, t: float,
                    kernel_scheme: str = "DenseExponential") -> float:
    """zeta^{r,y}(t) = integral of q(r - t, x) g(t, x, y) dx.

    g is the reflecting-diffusion transition density (probabilistic time);
    q(r - t) must be among the stored flow snapshots.
    """
    from flowlab import heat
    if not 0 < t <= r:
        raise ValueError("need 0 < t <= r")
    q = _snapshot(run, r - t)
    g = heat.heat_kernel(run.mesh, y, t, scheme=kernel_scheme)
    return float(np.dot(run.mesh.weights, q * g))


def zeta_bound_constant(C: float, n: int) -> float:
    """C1 with zeta(t) <= C1 t^{-n/2} YM(0), from the kernel decay constant
    C for the time-doubled kernel: sup_x g(t,x,y) <= C (t/2)^{-n/2}."""
    return C * 2 ** (n / 2)


@dataclass
class MonotonicityReport:
    u_bar: float
    C3: float
    worst_slack: float   # max over pairs of LHS - RHS (<= 0 means holds)
    n_pairs: int


def monotonicity_check(run: FlowRun, r: float, y: int,
                       t_grid: np.ndarray,
                       kernel_scheme: str = "DenseExponential"
                       ) -> MonotonicityReport:
    """Smallest constants (u_bar, C3) with u(t) = u_bar making
    t1^2 zeta(t1) <= t2^2 e^{u_bar} zeta(t2) + C3 (t2 - t1) YM(0)
    hold on every pair t1 < t2 of the grid.

    Requires a totally geodesic boundary (cylinder/slab).  C3 is minimized
    over a u_bar grid; among minimizers the smallest u_bar wins.
    """
    if run.mesh.kind not in ("cylinder", "slab"):
        raise ValueError("the monotonicity fit requires a totally geodesic "
                         "boundary (cylinder or slab)")
    t_grid = np.asarray(t_grid, float)
    if t_grid.max() >= min(r, 1.0):
        raise ValueError("t grid must stay below min(r, 1)")
    z = np.array([zeta_functional(run, r, y, t, kernel_scheme)
                  for t in t_grid])
    ym0 = run.ym0
    i1, i2 = np.triu_indices(t_grid.size, k=1)
    t1, t2, z1, z2 = t_grid[i1], t_grid[i2], z[i1], z[i2]
    best = None
    for u in np.linspace(0.0, 2.0, 81):
        c3_req = np.max((t1 ** 2 * z1 - t2 ** 2 * np.exp(u) * z2)
                        / ((t2 - t1) * ym0)) if ym0 > 0 else 0.0
        c3 = max(0.0, float(c3_req))
        if best is None or c3 < best[1] - 1e-12:
            best = (u, c3)
    u_bar, C3 = best
    slack = np.max(t1 ** 2 * z1 - t2 ** 2 * np.exp(u_bar) * z2
                   - C3 * (t2 - t1) * ym0)
    return MonotonicityReport(u_bar=u_bar, C3=C3,
                              worst_slack=float(slack), n_pairs=i1.size)


def bochner_residual(run: FlowRun, t: float, delta: float,
                     q_floor: float = 1e-8):
    """Pointwise (d/dt - Laplacian/2) q at flow time t, and the fitted C2.

    Central time difference over snapshots at t - delta, t, t + delta; the
    fit is C2 = max over vertices with q > q_floor of LHS / ((1 + sqrt q) q),
    clipped at 0.
    """
    from flowlab.geometry import laplace_beltrami
    qm, q0, qp = (_snapshot(run, t - delta), _snapshot(run, t),
                  _snapshot(run, t + delta))
    L = laplace_beltrami(run.mesh)
    lhs = (qp - qm) / (2 * delta) - 0.5 * (L @ q0)
    sel = q0 > q_floor
    if not sel.any():
        return lhs, 0.0
    c2 = float(np.max(lhs[sel] / ((1 + np.sqrt(q0[sel])) * q0[sel])))
    return lhs, max(c2, 0.0)
