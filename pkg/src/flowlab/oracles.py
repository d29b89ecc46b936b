"""Independent reference computations (pure functions).

These are the ground-truth routes used by tests and experiments; none of them
share code with the solvers they validate.

Analytic derivations, for the audit trail:

* Interval [0, L] with zero-flux ends: eigenfunctions cos(k pi x / L), so
  k(t,x,y) = 1/L + (2/L) sum_k exp(-(k pi/L)^2 t) cos(k pi x/L) cos(k pi y/L).
  Equivalent image form: sum over m of G_t(x - y + 2mL) + G_t(x + y + 2mL)
  with G_t the Gauss kernel (reflection images), which converges fast for
  small t.
* Circle of circumference l: k(t,x,y) = 1/l + (2/l) sum_k
  exp(-(2 pi k/l)^2 t) cos(2 pi k (x-y)/l); image form sum_m G_t(x - y + ml).
* Products of the two give cylinder / slab / torus kernels.
* First passage of reflected 1-D BM from 0 to level r equals first exit of
  |B| from [0, r); P{tau <= t} = 1 - (4/pi) sum_k ((-1)^k/(2k+1))
  exp(-(2k+1)^2 pi^2 t / (8 r^2)), with the small-t image form
  P = 2 sum_m (-1)^m erfc((2m+1) r / sqrt(2 t)).

All kernels use generator Delta (analytic time); probabilistic callers
rescale time themselves.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm
from scipy.special import erfc

from flowlab.geometry import Mesh, laplace_beltrami

_TAIL = 1e-14


def _spectral_terms(L: float, t: float, fundamental: float) -> int:
    """Terms needed so the spectral tail exp(-lambda_N t) < _TAIL."""
    return int(np.ceil(np.sqrt(np.log(1.0 / _TAIL) / t) / fundamental)) + 2


def _image_terms(L: float, t: float) -> int:
    return int(np.ceil(np.sqrt(2 * t * np.log(1.0 / _TAIL)) / L)) + 2


def _gauss(s, t):
    return np.exp(-s * s / (4 * t)) / np.sqrt(4 * np.pi * t)


def interval_neumann_kernel(L: float, t: float, x, y):
    """Heat kernel on [0, L] with zero-flux ends; broadcasts over x, y."""
    if t <= 0:
        raise ValueError("t must be positive")
    x, y = np.asarray(x, float), np.asarray(y, float)
    if t < 1e-3 * L * L:
        n = _image_terms(2 * L, t)
        out = np.zeros(np.broadcast(x, y).shape)
        for m in range(-n, n + 1):
            out = out + _gauss(x - y + 2 * m * L, t) \
                      + _gauss(x + y + 2 * m * L, t)
        return out
    n = _spectral_terms(L, t, np.pi / L)
    k = np.arange(1, n + 1).reshape((-1,) + (1,) * np.ndim(x * y))
    terms = (np.exp(-(k * np.pi / L) ** 2 * t)
             * np.cos(k * np.pi * x / L) * np.cos(k * np.pi * y / L))
    return 1.0 / L + (2.0 / L) * terms.sum(axis=0)


def torus_series_kernel(l: float, t: float, x, y, form: str = "auto"):
    """Heat kernel on the circle of circumference l.

    ``form`` selects the representation: "spectral", "image", or "auto"
    (image sum below t = 1e-3 l^2).  The two forms agree to ~1e-12 and serve
    as mutual cross-checks.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x, y = np.asarray(x, float), np.asarray(y, float)
    if form == "auto":
        form = "image" if t < 1e-3 * l * l else "spectral"
    if form == "image":
        n = _image_terms(l, t)
        out = np.zeros(np.broadcast(x, y).shape)
        for m in range(-n, n + 1):
            out = out + _gauss(x - y + m * l, t)
        return out
    n = _spectral_terms(l, t, 2 * np.pi / l)
    k = np.arange(1, n + 1).reshape((-1,) + (1,) * np.ndim(x * y))
    terms = (np.exp(-(2 * np.pi * k / l) ** 2 * t)
             * np.cos(2 * np.pi * k * (x - y) / l))
    return 1.0 / l + (2.0 / l) * terms.sum(axis=0)


def product_kernel(m: Mesh, t: float, y: int) -> np.ndarray:
    """Analytic heat kernel g(t, x, y) sampled at mesh vertices.

    Valid on tensor-product meshes (cylinder, slab, doubled tori): the kernel
    is the product of 1-D factors, interval-Neumann along a wall axis and
    periodic along circle axes.
    """
    if m.grid_shape is None:
        raise ValueError("analytic product kernel requires a product mesh")
    out = np.ones(m.n_vertices)
    for a in range(m.dim):
        La = m.spacing[a] * (m.grid_shape[a]
                             - (0 if m.periodic[a] else 1))
        xa, ya = m.coords[:, a], m.coords[y, a]
        if m.periodic[a]:
            out = out * torus_series_kernel(La, t, xa, ya)
        else:
            out = out * interval_neumann_kernel(La, t, xa, ya)
    return out


def dense_heat_oracle(m: Mesh, initial: np.ndarray, t: float) -> np.ndarray:
    """exp(t L) initial via a dense matrix exponential.

    Oracle for time-stepping error; deliberately the brute-force route.
    Capped at 2,500 vertices (dense cost).
    """
    if m.n_vertices > 2500:
        raise ValueError("dense oracle capped at 2,500 vertices")
    L = laplace_beltrami(m).toarray()
    return expm(t * L) @ np.asarray(initial, float)


def fd_hessian_oracle(field_grid: np.ndarray, spacing, periodic) -> np.ndarray:
    """Wide-stencil (5-point, 4th-order) Hessian of a grid-sampled field.

    Independent cross-check for the production 3-point Hessian.  Non-periodic
    axes are extended by mirror reflection (valid for zero-flux fields);
    returns an array of shape grid_shape + (dim, dim).
    """
    f = np.asarray(field_grid, float)
    dim = f.ndim

    def pad(g):
        for a in range(dim):
            if periodic[a]:
                g = np.concatenate([np.take(g, [-2, -1], axis=a), g,
                                    np.take(g, [0, 1], axis=a)], axis=a)
            else:
                g = np.concatenate([np.take(g, [2, 1], axis=a), g,
                                    np.take(g, [-2, -3], axis=a)], axis=a)
        return g

    g = pad(f)
    core = tuple(slice(2, 2 + s) for s in f.shape)

    def d1(arr, a):
        """4th-order first derivative along axis a of the padded array."""
        def sh(k):
            sl = list(core)
            sl[a] = slice(2 + k, 2 + k + f.shape[a])
            return arr[tuple(sl)]
        return (sh(-2) - 8 * sh(-1) + 8 * sh(1) - sh(2)) / (12 * spacing[a])

    def d2(arr, a):
        def sh(k):
            sl = list(core)
            sl[a] = slice(2 + k, 2 + k + f.shape[a])
            return arr[tuple(sl)]
        return (-sh(-2) + 16 * sh(-1) - 30 * sh(0) + 16 * sh(1)
                - sh(2)) / (12 * spacing[a] ** 2)

    H = np.empty(f.shape + (dim, dim))
    for a in range(dim):
        H[..., a, a] = d2(g, a)
    for a in range(dim):
        for b in range(a + 1, dim):
            H[..., a, b] = H[..., b, a] = d1(pad(d1(g, a)), b)
    return H


def rbm_halfline_oracle(r: float, t) -> np.ndarray:
    """P{tau <= t} for reflected standard 1-D BM started at 0, level r.

    Spectral form for 2t/r^2 >= 0.2, alternating image/erfc form below.
    """
    t = np.asarray(t, float)
    out = np.empty(t.shape if t.ndim else (1,))
    tt = np.atleast_1d(t)
    small = tt < 0.1 * r * r
    if small.any():
        ts = tt[small]
        acc = np.zeros_like(ts)
        for m_ in range(0, 30):
            term = (-1) ** m_ * erfc((2 * m_ + 1) * r / np.sqrt(2 * ts))
            acc += 2 * term
            if np.all(np.abs(term) < 1e-17):
                break
        out[small] = acc
    if (~small).any():
        ts = tt[~small]
        n = 2 + int(np.ceil(np.sqrt(
            8 * r * r * np.log(1 / _TAIL) / (np.pi ** 2 * ts.min()))))
        k = np.arange(n).reshape(-1, 1)
        series = ((-1) ** k / (2 * k + 1)
                  * np.exp(-(2 * k + 1) ** 2 * np.pi ** 2 * ts / (8 * r * r)))
        out[~small] = 1 - (4 / np.pi) * series.sum(axis=0)
    return out if t.ndim else float(out[0])


def _interval_neumann_mass(L, t, y, a, b):
    """Integral of the interval-Neumann kernel over [a, b] per row."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if t < 1e-3 * L * L:
        n = _image_terms(2 * L, t)
        out = np.zeros(np.broadcast(a, b).shape)
        s = 2 * np.sqrt(t)
        from scipy.special import erf
        for m in range(-n, n + 1):
            for yy in (y - 2 * m * L, -y - 2 * m * L):
                out = out + 0.5 * (erf((b - yy) / s) - erf((a - yy) / s))
        return out
    n = _spectral_terms(L, t, np.pi / L)
    k = np.arange(1, n + 1)[:, None]
    coef = np.exp(-(k * np.pi / L) ** 2 * t) * np.cos(k * np.pi * y / L)
    sines = np.sin(k * np.pi * b[None, :] / L) - np.sin(k * np.pi * a[None, :] / L)
    return (b - a) / L + (2.0 / np.pi) * np.sum(coef * sines / k, axis=0)


def _circle_mass(l, t, y, a, b):
    """Integral of the circle kernel over [a, b] per row."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if t < 1e-3 * l * l:
        n = _image_terms(l, t)
        out = np.zeros(np.broadcast(a, b).shape)
        s = 2 * np.sqrt(t)
        from scipy.special import erf
        for m in range(-n, n + 1):
            yy = y - m * l
            out = out + 0.5 * (erf((b - yy) / s) - erf((a - yy) / s))
        return out
    n = _spectral_terms(l, t, 2 * np.pi / l)
    k = np.arange(1, n + 1)[:, None]
    coef = np.exp(-(2 * np.pi * k / l) ** 2 * t)
    sines = (np.sin(2 * np.pi * k * (b[None, :] - y) / l)
             - np.sin(2 * np.pi * k * (a[None, :] - y) / l))
    return (b - a) / l + (1.0 / np.pi) * np.sum(coef * sines / k, axis=0)


def product_kernel_cell_mass(m: Mesh, t: float, y: int) -> np.ndarray:
    """Exact probability mass of each vertex's dual cell under the analytic
    product kernel; reference for binned reflecting-walker histograms."""
    if m.grid_shape is None:
        raise ValueError("analytic product kernel requires a product mesh")
    if t <= 0:
        raise ValueError("t must be positive")
    factors = []
    for a in range(m.dim):
        h = m.spacing[a]
        na = m.grid_shape[a]
        xs = h * np.arange(na)
        ya = m.coords[y, a]
        if m.periodic[a]:
            factors.append(_circle_mass(h * na, t, ya,
                                        xs - h / 2, xs + h / 2))
        else:
            La = h * (na - 1)
            lo = np.maximum(xs - h / 2, 0.0)
            hi = np.minimum(xs + h / 2, La)
            factors.append(_interval_neumann_mass(La, t, ya, lo, hi))
    mass = factors[0]
    for fac in factors[1:]:
        mass = np.multiply.outer(mass, fac)
    return mass.reshape(m.n_vertices)
