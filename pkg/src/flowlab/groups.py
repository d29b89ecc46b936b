"""Gauge groups for lattice connections: U1 (phases) and SU2 (quaternions).

Lie-algebra values are stored as real arrays with a trailing axis of size
``algebra_dim`` (1 for U1, 3 for SU2).  The norm convention is |log(exp(v))|
= |v| with |v| the rotation angle; for U1 this makes a constant phase
curvature b carry |F|^2 = b^2 (the spec's energy normalization).  Group
elements: U1 stores wrapped phase angles, SU2 unit quaternions (w, x, y, z),
renormalized after every multiplicative update.
"""

from __future__ import annotations

import numpy as np


class BranchCutError(RuntimeError):
    """Holonomy too close to the Lie-algebra log branch cut."""

    def __init__(self, plaquettes):
        self.plaquettes = np.asarray(plaquettes)
        super().__init__(
            f"{self.plaquettes.size} plaquette holonomies within the "
            "branch-cut guard band of the log")


_BRANCH_GUARD = 1e-6  # reject |log| > pi - guard


class U1:
    """Circle group as wrapped phase angles; abelian, trivial adjoint."""

    name = "U1"
    algebra_dim = 1

    @staticmethod
    def identity(n):
        return np.zeros(n)

    @staticmethod
    def multiply(a, b):
        return U1._wrap(a + b)

    @staticmethod
    def inverse(a):
        return -a

    @staticmethod
    def exp(v):
        return U1._wrap(v[..., 0])

    @staticmethod
    def log(a, check_branch=True):
        th = U1._wrap(a)
        if check_branch and np.any(np.abs(th) > np.pi - _BRANCH_GUARD):
            raise BranchCutError(
                np.nonzero(np.abs(th) > np.pi - _BRANCH_GUARD)[0])
        return th[..., None]

    @staticmethod
    def adjoint(a, v):
        return v

    @staticmethod
    def adjoint_inv(a, v):
        return v

    @staticmethod
    def normalize(a):
        return U1._wrap(a)

    @staticmethod
    def _wrap(a):
        return (np.asarray(a, float) + np.pi) % (2 * np.pi) - np.pi


def _qmul(a, b):
    w1, v1 = a[..., :1], a[..., 1:]
    w2, v2 = b[..., :1], b[..., 1:]
    w = w1 * w2 - np.sum(v1 * v2, axis=-1, keepdims=True)
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    return np.concatenate([w, v], axis=-1)


class SU2:
    """Unit quaternions; |log| is the rotation angle of the SO(3) action."""

    name = "SU2"
    algebra_dim = 3

    @staticmethod
    def identity(n):
        q = np.zeros((n, 4))
        q[:, 0] = 1.0
        return q

    multiply = staticmethod(_qmul)

    @staticmethod
    def inverse(a):
        out = a.copy()
        out[..., 1:] *= -1
        return out

    @staticmethod
    def exp(v):
        th = np.linalg.norm(v, axis=-1, keepdims=True)
        half = th / 2
        with np.errstate(invalid="ignore"):
            sinc = np.where(th > 1e-30, np.sin(half) / np.maximum(th, 1e-300),
                            0.5)
        return np.concatenate([np.cos(half), sinc * v], axis=-1)

    @staticmethod
    def log(q, check_branch=True):
        # canonical sheet: q and -q act identically; take w >= 0
        q = np.where(q[..., :1] < 0, -q, q)
        vec = q[..., 1:]
        nv = np.linalg.norm(vec, axis=-1, keepdims=True)
        th = 2 * np.arctan2(nv[..., 0], q[..., 0])   # in [0, pi]
        if check_branch and np.any(th > np.pi - _BRANCH_GUARD):
            raise BranchCutError(np.nonzero(th > np.pi - _BRANCH_GUARD)[0])
        with np.errstate(invalid="ignore"):
            scale = np.where(nv > 1e-30, th[..., None] / np.maximum(nv, 1e-300),
                             2.0)
        return scale * vec

    @staticmethod
    def adjoint(q, v):
        """Rotate algebra vectors by the SO(3) action of q."""
        w, u = q[..., :1], q[..., 1:]
        return v + 2 * w * np.cross(u, v) + 2 * np.cross(u, np.cross(u, v))

    @staticmethod
    def adjoint_inv(q, v):
        return SU2.adjoint(SU2.inverse(q), v)

    @staticmethod
    def normalize(q):
        return q / np.linalg.norm(q, axis=-1, keepdims=True)


GROUPS = {"U1": U1, "SU2": SU2}


def get_group(name):
    if isinstance(name, str):
        try:
            return GROUPS[name]
        except KeyError:
            raise ValueError(f"unknown gauge group {name!r}; "
                             f"choose from {sorted(GROUPS)}") from None
    return name
