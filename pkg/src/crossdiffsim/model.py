"""Coefficient data for volume-filling multiphase cross-diffusion models.

A model couples n species volume fractions u_1..u_n with a solvent fraction
u_0 = 1 - sum(u_i).  Its coefficients are a drag law k_ij (friction between
phases i and j), an intraphase pressure law q_i(u) and a symmetric interphase
pressure matrix r_ij.  All coefficient tables are (n+1) x (n+1) with index 0
reserved for the solvent; the solvent row/column of q and r is zero for
simulatable models (the solvent carries no pressure).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

COMPONENT_TOL = 1e-12
INTERIOR_FLOOR = 1e-14


class ModelError(ValueError):
    """Invalid model coefficients or inadmissible state."""


def _full_fractions(U):
    """Stack (M,n) species fractions into (M,n+1) with the solvent at index 0."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    u0 = 1.0 - U.sum(axis=1, keepdims=True)
    return np.concatenate([u0, U], axis=1)


def validate_state(U, tol=COMPONENT_TOL):
    """Reject fractions outside [-tol, 1+tol] (incl. the derived solvent)."""
    W = _full_fractions(U)
    if not np.all(np.isfinite(W)):
        raise ModelError("non-finite volume fraction")
    if W.min() < -tol or W.max() > 1.0 + tol:
        raise ModelError(
            f"volume fraction outside [{-tol}, {1 + tol}]: "
            f"min={W.min():.3e} max={W.max():.3e}"
        )


@dataclass(frozen=True)
class SimplexPoint:
    """A point of the closed simplex {u >= 0, sum(u) <= 1}; u0 is derived."""

    u: tuple

    def __init__(self, u, tol=COMPONENT_TOL):
        arr = np.asarray(u, dtype=float).reshape(-1)
        validate_state(arr[None, :], tol=tol)
        object.__setattr__(self, "u", tuple(float(x) for x in arr))

    @property
    def n(self):
        return len(self.u)

    @property
    def u0(self):
        return 1.0 - sum(self.u)

    @property
    def array(self):
        return np.array(self.u, dtype=float)

    @property
    def full(self):
        """Fractions including the solvent, index 0 = solvent."""
        return np.concatenate([[self.u0], self.u])

    def is_interior(self, floor=INTERIOR_FLOOR):
        return min(min(self.u), self.u0) > floor


def _check_solvent_free_table(name, tab, allow_solvent=False):
    if np.any(tab < 0):
        raise ModelError(f"{name} entries must be nonnegative")
    if not allow_solvent and (np.any(tab[0, :] != 0) or np.any(tab[:, 0] != 0)):
        raise ModelError(f"{name} must have zero solvent row and column")


# ---------------------------------------------------------------------------
# Pressure laws
# ---------------------------------------------------------------------------


class PressureLaw:
    """Intraphase pressure q_i(u) together with its derivative tables.

    Implementations provide, for a batch of states U (M,n):
      values(U)   -> (M, n+1)      q_i(u), i = 0..n (0 = solvent)
      table(U)    -> (M, n+1, n+1) coefficients q_ij(u) with
                                   q_i(u) = sum_j q_ij(u) * w_j
      jacobian(U) -> (M, n, n)     Q_ij = d q_i / d u_j  (reduced coords,
                                   i.e. after substituting the solvent)
      hessian(U)  -> (M, n, n, n) or None   d Q_ij / d u_m
    """

    n: int
    is_constant = False
    symmetric = False

    def values(self, U):
        raise NotImplementedError

    def table(self, U):
        raise NotImplementedError

    def jacobian(self, U):
        raise NotImplementedError

    def hessian(self, U):
        return None


class ConstantPressure(PressureLaw):
    """Constant coefficient table q_ij, sized (n+1)^2 with solvent index 0."""

    is_constant = True

    def __init__(self, table, allow_solvent_pressure=False):
        tab = np.asarray(table, dtype=float)
        if tab.ndim != 2 or tab.shape[0] != tab.shape[1] or tab.shape[0] < 2:
            raise ModelError("pressure table must be square, at least 2x2")
        _check_solvent_free_table("pressure_q", tab, allow_solvent_pressure)
        self.q = tab
        self.n = tab.shape[0] - 1
        self.allow_solvent_pressure = allow_solvent_pressure
        self.symmetric = bool(np.array_equal(tab, tab.T))

    def values(self, U):
        return _full_fractions(U) @ self.q.T

    def table(self, U):
        U = np.atleast_2d(U)
        return np.broadcast_to(self.q, (U.shape[0],) + self.q.shape).copy()

    def jacobian(self, U):
        U = np.atleast_2d(U)
        # after u0 = 1 - sum u_j, d q_i / d u_j = q_ij - q_i0
        Q = self.q[1:, 1:] - self.q[1:, :1]
        return np.broadcast_to(Q, (U.shape[0],) + Q.shape).copy()


class TumorPressure(PressureLaw):
    """Two-species tumor law: q11 = beta_c, q12 = 0, q21 = beta_m*theta*u2,
    q22 = beta_m.  The cross coefficient grows with the matrix fraction u2."""

    n = 2

    def __init__(self, beta_c=0.2, beta_m=0.0015, theta=30.0):
        if beta_c <= 0 or beta_m <= 0 or theta < 0:
            raise ModelError("tumor law requires beta_c, beta_m > 0 and theta >= 0")
        self.beta_c = float(beta_c)
        self.beta_m = float(beta_m)
        self.theta = float(theta)

    def values(self, U):
        U = np.atleast_2d(U)
        u1, u2 = U[:, 0], U[:, 1]
        bm, th = self.beta_m, self.theta
        return np.stack(
            [np.zeros_like(u1), self.beta_c * u1, bm * th * u2 * u1 + bm * u2], axis=1
        )

    def table(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        tab = np.zeros((M, 3, 3), dtype=U.dtype)
        tab[:, 1, 1] = self.beta_c
        tab[:, 2, 1] = self.beta_m * self.theta * U[:, 1]
        tab[:, 2, 2] = self.beta_m
        return tab

    def jacobian(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        bm, th = self.beta_m, self.theta
        Q = np.zeros((M, 2, 2), dtype=U.dtype)
        Q[:, 0, 0] = self.beta_c
        Q[:, 1, 0] = bm * th * U[:, 1]
        Q[:, 1, 1] = bm * th * U[:, 0] + bm
        return Q

    def hessian(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        H = np.zeros((M, 2, 2, 2), dtype=U.dtype)
        H[:, 1, 0, 1] = self.beta_m * self.theta
        H[:, 1, 1, 0] = self.beta_m * self.theta
        return H


class SKTPressure(PressureLaw):
    """Two-species volume-filling SKT law: q1 = u1(1 + theta1*u2),
    q2 = u2(1 + theta2*u1)."""

    n = 2

    def __init__(self, theta1=1.0, theta2=10.0):
        if theta1 < 0 or theta2 < 0:
            raise ModelError("SKT law requires nonnegative theta1, theta2")
        self.theta1 = float(theta1)
        self.theta2 = float(theta2)

    def values(self, U):
        U = np.atleast_2d(U)
        u1, u2 = U[:, 0], U[:, 1]
        return np.stack(
            [np.zeros_like(u1), u1 * (1 + self.theta1 * u2), u2 * (1 + self.theta2 * u1)],
            axis=1,
        )

    def table(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        tab = np.zeros((M, 3, 3), dtype=U.dtype)
        tab[:, 1, 1] = 1.0
        tab[:, 1, 2] = self.theta1 * U[:, 0]
        tab[:, 2, 1] = self.theta2 * U[:, 1]
        tab[:, 2, 2] = 1.0
        return tab

    def jacobian(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        Q = np.zeros((M, 2, 2), dtype=U.dtype)
        Q[:, 0, 0] = 1 + self.theta1 * U[:, 1]
        Q[:, 0, 1] = self.theta1 * U[:, 0]
        Q[:, 1, 0] = self.theta2 * U[:, 1]
        Q[:, 1, 1] = 1 + self.theta2 * U[:, 0]
        return Q

    def hessian(self, U):
        U = np.atleast_2d(U)
        M = U.shape[0]
        H = np.zeros((M, 2, 2, 2), dtype=U.dtype)
        H[:, 0, 0, 1] = self.theta1
        H[:, 0, 1, 0] = self.theta1
        H[:, 1, 0, 1] = self.theta2
        H[:, 1, 1, 0] = self.theta2
        return H


# ---------------------------------------------------------------------------
# Drag laws
# ---------------------------------------------------------------------------


class DragLaw:
    """Friction coefficients k_ij(u) between phases, (n+1)^2 with zero diagonal.

    table(U)  -> (M, n+1, n+1) coefficient values at each state
    dtable(U) -> (M, n+1, n+1, n) derivatives w.r.t. u_1..u_n, or None
    """

    is_unit = False

    def table(self, U, n):
        raise NotImplementedError

    def dtable(self, U, n):
        return None


class UnitDrag(DragLaw):
    """k_ij = 1 for i != j."""

    is_unit = True

    def table(self, U, n):
        U = np.atleast_2d(U)
        k = np.ones((n + 1, n + 1)) - np.eye(n + 1)
        return np.broadcast_to(k, (U.shape[0], n + 1, n + 1)).copy()


class ConstantDrag(DragLaw):
    def __init__(self, table):
        k = np.asarray(table, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ModelError("drag table must be square")
        if not np.array_equal(k, k.T):
            raise ModelError("drag coefficients must be symmetric")
        if np.any(np.diag(k) != 0):
            raise ModelError("drag diagonal must be zero")
        off = k[~np.eye(k.shape[0], dtype=bool)]
        if np.any(off <= 0):
            raise ModelError("off-diagonal drag coefficients must be positive")
        self.k = k

    def table(self, U, n):
        U = np.atleast_2d(U)
        if self.k.shape[0] != n + 1:
            raise ModelError("drag table size does not match species count")
        return np.broadcast_to(self.k, (U.shape[0], n + 1, n + 1)).copy()


def _check_kstar(kstar):
    ks = np.asarray(kstar, dtype=float)
    if ks.ndim != 2 or ks.shape[0] != ks.shape[1]:
        raise ModelError("k* table must be square")
    if not np.array_equal(ks, ks.T):
        raise ModelError("k* must be symmetric")
    off = ks[~np.eye(ks.shape[0], dtype=bool)]
    if np.any(off < 0):
        raise ModelError("off-diagonal k* must be nonnegative")
    ks = ks.copy()
    np.fill_diagonal(ks, 0.0)
    return ks


class PerturbedDrag(DragLaw):
    """k_ij = 1 + eps * k*_ij * u_i * u_j (solvent index uses u_0)."""

    def __init__(self, kstar, eps):
        self.kstar = _check_kstar(kstar)
        if eps < 0:
            raise ModelError("eps must be nonnegative")
        self.eps = float(eps)

    def table(self, U, n):
        W = _full_fractions(U)
        k = 1.0 - np.eye(n + 1)
        out = k[None, :, :] + self.eps * self.kstar[None, :, :] * W[:, :, None] * W[:, None, :]
        out[:, np.arange(n + 1), np.arange(n + 1)] = 0.0
        return out

    def dtable(self, U, n):
        W = _full_fractions(U)
        M = W.shape[0]
        # d w_a / d u_m = delta_{a,m} - delta_{a,0}
        dW = np.zeros((n + 1, n))
        dW[1:, :] = np.eye(n)
        dW[0, :] = -1.0
        out = self.eps * self.kstar[None, :, :, None] * (
            dW[None, :, None, :] * W[:, None, :, None]
            + W[:, :, None, None] * dW[None, None, :, :]
        )
        out[:, np.arange(n + 1), np.arange(n + 1), :] = 0.0
        return out


class DegenerateDrag(DragLaw):
    """k_ij = 1 + k*_ij * sqrt(u_i u_j); friction degenerates near vacuum."""

    def __init__(self, kstar, floor=INTERIOR_FLOOR):
        self.kstar = _check_kstar(kstar)
        self.floor = float(floor)

    def table(self, U, n):
        W = np.maximum(_full_fractions(U), 0.0)
        k = 1.0 - np.eye(n + 1)
        s = np.sqrt(W[:, :, None] * W[:, None, :])
        out = k[None, :, :] + self.kstar[None, :, :] * s
        out[:, np.arange(n + 1), np.arange(n + 1)] = 0.0
        return out

    def dtable(self, U, n):
        W = np.maximum(_full_fractions(U), self.floor)
        dW = np.zeros((n + 1, n))
        dW[1:, :] = np.eye(n)
        dW[0, :] = -1.0
        s = np.sqrt(W[:, :, None] * W[:, None, :])
        grad = 0.5 / s[:, :, :, None] * (
            dW[None, :, None, :] * W[:, None, :, None]
            + W[:, :, None, None] * dW[None, None, :, :]
        )
        out = self.kstar[None, :, :, None] * grad
        out[:, np.arange(n + 1), np.arange(n + 1), :] = 0.0
        return out


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Complete coefficient description of one cross-diffusion model."""

    n: int
    drag: DragLaw
    q: PressureLaw
    r: np.ndarray
    eta: float = 0.0
    name: str = "custom"
    analysis_only: bool = False
    notes: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("need at least one species")
        if self.eta < 0:
            raise ModelError("eta must be nonnegative")
        if self.q.n != self.n:
            raise ModelError("pressure law species count mismatch")
        r = np.asarray(self.r, dtype=float)
        if r.shape != (self.n + 1, self.n + 1):
            raise ModelError("r must be (n+1) x (n+1)")
        if not np.array_equal(r, r.T):
            raise ModelError("r must be symmetric")
        if np.any(np.diag(r) != 0):
            raise ModelError("r diagonal must be zero")
        _check_solvent_free_table("pressure_r", r)
        # exercise drag-table validation for the declared size
        self.drag.table(np.full((1, self.n), 1.0 / (self.n + 1)), self.n)
        object.__setattr__(self, "r", r)

    @property
    def r_active(self):
        """Species block r_ij, i,j = 1..n."""
        return self.r[1:, 1:]

    def with_eta(self, eta):
        return ModelSpec(self.n, self.drag, self.q, self.r, float(eta), self.name,
                         self.analysis_only, self.notes)

    def rao_available(self):
        """Rao diagnostics need a constant symmetric pressure table."""
        return self.q.is_constant and self.q.symmetric


def pressure_q(spec, point):
    """Intraphase pressures q_i(u), i = 0..n (index 0 = solvent).

    q_i(u) = sum_j q_ij(u) w_j; zero for the solvent under the standard
    solvent-free convention."""
    u = point.array if isinstance(point, SimplexPoint) else np.asarray(point, float)
    validate_state(u[None, :])
    return spec.q.values(u[None, :])[0]


def pressure_r(spec, point):
    """Interphase pressures r_i(u) = sum_j r_ij w_j, i = 0..n."""
    u = point.array if isinstance(point, SimplexPoint) else np.asarray(point, float)
    validate_state(u[None, :])
    w = _full_fractions(u[None, :])[0]
    return spec.r @ w


def tumor_entropy_threshold(beta_c, beta_m):
    """Largest theta for which the tumor model keeps its entropy structure."""
    return 4.0 * math.sqrt(beta_c / beta_m)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _zeros3():
    return np.zeros((3, 3))


def preset(name, **overrides):
    """Named model presets (two species each).

    maxwell-stefan       q_i = 1, r = 0; analysis only (solvent pressure).
    thin-film            q = 0, r12 = 1; analysis only (segregating).
    vf-skt               q = I, r = 0.
    vf-busenberg-travis  q = [[1,.4],[.4,1]], r = off-diagonal part of q.
    tumor-jb             tumor law, defaults beta_c=0.2, beta_m=0.0015, theta=30.
    multiphase-skt       SKT law, defaults theta1=1, theta2=10, eta=0.5.
    """
    key = name.lower().replace("_", "-")
    if key == "maxwell-stefan":
        q = ConstantPressure(np.ones((3, 3)), allow_solvent_pressure=True)
        return ModelSpec(2, UnitDrag(), q, _zeros3(), name=key, analysis_only=True,
                         notes="solvent pressure violates the solvent-free convention; "
                               "matrix analysis only")
    if key == "thin-film":
        r = _zeros3()
        r[1, 2] = r[2, 1] = overrides.pop("r12", 1.0)
        q = ConstantPressure(_zeros3())
        return ModelSpec(2, UnitDrag(), q, r, name=key, analysis_only=True,
                         notes="pure interphase traction without solvent coupling is "
                               "segregating (anti-diffusive); matrix analysis only")
    if key == "vf-skt":
        tab = _zeros3()
        tab[1, 1] = tab[2, 2] = 1.0
        return ModelSpec(2, UnitDrag(), ConstantPressure(tab), _zeros3(), name=key)
    if key == "vf-busenberg-travis":
        c = overrides.pop("coupling", 0.4)
        tab = _zeros3()
        tab[1, 1] = tab[2, 2] = 1.0
        tab[1, 2] = tab[2, 1] = c
        r = _zeros3()
        r[1, 2] = r[2, 1] = c
        return ModelSpec(2, UnitDrag(), ConstantPressure(tab), r, name=key,
                         notes="r equals q off the diagonal; the r diagonal is "
                               "immaterial to the dynamics")
    if key == "tumor-jb":
        law = TumorPressure(
            beta_c=overrides.pop("beta_c", 0.2),
            beta_m=overrides.pop("beta_m", 0.0015),
            theta=overrides.pop("theta", 30.0),
        )
        return ModelSpec(2, UnitDrag(), law, _zeros3(),
                         eta=overrides.pop("eta", 0.0), name=key)
    if key == "multiphase-skt":
        law = SKTPressure(
            theta1=overrides.pop("theta1", 1.0),
            theta2=overrides.pop("theta2", 10.0),
        )
        return ModelSpec(2, UnitDrag(), law, _zeros3(),
                         eta=overrides.pop("eta", 0.5), name=key,
                         notes="eta > 0 by default: the unregularized model is "
                               "backward-parabolic near segregated states")
    raise ModelError(f"unknown preset {name!r}")


PRESET_NAMES = (
    "maxwell-stefan",
    "thin-film",
    "vf-skt",
    "vf-busenberg-travis",
    "tumor-jb",
    "multiphase-skt",
)
