"""Pointwise matrices of the volume-filling system.

At a simplex point u the model induces
  A(u)    the diffusion matrix of the reduced system (flux = -A grad u),
  K(u)    the drag matrix coupling fluxes when friction coefficients differ,
  K^-1 A  the full diffusion matrix,
  h_B''   the Hessian of the Boltzmann entropy in reduced coordinates,
  G(u)    = h_B'' K^-1 A, the entropy-weighted diffusion matrix whose
           definiteness decides whether the entropy method applies.

All assembly routines have batch variants operating on stacks of states,
shape (M, n); these carry the analytic derivative tensors the implicit solver
needs.  Everything is a pure function of (spec, u).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    INTERIOR_FLOOR,
    ModelError,
    SimplexPoint,
    _full_fractions,
    validate_state,
)


class NearSingularError(ModelError):
    """Drag matrix too ill-conditioned to invert reliably."""


class BoundaryError(ModelError):
    """Operation undefined on the boundary of the simplex."""


def _as_batch(point):
    if isinstance(point, SimplexPoint):
        return point.array[None, :]
    arr = np.asarray(point, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


# ---------------------------------------------------------------------------
# Diffusion matrix A(u)
# ---------------------------------------------------------------------------


def diffusion_matrix_batch(spec, U):
    """A_ij = (q_i - r_i) d_ij + u_i (Q_ij - q_j + r_ij + r_j - sum_l u_l (Q_lj + r_lj)).

    Q is the chain-rule derivative table of the pressure law, so constant and
    state-dependent laws share one formula."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n = U.shape[1]
    qv = spec.q.values(U)[:, 1:]                      # (M, n)
    Q = spec.q.jacobian(U)                            # (M, n, n)
    r = spec.r_active                                 # (n, n)
    rv = _full_fractions(U) @ spec.r.T                # (M, n+1)
    rv = rv[:, 1:]
    S = np.einsum("ml,mlj->mj", U, Q) + U @ r         # sum_l u_l (Q_lj + r_lj)
    B = Q + r[None, :, :] - qv[:, None, :] + rv[:, None, :] - S[:, None, :]
    A = U[:, :, None] * B
    idx = np.arange(n)
    A[:, idx, idx] += qv - rv
    return A, B, Q


def diffusion_matrix(spec, point):
    """The n x n diffusion matrix A(u)."""
    U = _as_batch(point)
    validate_state(U)
    return diffusion_matrix_batch(spec, U)[0][0]


def diffusion_matrix_jacobian_batch(spec, U):
    """A(u) and its derivative dA[i,j,m] = dA_ij/du_m for each state."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n = U.shape[1]
    A, B, Q = diffusion_matrix_batch(spec, U)
    r = spec.r_active
    T = spec.q.hessian(U)                             # (M,n,n,n) or None
    # dB_ijm = T_ijm - Q_jm + r_jm - (Q_mj + r_mj) - sum_l u_l T_ljm
    dB = -Q[:, None, :, :] + r[None, None, :, :] \
        - Q.transpose(0, 2, 1)[:, None, :, :] - r.T[None, None, :, :]
    if T is not None:
        dB = dB + T - np.einsum("ml,mljn->mjn", U, T)[:, None, :, :]
    dA = U[:, :, None, None] * dB
    idx = np.arange(n)
    for i in range(n):
        dA[:, i, i, :] += Q[:, i, :] - r[None, i, :]
        dA[:, i, :, i] += B[:, i, :]
    return A, dA


# ---------------------------------------------------------------------------
# Drag matrix K(u) and friends
# ---------------------------------------------------------------------------


def drag_matrix_batch(spec, U):
    """K_ii = sum_l k_il w_l + k_i0 u_i;  K_ij = (k_i0 - k_ij) u_i for i != j."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n = U.shape[1]
    if spec.drag.is_unit:
        return np.broadcast_to(np.eye(n), (U.shape[0], n, n)).copy()
    W = _full_fractions(U)
    kt = spec.drag.table(U, n)                        # (M, n+1, n+1)
    diag = np.einsum("mil,ml->mi", kt[:, 1:, :], W) + kt[:, 1:, 0] * U
    K = (kt[:, 1:, 0][:, :, None] - kt[:, 1:, 1:]) * U[:, :, None]
    idx = np.arange(n)
    K[:, idx, idx] = diag
    return K


def drag_matrix(spec, point):
    U = _as_batch(point)
    validate_state(U)
    return drag_matrix_batch(spec, U)[0]


def drag_matrix_jacobian_batch(spec, U):
    """K(u) and dK[i,j,m] = dK_ij/du_m."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    M, n = U.shape
    K = drag_matrix_batch(spec, U)
    if spec.drag.is_unit:
        return K, np.zeros((M, n, n, n))
    W = _full_fractions(U)
    kt = spec.drag.table(U, n)
    dkt = spec.drag.dtable(U, n)                      # (M,n+1,n+1,n) or None
    dW = np.zeros((n + 1, n))
    dW[1:, :] = np.eye(n)
    dW[0, :] = -1.0
    dK = np.zeros((M, n, n, n))
    # off-diagonal: (k_i0 - k_ij) delta_im + u_i d(k_i0 - k_ij)/du_m
    base = kt[:, 1:, 0][:, :, None] - kt[:, 1:, 1:]
    for i in range(n):
        dK[:, i, :, i] += base[:, i, :]
    if dkt is not None:
        dK += (dkt[:, 1:, 0, :][:, :, None, :] - dkt[:, 1:, 1:, :]) * U[:, :, None, None]
    # diagonal: sum_l (k_il dw_l/du_m + dk_il/du_m w_l) + k_i0 delta_im + u_i dk_i0/du_m
    ddiag = np.einsum("mil,ln->min", kt[:, 1:, :], dW)
    ddiag += kt[:, 1:, 0][:, :, None] * np.eye(n)[None, :, :]
    if dkt is not None:
        ddiag += np.einsum("miln,ml->min", dkt[:, 1:, :, :], W)
        ddiag += dkt[:, 1:, 0, :] * U[:, :, None]
    idx = np.arange(n)
    dK[:, idx, idx, :] = ddiag
    return K, dK


def invert_drag_matrix(K, cond_limit=1e14):
    """Dense inverse of K(u); rejects near-singular input."""
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise NearSingularError("non-finite drag matrix")
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NearSingularError(f"drag matrix condition number {cond:.3e} exceeds {cond_limit:.1e}")
    return np.linalg.solve(K, np.eye(K.shape[0]))


def drag_det_two_species(k01, k02, k12, point):
    """det K(u) for n = 2: k01*k02*u0 + k01*k12*u1 + k02*k12*u2 (always > 0)."""
    u = point.array if isinstance(point, SimplexPoint) else np.asarray(point, float)
    u0 = 1.0 - u.sum()
    return k01 * k02 * u0 + k01 * k12 * u[0] + k02 * k12 * u[1]


def drag_perturbation_matrix(spec, point):
    """K*(u) with K(u) = I + eps K*(u) for the perturbed drag law.

    K*_ii = sum_l k*_il u_i w_l^2 + k*_i0 w_0 u_i^2
    K*_ij = (k*_i0 w_0 - k*_ij u_j) u_i^2  for i != j."""
    from .model import PerturbedDrag

    if not isinstance(spec.drag, PerturbedDrag):
        raise ModelError("drag perturbation matrix requires the perturbed drag law")
    U = _as_batch(point)
    validate_state(U)
    u = U[0]
    n = len(u)
    w = _full_fractions(U)[0]
    ks = spec.drag.kstar
    Ks = np.empty((n, n))
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i == j:
                Ks[i - 1, j - 1] = (ks[i, :] * u[i - 1] * w**2).sum() + ks[i, 0] * w[0] * u[i - 1] ** 2
            else:
                Ks[i - 1, j - 1] = (ks[i, 0] * w[0] - ks[i, j] * u[j - 1]) * u[i - 1] ** 2
    return Ks


# ---------------------------------------------------------------------------
# Entropy Hessian and the entropy-weighted diffusion matrix
# ---------------------------------------------------------------------------


def boltzmann_hessian(point, floor=INTERIOR_FLOOR):
    """Hessian of sum_i u_i (log u_i - 1) in reduced coordinates:
    H_ij = d_ij / u_i + 1 / u_0.  Defined on the open simplex only."""
    u = point.array if isinstance(point, SimplexPoint) else np.asarray(point, float)
    u0 = 1.0 - u.sum()
    if u.min() <= floor or u0 <= floor:
        raise BoundaryError("Boltzmann Hessian undefined at the simplex boundary")
    return np.diag(1.0 / u) + 1.0 / u0


def entropy_weighted_diffusion(spec, point, floor=INTERIOR_FLOOR):
    """G(u) = h_B''(u) K(u)^-1 A(u)."""
    H = boltzmann_hessian(point, floor=floor)
    K = drag_matrix(spec, point)
    A = diffusion_matrix(spec, point)
    return H @ invert_drag_matrix(K) @ A


@dataclass(frozen=True)
class AssembledMatrices:
    """All pointwise matrices at one simplex point."""

    A: np.ndarray
    K: np.ndarray
    Kinv: np.ndarray
    Hb: np.ndarray
    G: np.ndarray


def assemble_all(spec, point, floor=INTERIOR_FLOOR):
    A = diffusion_matrix(spec, point)
    K = drag_matrix(spec, point)
    Kinv = invert_drag_matrix(K)
    Hb = boltzmann_hessian(point, floor=floor)
    return AssembledMatrices(A=A, K=K, Kinv=Kinv, Hb=Hb, G=Hb @ Kinv @ A)


# ---------------------------------------------------------------------------
# Flux coefficient for the solver: D = K^-1 A + eta I
# ---------------------------------------------------------------------------


def flux_coefficient_batch(spec, U, eta=None, with_jacobian=False):
    """D(u) = K(u)^-1 A(u) + eta I, batched; optionally with dD/du.

    For the derivative, d(K^-1 A) = K^-1 (dA - dK K^-1 A)."""
    eta = spec.eta if eta is None else eta
    U = np.atleast_2d(np.asarray(U, dtype=float))
    M, n = U.shape
    idx = np.arange(n)
    if not with_jacobian:
        A = diffusion_matrix_batch(spec, U)[0]
        if spec.drag.is_unit:
            D = A
        else:
            K = drag_matrix_batch(spec, U)
            D = np.linalg.solve(K, A)
        if eta:
            D = D.copy()
            D[:, idx, idx] += eta
        return D
    A, dA = diffusion_matrix_jacobian_batch(spec, U)
    if spec.drag.is_unit:
        D = A.copy()
        dD = dA
    else:
        K, dK = drag_matrix_jacobian_batch(spec, U)
        D = np.linalg.solve(K, A)
        rhs = dA - np.einsum("mikp,mkj->mijp", dK, D)
        # solve K X_p = rhs_p for each direction p
        dD = np.stack(
            [np.linalg.solve(K, rhs[:, :, :, p]) for p in range(n)], axis=3
        )
    if eta:
        D[:, idx, idx] += eta
    return D, dD
