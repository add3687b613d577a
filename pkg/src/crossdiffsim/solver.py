"""Implicit finite-volume time stepper for the cross-diffusion system.

Space: uniform finite volumes with interface flux
    F_{j+1/2} = -(K^-1 A)(u_hat) (u_{j+1} - u_j)/dx - eta (u_{j+1} - u_j)/dx,
u_hat the arithmetic mean of the adjacent cells, zero flux at the walls.
Time: implicit Euler with fixed dt; each step solves the nonlinear system by
damped Newton with an analytically assembled block-tridiagonal Jacobian.

Beyond plain backtracking the Newton loop carries three robustness devices
(all recorded in NewtonStats): trial states are damped so they stay inside the
closed simplex, the diagonal regularization grows Levenberg-style while only
tiny steps are acceptable, and a stalled iteration is accepted only when the
residual sits at the round-off floor of its own evaluation.  A failing step
may be rescued by solving two half steps for a warm start; the accepted state
always solves the full-dt system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import Mesh1D, StateField
from .matrices import flux_coefficient_batch
from .model import ModelError, validate_state

FEASIBILITY_TOL = 1e-12
_EPS = float(np.finfo(np.float64).eps)


class NewtonError(RuntimeError):
    """Newton iteration failed; carries the failing step index when known."""

    def __init__(self, message, step_index=None, residual=None):
        super().__init__(message)
        self.step_index = step_index
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    t_final: float = 6.0
    newton_tol: float = 1e-10
    newton_max_iters: int = 50
    jacobian_reg: float = 1e-12
    jacobian_mode: str = "analytic"          # or "finite-difference"
    linesearch_factor: float = 0.5
    max_backtracks: int = 30
    sufficient_decrease: float = 0.02
    projection_enabled: bool = False
    levenberg: bool = True
    substep_rescue: bool = True
    diagnostics_every: int = 10
    snapshot_times: tuple = ()
    eta: float | None = None                 # overrides spec.eta when set

    def __post_init__(self):
        if self.dt <= 0 or self.newton_tol <= 0 or self.t_final < 0:
            raise ModelError("dt and tolerances must be positive, t_final >= 0")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ModelError("jacobian_mode must be 'analytic' or 'finite-difference'")


@dataclass
class NewtonStats:
    iterations: int = 0
    residual_norm: float = math.nan
    backtracks: int = 0
    projection_activations: int = 0
    floor_accepted: bool = False
    rescue_depth: int = 0
    mu_max: float = 0.0


# ---------------------------------------------------------------------------
# Simplex projection
# ---------------------------------------------------------------------------


def simplex_project(u):
    """Euclidean projection onto the simplex in augmented (u, u0) coordinates.

    The cell vector is extended by its solvent fraction and projected onto the
    probability simplex by the standard sort/threshold algorithm; the first n
    components are returned.  Accepts a single vector or a (M, n) batch."""
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    U = u[None, :] if single else u
    W = np.concatenate([U, 1.0 - U.sum(axis=1, keepdims=True)], axis=1)
    m = W.shape[1]
    s = -np.sort(-W, axis=1)
    cs = np.cumsum(s, axis=1) - 1.0
    ks = np.arange(1, m + 1)
    cond = s - cs / ks > 0.0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = cs[np.arange(W.shape[0]), rho] / (rho + 1.0)
    P = np.maximum(W - tau[:, None], 0.0)[:, :-1]
    return P[0] if single else P


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------


def initial_profile(mesh, c0=0.5, x0=0.1, width=0.05, eps0=0.01,
                    normalize=True, pad=0.0):
    """Smooth two-phase segregation profile.

    u1 = c0 (1 + tanh((x0 - x)/width)) + eps0,  u2 = c0 (1 - tanh((x0 - x)/width)).

    With the standard constants the two species sum to 2 c0 + eps0 = 1.01
    pointwise, which overfills the mixture; when normalize is set the profile
    is rescaled by that sum so the state lies in the closed simplex (the
    rescale factor is returned in the metadata).  An optional pad shrinks the
    state further to leave a solvent fraction everywhere."""
    x = mesh.centers
    t = np.tanh((x0 - x) / width)
    u1 = c0 * (1.0 + t) + eps0
    u2 = c0 * (1.0 - t)
    if u1.min() < 0 or u2.min() < 0:
        raise ModelError("initial profile parameters produce negative fractions")
    values = np.stack([u1, u2], axis=1)
    smax = float(values.sum(axis=1).max())
    factor = 1.0
    if normalize and smax > 1.0:
        factor = 1.0 / smax
    factor *= 1.0 - pad
    values = values * factor
    meta = {
        "c0": c0, "x0": x0, "width": width, "eps0": eps0,
        "raw_max_sum": smax, "normalization_factor": factor,
        "normalized": bool(factor != 1.0),
    }
    field = StateField(mesh, values, 0.0, validate=normalize or pad > 0)
    return field, meta


# ---------------------------------------------------------------------------
# Residual and Jacobian
# ---------------------------------------------------------------------------


def interface_fluxes(spec, values, dx, eta=None):
    """Physical fluxes at interior interfaces, shape (N-1, n)."""
    uh = 0.5 * (values[:-1] + values[1:])
    du = (values[1:] - values[:-1]) / dx
    D = flux_coefficient_batch(spec, uh, eta=eta)
    return -np.einsum("mij,mj->mi", D, du)


def residual_array(spec, values, old_values, dx, dt, eta=None):
    """R_j = (u_j - u_j^old)/dt + (F_e - F_w)/dx with no-flux walls."""
    F = interface_fluxes(spec, values, dx, eta=eta)
    R = (values - old_values) / dt
    R[:-1] += F / dx
    R[1:] -= F / dx
    return R, F


def _residual_floor(spec, values, dx, dt, eta, safety=10.0):
    """Round-off floor of the residual 2-norm for this state in float64.

    Per-entry noise is bounded by eps times the absolute-value contraction of
    the flux terms (cancellation inside the flux does not reduce round-off)."""
    uh = 0.5 * (values[:-1] + values[1:])
    du = (values[1:] - values[:-1]) / dx
    D = flux_coefficient_batch(spec, uh, eta=eta)
    Fabs = np.einsum("mij,mj->mi", np.abs(D), np.abs(du))
    mag = np.abs(values) / dt
    mag[:-1] += Fabs / dx
    mag[1:] += Fabs / dx
    return safety * _EPS * float(np.linalg.norm(mag))


def jacobian_banded(spec, values, dx, dt, eta=None, reg=0.0, mu=0.0):
    """Banded (2n-1 bands each side) Jacobian of the residual w.r.t. values."""
    N, n = values.shape
    uh = 0.5 * (values[:-1] + values[1:])
    du = (values[1:] - values[:-1]) / dx
    D, dD = flux_coefficient_batch(spec, uh, eta=eta, with_jacobian=True)
    C = np.einsum("mijp,mj->mip", dD, du)
    dF_left = D / dx - 0.5 * C        # dF/du_left
    dF_right = -D / dx - 0.5 * C      # dF/du_right
    bw = 2 * n - 1
    ab = np.zeros((2 * bw + 1, N * n))
    diag_blocks = np.broadcast_to(np.eye(n) / dt, (N, n, n)).copy()
    diag_blocks[:-1] += dF_left / dx
    diag_blocks[1:] -= dF_right / dx
    upper_blocks = dF_right / dx      # dR_j/du_{j+1}
    lower_blocks = -dF_left / dx      # dR_{j+1}/du_j
    rows = np.arange(N)
    for i in range(n):
        for k in range(n):
            cols = rows * n + k
            ab[bw + (i - k), cols] += diag_blocks[:, i, k]
            cols_u = (rows[:-1] + 1) * n + k
            ab[bw + (rows[:-1] * n + i) - cols_u, cols_u] += upper_blocks[:, i, k]
            cols_l = rows[:-1] * n + k
            ab[bw + ((rows[:-1] + 1) * n + i) - cols_l, cols_l] += lower_blocks[:, i, k]
    ab[bw, :] += reg + mu
    return ab


def jacobian_dense(spec, values, dx, dt, eta=None, reg=0.0):
    """Dense Jacobian assembled from the banded storage (small meshes)."""
    N, n = values.shape
    ab = jacobian_banded(spec, values, dx, dt, eta=eta, reg=reg)
    bw = ab.shape[0] // 2
    nn = N * n
    J = np.zeros((nn, nn))
    for c in range(nn):
        for off in range(-bw, bw + 1):
            r = c + off
            if 0 <= r < nn:
                J[r, c] = ab[bw + off, c]
    return J


def jacobian_fd(spec, values, old_values, dx, dt, eta=None, step=1e-7):
    """Central finite-difference Jacobian (test oracle / fallback mode)."""
    N, n = values.shape
    nn = N * n
    J = np.zeros((nn, nn))
    flat = values.reshape(-1)
    for c in range(nn):
        h = step * max(1.0, abs(flat[c]))
        e = np.zeros(nn)
        e[c] = h
        Rp, _ = residual_array(spec, (flat + e).reshape(N, n), old_values, dx, dt, eta)
        Rm, _ = residual_array(spec, (flat - e).reshape(N, n), old_values, dx, dt, eta)
        J[:, c] = ((Rp - Rm) / (2 * h)).reshape(-1)
    return J


def _dense_to_banded(J, n):
    bw = 2 * n - 1
    nn = J.shape[0]
    ab = np.zeros((2 * bw + 1, nn))
    for off in range(-bw, bw + 1):
        d = np.diagonal(J, offset=-off)
        if off >= 0:
            ab[bw + off, : len(d)] = d
        else:
            ab[bw + off, -len(d):] = d
    return ab


def _infeasibility(values):
    return float(max(0.0, -values.min(), -(1.0 - values.sum(axis=1)).min()))


# ---------------------------------------------------------------------------
# Newton
# ---------------------------------------------------------------------------


def _newton_core(spec, old_values, dx, dt, config, eta, stats, guess=None):
    """Damped Newton on the implicit-step residual, started from guess."""
    u = (old_values if guess is None else guess).copy()
    R, F = residual_array(spec, u, old_values, dx, dt, eta)
    rn = float(np.linalg.norm(R))
    tol = config.newton_tol
    # iterates may not leave the simplex by more than the data already does
    feas_cap = max(FEASIBILITY_TOL, _infeasibility(old_values) + FEASIBILITY_TOL)
    mu = 0.0
    it = 0
    while rn > tol:
        if it >= config.newton_max_iters:
            return None, rn
        if config.jacobian_mode == "analytic":
            ab = jacobian_banded(spec, u, dx, dt, eta=eta,
                                 reg=config.jacobian_reg, mu=mu)
        else:
            J = jacobian_fd(spec, u, old_values, dx, dt, eta=eta)
            J[np.diag_indices_from(J)] += config.jacobian_reg + mu
            ab = _dense_to_banded(J, u.shape[1])
        bw = ab.shape[0] // 2
        delta = solve_banded((bw, bw), ab, -R.reshape(-1)).reshape(u.shape)
        lam = 1.0
        accepted = False
        evals = 0
        while True:
            trial = u + lam * delta
            if config.projection_enabled:
                projected = simplex_project(trial)
                stats.projection_activations += int(
                    np.any(np.abs(projected - trial) > 1e-15, axis=1).sum()
                )
                trial = projected
            elif _infeasibility(trial) > feas_cap:
                lam *= config.linesearch_factor
                if lam < 1e-14:
                    break
                continue
            Rt, Ft = residual_array(spec, trial, old_values, dx, dt, eta)
            rt = float(np.linalg.norm(Rt))
            evals += 1
            stats.backtracks += 1
            if rt < rn * (1.0 - config.sufficient_decrease * lam) or rt <= tol:
                accepted = True
                break
            if evals >= config.max_backtracks:
                break
            lam *= config.linesearch_factor
        if accepted:
            u, R, F, rn = trial, Rt, Ft, rt
            if config.levenberg:
                if lam >= 1.0:
                    mu *= 0.3
                    if mu < 1e-7:
                        mu = 0.0
                elif lam < 0.25:
                    mu = max(mu * 4.0, 1e-2 / dt)
        else:
            floor = _residual_floor(spec, u, dx, dt, eta)
            if rn <= max(2.0 * floor, tol):
                stats.floor_accepted = True
                break
            if not config.levenberg:
                return None, rn
            mu = max(mu * 8.0, 1.0 / dt)
            if mu > 1e13 / dt:
                return None, rn
        stats.mu_max = max(stats.mu_max, mu)
        it += 1
        stats.iterations = it
    stats.residual_norm = rn
    return u, rn


def _solve_step(spec, old_values, dx, dt, config, eta, depth=0):
    stats = NewtonStats()
    u, rn = _newton_core(spec, old_values, dx, dt, config, eta, stats)
    if u is not None:
        return u, stats
    if not config.substep_rescue or depth >= 8:
        raise NewtonError(
            f"Newton failed: residual {rn:.3e} after {stats.iterations} iterations",
            residual=rn,
        )
    # warm start from two half steps; the accepted state must still solve the
    # full-dt system, so the rescue only generates a better initial guess
    mid, s1 = _solve_step(spec, old_values, dx, dt / 2, config, eta, depth + 1)
    guess, s2 = _solve_step(spec, mid, dx, dt / 2, config, eta, depth + 1)
    stats = NewtonStats(rescue_depth=depth + 1)
    stats.backtracks = s1.backtracks + s2.backtracks
    u, rn = _newton_core(spec, old_values, dx, dt, config, eta, stats, guess=guess)
    if u is None:
        raise NewtonError(
            f"substep rescue could not solve the full-dt system (residual {rn:.3e})",
            residual=rn,
        )
    return u, stats


def newton_solve(spec, old_field, mesh, config, eta=None):
    """One implicit Euler step; returns (new StateField, NewtonStats)."""
    if eta is None:
        eta = spec.eta if config.eta is None else config.eta
    values, stats = _solve_step(spec, old_field.values, mesh.dx, config.dt,
                                config, eta)
    return StateField(mesh, values, old_field.time + config.dt, validate=False), stats


# ---------------------------------------------------------------------------
# Time integration
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    snapshots: dict
    diagnostics: "object"
    stats: list
    min_fraction: float
    config: SolverConfig
    metadata: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.snapshots[max(self.snapshots)]


def run(spec, mesh, config, initial, allow_analysis_only=False, metadata=None):
    """Integrate from t=0 to t_final with fixed dt, recording diagnostics.

    Analysis-only presets are refused unless explicitly overridden."""
    from .diagnostics import DiagnosticsCollector

    if spec.analysis_only and not allow_analysis_only:
        raise ModelError(
            f"preset {spec.name!r} is analysis-only ({spec.notes}); "
            "pass allow_analysis_only=True to simulate anyway"
        )
    eta = spec.eta if config.eta is None else config.eta
    n_steps = int(round(config.t_final / config.dt))
    if abs(n_steps * config.dt - config.t_final) > 1e-9 * max(1.0, config.t_final):
        raise ModelError("t_final must be an integer multiple of dt")
    collector = DiagnosticsCollector(spec, initial, eta)
    snapshots = {0.0: initial.copy()}
    snap_times = sorted(set(float(t) for t in config.snapshot_times))
    stats_list = []
    state = initial.copy()
    min_frac = state.min_fraction
    collector.record(state, NewtonStats(iterations=0, residual_norm=0.0))
    for step in range(n_steps):
        try:
            state, stats = newton_solve(spec, state, mesh, config, eta=eta)
        except NewtonError as err:
            err.step_index = step
            raise
        stats_list.append(stats)
        min_frac = min(min_frac, state.min_fraction)
        t_now = (step + 1) * config.dt
        state.time = t_now
        if (step + 1) % config.diagnostics_every == 0 or step == n_steps - 1:
            collector.record(state, stats)
        for ts in snap_times:
            if abs(t_now - ts) < config.dt / 2:
                snapshots[ts] = state.copy(time=t_now)
    snapshots[n_steps * config.dt] = state.copy()
    return RunResult(
        snapshots=snapshots,
        diagnostics=collector.series(),
        stats=stats_list,
        min_fraction=min_frac,
        config=config,
        metadata=dict(metadata or {}),
    )


def recover_fluxes(spec, field, eta=None, velocity_floor=1e-10):
    """Interface fluxes (N+1, n) with zero wall fluxes, plus phase velocities
    v_i = J_i / u_hat_i where the interface fraction exceeds the floor
    (NaN marks undefined velocities)."""
    eta = spec.eta if eta is None else eta
    values = field.values
    N, n = values.shape
    F = np.zeros((N + 1, n))
    F[1:-1] = interface_fluxes(spec, values, field.mesh.dx, eta=eta)
    uh = np.zeros((N + 1, n))
    uh[1:-1] = 0.5 * (values[:-1] + values[1:])
    vel = np.full_like(F, np.nan)
    mask = uh > velocity_floor
    vel[mask] = F[mask] / uh[mask]
    return F, vel
