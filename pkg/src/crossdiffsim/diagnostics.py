"""Entropies, dissipation functionals, decay fits and inter-mesh errors.

Pure post-processing of cell-averaged fields: nothing here feeds back into
the time stepper.  Conventions: entropy integrands use the exact limit
0*log(0) = 0 below a 1e-14 floor; gradients live on interior interfaces
(adjacent cell difference over dx) with midpoint quadrature, matching the
flux stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import StateField
from .model import ModelError, SimplexPoint

ENTROPY_FLOOR = 1e-14


class RaoUnavailableError(ModelError):
    """Rao diagnostics need a constant symmetric pressure table."""


def _xlogx(u):
    out = np.zeros_like(u)
    mask = u > ENTROPY_FLOOR
    out[mask] = u[mask] * (np.log(u[mask]) - 1.0)
    return out


def _with_solvent(values):
    return np.concatenate([values, (1.0 - values.sum(axis=1))[:, None]], axis=1)


def boltzmann_entropy(field):
    """Integral of sum_i u_i (log u_i - 1) over the domain (solvent included)."""
    W = _with_solvent(field.values)
    return float(_xlogx(np.clip(W, 0.0, None)).sum() * field.mesh.dx)


def _require_rao(spec):
    if not spec.rao_available():
        raise RaoUnavailableError(
            "Rao entropy requires a constant symmetric pressure table; "
            f"law {type(spec.q).__name__} does not qualify"
        )
    return spec.q.table(np.zeros((1, spec.n)))[0]


def rao_entropy(spec, field):
    """Integral of (1/2) sum_ij q_ij u_i u_j (solvent row/column are zero)."""
    qtab = _require_rao(spec)[1:, 1:]
    U = field.values
    return float(0.5 * np.einsum("mi,ij,mj->", U, qtab, U) * field.mesh.dx)


def relative_boltzmann(field, reference):
    """H(u | u_ref) = sum_i integral u_i log(u_i / u_ref_i), solvent included.

    The reference must be interior in every species that carries mass; a
    species whose reference and field are both (numerically) empty
    contributes its 0 * log 0 limit.  The result is nonnegative whenever the
    reference carries the field's per-species means, which is asserted."""
    if isinstance(reference, SimplexPoint):
        ref = reference.full[1:]  # species order u_1..u_n
        ref = np.concatenate([ref, [reference.u0]])
    else:
        ref = np.asarray(reference, dtype=float)
        if ref.shape == (field.n_species,):
            ref = np.concatenate([ref, [1.0 - ref.sum()]])
    W = np.clip(_with_solvent(field.values), 0.0, None)
    dx = field.mesh.dx
    total = 0.0
    for i in range(W.shape[1]):
        if ref[i] <= ENTROPY_FLOOR:
            if W[:, i].sum() * dx > 1e-7:
                raise ModelError(
                    f"reference component {i} is on the simplex boundary but the "
                    "field carries mass there"
                )
            continue
        col = W[:, i]
        mask = col > ENTROPY_FLOOR
        total += float((col[mask] * np.log(col[mask] / ref[i])).sum() * dx)
    if total < -1e-12:
        raise ModelError(f"relative entropy {total:.3e} < 0: reference does not "
                         "match the field's masses")
    return total


def relative_rao(spec, field, reference_field):
    """sum_ij q_ij integral (u_i - v_i)(u_j - v_j) between two fields."""
    qtab = _require_rao(spec)[1:, 1:]
    if reference_field.mesh.n_cells != field.mesh.n_cells:
        raise ModelError("relative Rao entropy needs matching meshes")
    D = field.values - reference_field.values
    return float(np.einsum("mi,ij,mj->", D, qtab, D) * field.mesh.dx)


def boltzmann_dissipation(spec, field):
    """The two dissipation terms of the equal-drag entropy balance:

    quadratic term:  sum_ij (q_ij + r_ij) grad u_i . grad u_j
    square-root term: 4 sum_i (q_i(u) - r_i(u)) |grad sqrt(u_i)|^2

    Gradients at interior interfaces, midpoint quadrature; constant laws only."""
    if not spec.q.is_constant:
        raise RaoUnavailableError("dissipation split requires constant pressure laws")
    qtab = spec.q.table(np.zeros((1, spec.n)))[0][1:, 1:]
    rtab = spec.r_active
    U = field.values
    dx = field.mesh.dx
    g = (U[1:] - U[:-1]) / dx
    quad = float(np.einsum("mi,ij,mj->", g, qtab + rtab, g) * dx)
    uh = 0.5 * (U[:-1] + U[1:])
    gs = (np.sqrt(np.clip(U[1:], 0.0, None)) - np.sqrt(np.clip(U[:-1], 0.0, None))) / dx
    qv = spec.q.values(uh)[:, 1:]
    from .model import _full_fractions

    rv = (_full_fractions(uh) @ spec.r.T)[:, 1:]
    sqrt_term = float(4.0 * ((qv - rv) * gs**2).sum() * dx)
    return quad, sqrt_term


def steady_state(field):
    """Per-species spatial means: the constant long-time profile."""
    return SimplexPoint(field.values.mean(axis=0))


@dataclass(frozen=True)
class DecayFit:
    rate: float
    fit_residual: float
    second_difference_signs: np.ndarray


def decay_fit(times, values, window=None):
    """Least-squares exponential decay rate of a positive series.

    Returns the fitted rate (positive = decay), the RMS residual of the
    log-linear fit, and the sign profile of the discrete second differences
    of the series (the concavity observation)."""
    t = np.asarray(times, dtype=float)
    h = np.asarray(values, dtype=float)
    if t.ndim != 1 or t.shape != h.shape or len(t) < 2:
        raise ValueError("need matching 1D series with at least two samples")
    if np.any(h <= 0):
        h = np.clip(h, 1e-16, None)
    if window is not None:
        lo, hi = window
        mask = (t >= lo) & (t <= hi)
        t, h = t[mask], h[mask]
    logh = np.log(h)
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, logh, rcond=None)
    resid = logh - A @ coef
    second = np.diff(np.asarray(values, dtype=float), 2)
    return DecayFit(rate=float(-coef[0]),
                    fit_residual=float(np.sqrt(np.mean(resid**2))),
                    second_difference_signs=np.sign(second))


# ---------------------------------------------------------------------------
# Inter-mesh errors and the convergence study
# ---------------------------------------------------------------------------


def restrict_to_mesh(values_fine, n_coarse):
    """Exact cell averages of a piecewise-constant fine field on a coarser
    uniform mesh (any mesh pair; overlap-weighted)."""
    n_fine = values_fine.shape[0]
    if n_fine < n_coarse:
        raise ModelError("fine mesh must not be coarser than the target")
    fine_edges = np.linspace(0.0, 1.0, n_fine + 1)
    coarse_edges = np.linspace(0.0, 1.0, n_coarse + 1)
    out = np.empty((n_coarse, values_fine.shape[1]))
    for s in range(values_fine.shape[1]):
        anti = np.concatenate([[0.0], np.cumsum(values_fine[:, s]) / n_fine])
        vals = np.interp(coarse_edges, fine_edges, anti)
        out[:, s] = np.diff(vals) * n_coarse
    return out


def l1_error(fine_field, coarse_field):
    """Per-species discrete L1 distance after restricting fine to coarse."""
    restricted = restrict_to_mesh(fine_field.values, coarse_field.mesh.n_cells)
    return np.abs(coarse_field.values - restricted).sum(axis=0) * coarse_field.mesh.dx


@dataclass
class ConvergenceResult:
    mesh_sizes: list
    errors: np.ndarray           # (len(meshes), n) per-species L1 errors
    rates: np.ndarray            # per-species fitted rates
    rate_total: float
    reference_n: int
    failures: list = field(default_factory=list)

    def rows(self):
        for i, N in enumerate(self.mesh_sizes):
            yield (N, 1.0 / N, *self.errors[i], self.rate_total)


def convergence_study(spec, config, mesh_sizes, reference_n, initial_factory=None,
                      allow_analysis_only=False):
    """Run the model on each mesh plus a fine reference; fit the L1 rate.

    initial_factory(mesh) -> StateField; defaults to the standard segregation
    profile.  A run failure aborts the study, reporting the partial table in
    the exception."""
    from .grid import Mesh1D
    from .solver import NewtonError, initial_profile, run

    if initial_factory is None:
        def initial_factory(mesh):
            return initial_profile(mesh)[0]

    if any(reference_n < N for N in mesh_sizes):
        raise ModelError("reference mesh must be the finest")
    if len(mesh_sizes) < 3:
        raise ModelError("need at least 3 meshes to fit a rate")
    finals = {}
    for N in list(mesh_sizes) + [reference_n]:
        mesh = Mesh1D(N)
        try:
            result = run(spec, mesh, config, initial_factory(mesh),
                         allow_analysis_only=allow_analysis_only)
        except NewtonError as err:
            partial = {M: finals[M] for M in finals}
            raise NewtonError(
                f"convergence study aborted at N={N}: {err} "
                f"(completed meshes: {sorted(partial)})",
                step_index=err.step_index, residual=err.residual,
            ) from err
        finals[N] = result.final
    ref = finals[reference_n]
    errors = np.array([l1_error(ref, finals[N]) for N in mesh_sizes])
    log_h = np.log([1.0 / N for N in mesh_sizes])
    A = np.vstack([log_h, np.ones_like(log_h)]).T
    rates = np.array([
        float(np.linalg.lstsq(A, np.log(errors[:, s]), rcond=None)[0][0])
        for s in range(errors.shape[1])
    ])
    rate_total = float(np.linalg.lstsq(A, np.log(errors.sum(axis=1)), rcond=None)[0][0])
    return ConvergenceResult(mesh_sizes=list(mesh_sizes), errors=errors,
                             rates=rates, rate_total=rate_total,
                             reference_n=reference_n)


# ---------------------------------------------------------------------------
# Per-run diagnostics series
# ---------------------------------------------------------------------------


@dataclass
class DiagnosticsSeries:
    times: np.ndarray
    masses: np.ndarray           # (samples, n)
    boltzmann: np.ndarray
    rao: np.ndarray              # NaN when unavailable
    relative_boltzmann: np.ndarray
    dissipation_quadratic: np.ndarray
    dissipation_sqrt: np.ndarray
    min_fraction: np.ndarray
    max_fraction: np.ndarray     # (samples, n)
    newton_iterations: np.ndarray
    newton_residuals: np.ndarray

    def header(self):
        n = self.masses.shape[1]
        cols = ["t"]
        cols += [f"mass_u{i+1}" for i in range(n)]
        cols += ["H_B", "H_R", "H_B_rel", "diss_quad", "diss_sqrt", "min_u"]
        cols += [f"max_u{i+1}" for i in range(n)]
        cols += ["newton_iters", "newton_residual"]
        return cols

    def rows(self):
        for k in range(len(self.times)):
            yield (
                self.times[k], *self.masses[k], self.boltzmann[k], self.rao[k],
                self.relative_boltzmann[k], self.dissipation_quadratic[k],
                self.dissipation_sqrt[k], self.min_fraction[k],
                *self.max_fraction[k], self.newton_iterations[k],
                self.newton_residuals[k],
            )


class DiagnosticsCollector:
    """Accumulates the diagnostics series during a run."""

    def __init__(self, spec, initial_field, eta):
        self.spec = spec
        self.eta = eta
        means = initial_field.values.mean(axis=0)
        self.reference = np.concatenate([means, [1.0 - means.sum()]])
        self._rao_ok = spec.rao_available()
        self._diss_ok = spec.q.is_constant
        self._rows = []

    def record(self, field, stats):
        spec = self.spec
        masses = field.masses()
        hb = boltzmann_entropy(field)
        hr = rao_entropy(spec, field) if self._rao_ok else math.nan
        rel = relative_boltzmann(field, self.reference[:-1])
        if self._diss_ok:
            quad, sq = boltzmann_dissipation(spec, field)
        else:
            quad = sq = math.nan
        self._rows.append((
            field.time, masses, hb, hr, rel, quad, sq,
            field.min_fraction, field.values.max(axis=0),
            stats.iterations, stats.residual_norm,
        ))

    def series(self):
        rows = self._rows
        return DiagnosticsSeries(
            times=np.array([r[0] for r in rows]),
            masses=np.array([r[1] for r in rows]),
            boltzmann=np.array([r[2] for r in rows]),
            rao=np.array([r[3] for r in rows]),
            relative_boltzmann=np.array([r[4] for r in rows]),
            dissipation_quadratic=np.array([r[5] for r in rows]),
            dissipation_sqrt=np.array([r[6] for r in rows]),
            min_fraction=np.array([r[7] for r in rows]),
            max_fraction=np.array([r[8] for r in rows]),
            newton_iterations=np.array([r[9] for r in rows]),
            newton_residuals=np.array([r[10] for r in rows]),
        )
