"""Uniform 1D finite-volume mesh and cell-averaged states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import COMPONENT_TOL, ModelError, validate_state


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of N control volumes on (0, 1)."""

    n_cells: int

    def __post_init__(self):
        if self.n_cells < 4:
            raise ModelError("mesh needs at least 4 cells")

    @property
    def dx(self):
        return 1.0 / self.n_cells

    @property
    def centers(self):
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.n_cells + 1)


class StateField:
    """Cell-averaged volume fractions u_1..u_n on a mesh; u0 is derived."""

    def __init__(self, mesh, values, time=0.0, validate=True):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != mesh.n_cells:
            raise ModelError("state shape does not match mesh")
        if validate:
            validate_state(values, tol=COMPONENT_TOL)
        self.mesh = mesh
        self.values = values
        self.time = float(time)

    @property
    def n_species(self):
        return self.values.shape[1]

    @property
    def solvent(self):
        return 1.0 - self.values.sum(axis=1)

    @property
    def min_fraction(self):
        return float(min(self.values.min(), self.solvent.min()))

    def masses(self):
        """Per-species integrals over the domain (solvent excluded)."""
        return self.values.sum(axis=0) * self.mesh.dx

    def copy(self, time=None):
        return StateField(self.mesh, self.values.copy(),
                          self.time if time is None else time, validate=False)
