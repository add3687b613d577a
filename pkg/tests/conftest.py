import numpy as np
import pytest

from crossdiffsim import preset
from crossdiffsim.model import ConstantDrag, ConstantPressure, ModelSpec, UnitDrag


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def interior_points(rng, count, n=2, floor=1e-3):
    """Uniformly distributed strictly interior simplex points."""
    pts = []
    while len(pts) < count:
        w = rng.dirichlet(np.ones(n + 1))
        if w.min() > floor:
            pts.append(w[1:])
    return pts


def counterexample_spec():
    """q11=q22=1, q12=q21=10, k01=k02=1, k12=10: entropy structure fails."""
    q = np.zeros((3, 3))
    q[1:, 1:] = [[1.0, 10.0], [10.0, 1.0]]
    k = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 10.0], [1.0, 10.0, 0.0]])
    return ModelSpec(2, ConstantDrag(k), ConstantPressure(q), np.zeros((3, 3)),
                     name="counterexample")


def constant_spec(q_active, r_active=None, drag=None, n=2):
    q = np.zeros((n + 1, n + 1))
    q[1:, 1:] = np.asarray(q_active, dtype=float)
    r = np.zeros((n + 1, n + 1))
    if r_active is not None:
        r[1:, 1:] = np.asarray(r_active, dtype=float)
    return ModelSpec(n, drag or UnitDrag(), ConstantPressure(q), r)


ENTROPY_PRESETS = ("vf-skt", "vf-busenberg-travis")


def entropy_structure_specs():
    """Model instances satisfying the equal-drag entropy hypotheses."""
    specs = [preset("vf-skt"), preset("vf-busenberg-travis"),
             preset("tumor-jb", theta=30.0),
             preset("multiphase-skt", theta1=0.5, theta2=0.5, eta=0.0)]
    return specs
