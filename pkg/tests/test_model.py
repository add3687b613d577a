import numpy as np
import pytest

from crossdiffsim.model import (
    ConstantDrag,
    ConstantPressure,
    DegenerateDrag,
    ModelError,
    ModelSpec,
    PerturbedDrag,
    SimplexPoint,
    SKTPressure,
    TumorPressure,
    UnitDrag,
    preset,
    pressure_q,
    pressure_r,
    tumor_entropy_threshold,
    _full_fractions,
)

from conftest import interior_points


def make_spec(q_tab, r_tab=None, **kw):
    n = q_tab.shape[0] - 1
    r = np.zeros_like(q_tab) if r_tab is None else r_tab
    return ModelSpec(n, UnitDrag(), ConstantPressure(q_tab, **kw), r)


class TestPressureQ:
    def test_zero_state_gives_zero_pressure(self):
        q = np.zeros((3, 3))
        q[1:, 1:] = [[1, 10], [10, 1]]
        spec = make_spec(q)
        assert pressure_q(spec, np.array([0.0, 0.0])) == pytest.approx([0, 0, 0], abs=0)

    def test_tumor_law_values(self):
        spec = ModelSpec(2, UnitDrag(), TumorPressure(0.2, 0.0015, 100.0), np.zeros((3, 3)))
        vals = pressure_q(spec, np.array([0.3, 0.4]))
        # brute-force evaluation of the coefficient table
        q21 = 0.0015 * 100.0 * 0.4
        assert vals[1] == pytest.approx(0.2 * 0.3, rel=1e-14)
        assert vals[2] == pytest.approx(q21 * 0.3 + 0.0015 * 0.4, rel=1e-14)
        assert vals[2] == pytest.approx(0.0186, rel=1e-12)

    def test_skt_law_values(self):
        spec = ModelSpec(2, UnitDrag(), SKTPressure(1.0, 10.0), np.zeros((3, 3)))
        vals = pressure_q(spec, np.array([0.5, 0.2]))
        assert vals[1] == pytest.approx(0.5 * 1.2, rel=1e-14)
        assert vals[2] == pytest.approx(0.2 * 6.0, rel=1e-14)

    def test_rejects_corrupted_state(self):
        spec = preset("vf-skt")
        with pytest.raises(ModelError):
            pressure_q(spec, np.array([-1e-6, 0.5]))
        with pytest.raises(ModelError):
            pressure_q(spec, np.array([0.7, 0.5]))  # solvent negative


class TestPressureR:
    def test_zero_matrix(self):
        spec = preset("vf-skt")
        assert np.all(pressure_r(spec, np.array([0.3, 0.3])) == 0)

    def test_linear_form(self):
        r = np.zeros((3, 3))
        r[1, 2] = r[2, 1] = 3.0
        spec = make_spec(np.zeros((3, 3)), r)
        vals = pressure_r(spec, np.array([0.25, 0.5]))
        assert vals[1] == pytest.approx(1.5)
        assert vals[2] == pytest.approx(0.75)
        assert vals[0] == 0.0

    def test_asymmetric_r_rejected(self):
        r = np.zeros((3, 3))
        r[1, 2] = 3.0  # r21 left unset
        with pytest.raises(ModelError):
            make_spec(np.zeros((3, 3)), r)

    def test_r_solvent_row_rejected(self):
        r = np.zeros((3, 3))
        r[0, 1] = r[1, 0] = 1.0
        with pytest.raises(ModelError):
            make_spec(np.zeros((3, 3)), r)

    def test_r_diagonal_rejected(self):
        r = np.zeros((3, 3))
        r[1, 1] = 1.0
        with pytest.raises(ModelError):
            make_spec(np.zeros((3, 3)), r)


class TestSimplexPoint:
    def test_full_fractions_sum_to_one(self, rng):
        for u in interior_points(rng, 50):
            p = SimplexPoint(u)
            assert abs(p.full.sum() - 1.0) < 5e-16
            assert 0 <= p.u0 <= 1

    def test_rejects_out_of_simplex(self):
        with pytest.raises(ModelError):
            SimplexPoint([0.7, 0.4])
        with pytest.raises(ModelError):
            SimplexPoint([-0.1, 0.4])


class TestDragLaws:
    def test_constant_drag_validation(self):
        with pytest.raises(ModelError):
            ConstantDrag([[0, 1], [2, 0]])  # asymmetric
        with pytest.raises(ModelError):
            ConstantDrag([[0, -1], [-1, 0]])  # nonpositive
        with pytest.raises(ModelError):
            ConstantDrag([[1, 1], [1, 0]])  # diagonal

    def test_perturbed_table_matches_definition(self, rng):
        ks = np.ones((3, 3)) - np.eye(3)
        drag = PerturbedDrag(ks, 0.01)
        u = np.array([0.3, 0.45])
        w = _full_fractions(u[None, :])[0]
        tab = drag.table(u[None, :], 2)[0]
        for i in range(3):
            for j in range(3):
                expect = 0.0 if i == j else 1.0 + 0.01 * w[i] * w[j]
                assert tab[i, j] == pytest.approx(expect, rel=1e-15)

    def test_degenerate_table_matches_definition(self):
        ks = 2.0 * (np.ones((3, 3)) - np.eye(3))
        drag = DegenerateDrag(ks)
        u = np.array([0.16, 0.25])
        w = _full_fractions(u[None, :])[0]
        tab = drag.table(u[None, :], 2)[0]
        assert tab[1, 2] == pytest.approx(1 + 2 * np.sqrt(w[1] * w[2]), rel=1e-14)
        assert tab[1, 0] == pytest.approx(1 + 2 * np.sqrt(w[1] * w[0]), rel=1e-14)


class TestDerivativeTables:
    @pytest.mark.parametrize("law", [
        TumorPressure(0.2, 0.0015, 30.0),
        TumorPressure(1.0, 1.0, 100.0),
        SKTPressure(1.0, 10.0),
    ])
    def test_jacobian_matches_finite_differences(self, law, rng):
        spec = ModelSpec(2, UnitDrag(), law, np.zeros((3, 3)))
        h = 1e-6
        for u in interior_points(rng, 100):
            Q = law.jacobian(u[None, :])[0]
            for m in range(2):
                e = np.zeros(2)
                e[m] = h
                fd = (law.values((u + e)[None, :])[0][1:]
                      - law.values((u - e)[None, :])[0][1:]) / (2 * h)
                assert np.allclose(Q[:, m], fd, rtol=1e-6, atol=1e-9)

    def test_constant_law_jacobian_is_the_table(self):
        q = np.zeros((3, 3))
        q[1:, 1:] = [[1.0, 2.0], [3.0, 4.0]]
        law = ConstantPressure(q)
        Q = law.jacobian(np.array([[0.2, 0.3]]))[0]
        assert np.array_equal(Q, q[1:, 1:])

    def test_values_match_table_contraction(self, rng):
        for law in (TumorPressure(0.5, 0.25, 12.0), SKTPressure(2.0, 3.0)):
            for u in interior_points(rng, 30):
                w = _full_fractions(u[None, :])[0]
                tab = law.table(u[None, :])[0]
                vals = law.values(u[None, :])[0]
                assert np.allclose(tab @ w, vals, rtol=1e-14, atol=1e-15)


class TestPresets:
    def test_tumor_defaults(self):
        spec = preset("tumor-jb")
        assert spec.n == 2
        assert isinstance(spec.drag, UnitDrag)
        assert np.all(spec.r == 0)
        assert spec.q.beta_c == 0.2 and spec.q.beta_m == 0.0015 and spec.q.theta == 30.0

    def test_vf_bt_coupling(self):
        spec = preset("vf-busenberg-travis")
        qtab = spec.q.q
        # off-diagonal couplings of q and r coincide; the r diagonal is zero
        # by convention and immaterial to the dynamics
        assert qtab[1, 2] == spec.r[1, 2] and qtab[2, 1] == spec.r[2, 1]
        assert np.all(np.diag(spec.r) == 0)
        assert qtab[1, 1] > 0 and qtab[2, 2] > 0

    def test_maxwell_stefan_flagged(self):
        spec = preset("maxwell-stefan")
        assert spec.analysis_only
        vals = pressure_q(spec, np.array([0.3, 0.4]))
        assert np.allclose(vals, 1.0)  # q_i(u) = 1 identically

    def test_thin_film_flagged(self):
        spec = preset("thin-film")
        assert spec.analysis_only
        assert spec.r[1, 2] == 1.0
        assert np.all(spec.q.q == 0)

    def test_unknown_preset(self):
        with pytest.raises(ModelError):
            preset("no-such-model")

    def test_entropy_threshold(self):
        assert tumor_entropy_threshold(0.2, 0.0015) == pytest.approx(46.188, abs=0.01)
        assert tumor_entropy_threshold(1.0, 1.0) == pytest.approx(4.0)
