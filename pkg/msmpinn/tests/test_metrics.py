import numpy as np
import pandas as pd
import pytest

import msmpinn._exceptions as mexc
from msmpinn import metrics
from msmpinn.network import init_network
from msmpinn.problems import Lattice, default_lattice, get_problem


@pytest.fixture(scope="module")
def rotation():
    return get_problem("rotation")


@pytest.fixture(scope="module")
def lattice(rotation):
    return Lattice([np.linspace(-0.2, 1.2, 41)] * 2,
                   np.linspace(0.0, 1.0, 6))


def _scaled(fn, c):
    return lambda x: c * fn(x)


def _shifted(fn, c):
    return lambda x: fn(x) + c


class TestLatticeErrors:
    def test_equal_fields(self, rotation, lattice):
        assert metrics.rel_l2(rotation.exact, rotation.exact, lattice) == 0
        assert metrics.l_inf(rotation.exact, rotation.exact, lattice) == 0

    def test_zero_field(self, rotation, lattice):
        rel = metrics.rel_l2(lambda x: np.zeros(len(x)), rotation.exact,
                             lattice)
        assert rel == pytest.approx(1.0, abs=1e-15)

    def test_doubled_field(self, rotation, lattice):
        rel = metrics.rel_l2(_scaled(rotation.exact, 2.0), rotation.exact,
                             lattice)
        assert rel == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("c", [0.1, -0.3])
    def test_constant_offset(self, rotation, lattice, c):
        err = metrics.l_inf(_shifted(rotation.exact, c), rotation.exact,
                            lattice)
        assert err == pytest.approx(abs(c), rel=1e-12)

    def test_single_node_offset(self, lattice):
        reference = np.ones(lattice.shape)
        field = reference.copy()
        field[3, 7, 2] += 0.25
        assert metrics.l_inf(field, reference, lattice) == 0.25

    @pytest.mark.parametrize("c", [3.0, -0.5])
    def test_joint_scaling(self, rotation, lattice, c):
        field = _shifted(rotation.exact, 0.01)
        base = metrics.rel_l2(field, rotation.exact, lattice)
        scaled = metrics.rel_l2(_scaled(field, c),
                                _scaled(rotation.exact, c), lattice)
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_lattice_refinement(self, rotation):
        def field(x):
            return rotation.exact(x) * (1.0 + 0.1 * np.sin(3.0 * x[:, 0]))

        coarse = default_lattice(rotation, 0.5)
        fine = default_lattice(rotation)
        a = metrics.rel_l2(field, rotation.exact, coarse)
        b = metrics.rel_l2(field, rotation.exact, fine)
        assert abs(a - b) / b < 0.01

    def test_trapezoid_weights(self):
        lattice = Lattice([np.linspace(0.0, 1.0, 5)], np.linspace(0, 2, 3))
        weights = metrics.lattice_weights(lattice)
        assert weights.shape == (5, 3)
        assert weights.sum() == pytest.approx(2.0)

    def test_zero_reference(self, lattice):
        zeros = np.zeros(lattice.shape)
        with pytest.raises(mexc.ZeroReferenceNormError) as exc_info:
            metrics.rel_l2(zeros, zeros, lattice)
        exp_msg = ("Reference solution has zero norm on the evaluation "
                   "lattice.")
        assert str(exc_info.value) == exp_msg

    def test_network_uses_hard_constraint(self):
        problem = get_problem("allen_cahn")
        net = init_network([2, 4, 1], 0)
        lattice = Lattice([np.array([-1.0, 1.0])], np.array([0.0, 0.5]))
        values = metrics.on_lattice(net, lattice, problem)
        np.testing.assert_allclose(values, -1.0)


class TestWeightedErrors:
    def test_exact(self, rotation):
        rel, inf = metrics.weighted_errors(rotation.exact, rotation, 2000)
        assert rel == 0.0
        assert inf == 0.0

    def test_offset(self, rotation):
        rel, inf = metrics.weighted_errors(_shifted(rotation.exact, 0.05),
                                           rotation, 2000)
        assert inf == pytest.approx(0.05, rel=1e-9)
        assert rel > 0

    def test_zero_network_in_six_dimensions(self):
        problem = get_problem("advection6d")
        net = init_network([7, 4, 1], 0)
        net = net.with_params(np.zeros(net.n_params))
        rel, _ = metrics.weighted_errors(net, problem, 2000)
        assert rel == pytest.approx(1.0)

    def test_points_follow_the_solution(self):
        problem = get_problem("advection6d")
        points = metrics.sample_solution_weighted(problem, 5000, 0)
        assert points.shape == (5000, 7)
        assert problem.contains(points[:, :6]).all()
        offset = points[:, :6] - points[:, 6:]
        np.testing.assert_allclose(offset.mean(axis=0), 0.0, atol=0.01)

    def test_no_closed_form(self):
        with pytest.raises(mexc.ConfigurationError) as exc_info:
            metrics.sample_solution_weighted(get_problem("allen_cahn"), 10,
                                             0)
        assert str(exc_info.value) == "allen_cahn has no closed-form solution."

    def test_evaluate_without_lattice(self):
        problem = get_problem("advection6d")
        errors = metrics.evaluate(problem.exact, problem, None, 1000)
        assert errors == {"rel_l2": 0.0, "l_inf": 0.0, "weighted": True}


class TestReport:
    def _reports(self):
        reports = []
        for method, values in [("msm", [1.0, 2.0, 9.0]),
                               ("pinn", [4.0, 5.0, 6.0])]:
            for seed, value in enumerate(values):
                reports.append(metrics.ErrorReport(
                    "burgers", method, seed, value, value / 10, "abc", 1.0,
                ))
        return reports

    def test_rows_and_medians(self):
        table = metrics.build_report(self._reports())
        assert list(table.columns) == metrics.REPORT_COLUMNS
        assert len(table) == 8
        medians = table[table.seed == "median"].set_index("method")
        assert medians.loc["msm", "rel_l2"] == 2.0
        assert medians.loc["pinn", "rel_l2"] == 5.0
        assert medians.loc["msm", "l_inf"] == pytest.approx(0.2)

    def test_empty(self):
        table = metrics.build_report([])
        assert list(table.columns) == metrics.REPORT_COLUMNS
        assert len(table) == 0

    def test_records(self):
        records = metrics.report_records(
            metrics.build_report(self._reports()))
        assert len(records) == 8
        assert records[0]["problem"] == "burgers"

    def test_negative_error(self):
        with pytest.raises(mexc.ContractError) as exc_info:
            metrics.ErrorReport("burgers", "msm", 0, -1.0, 0.0)
        assert str(exc_info.value) == "Errors must be non-negative."


def test_lattice_frame(rotation):
    lattice = Lattice([np.linspace(0, 1, 3), np.linspace(0, 1, 4)],
                      np.array([0.0, 1.0]))
    frame = metrics.lattice_frame(rotation.exact, rotation, lattice)
    assert isinstance(frame, pd.DataFrame)
    assert list(frame.columns) == ["x1", "x2", "t", "u"]
    assert len(frame) == 24
    np.testing.assert_allclose(frame.u, rotation.exact(lattice.inputs()))
