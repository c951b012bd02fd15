import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chemostat import analysis
from chemostat.analysis import BasinRegion
from chemostat.equilibria import (
    Equilibrium,
    cep_equilibrium,
    coexistence_equilibrium,
    u_crit,
)
from chemostat.errors import ConfigurationError, DomainError
from chemostat.integrator import IntegratorSettings
from chemostat.model import State
from chemostat.stability import classify

SHORT = IntegratorSettings(t_final=50.0)


class TestOperatingDiagram:
    def test_single_cell(self, case1):
        res = analysis.operating_diagram(case1, (0.5, 0.5), (0.3, 0.3), 1, settings=SHORT)
        assert len(res.rows) == 1
        assert res.rows[0][:2] == (0.5, 0.3)
        assert res.ucrit == [(0.5, u_crit(case1, 0.5))]

    def test_rows_sorted_and_complete(self, case1):
        res = analysis.operating_diagram(case1, resolution=(3, 4), settings=SHORT)
        keys = [(r[0], r[1]) for r in res.rows]
        assert keys == sorted(keys) and len(set(keys)) == 12
        assert res.columns == ("epsilon", "u", "distance", "status")
        assert res.fingerprint == case1.fingerprint()

    def test_status_follows_ucrit(self, case1):
        res = analysis.operating_diagram(case1, resolution=(4, 9), settings=SHORT)
        uc = dict(res.ucrit)
        for eps, u, _, status in res.rows:
            gap = u - uc[eps]
            assert status == ("washout" if gap >= 0.02 else "persistence" if gap <= -0.02 else "boundary")

    def test_jobs_do_not_change_output(self, case2):
        a = analysis.operating_diagram(case2, resolution=5, settings=SHORT, jobs=1)
        b = analysis.operating_diagram(case2, resolution=5, settings=SHORT, jobs=3)
        assert a.rows == b.rows

    def test_custom_initial(self, case1):
        res = analysis.operating_diagram(case1, (0, 0), (0.7, 0.7), 1, fixed_initial=case1.washout, settings=SHORT)
        assert res.rows[0][2] == 0.0

    @pytest.mark.parametrize("kw", [{"eps_range": (-1, 1)}, {"u_range": (0.5, 0.1)}, {"resolution": 0}])
    def test_invalid(self, case1, kw):
        with pytest.raises(ConfigurationError):
            analysis.operating_diagram(case1, **kw)

    def test_invalid_initial(self, case1):
        with pytest.raises(ConfigurationError):
            analysis.operating_diagram(case1, resolution=1, fixed_initial=State([0.1] * 5, 2.0))

    def test_monotone_heuristic(self):
        res = analysis.SweepResult("operating_diagram", ("epsilon", "u", "distance", "status"),
                                   [(0.0, 0.5, 1e-3, "washout"), (0.0, 0.6, 2e-3, "washout")],
                                   (0, 0), (0.5, 0.6), (1, 2), "x")
        assert len(analysis._washout_monotone_warnings(res, 2)) == 1
        assert not analysis._washout_monotone_warnings(res, 2, floor=1e-2)


class TestStabilityMap:
    def test_statuses(self, case1):
        res = analysis.stability_map(case1, resolution=6)
        by_cell = {(r[0], r[1]): r for r in res.rows}
        assert all(math.isnan(r[2]) and r[3] == "degenerate" for (e, u), r in by_cell.items() if u == 0)
        for (e, u), r in by_cell.items():
            if u > 0 and u < u_crit(case1, e):
                assert r[3] == "hurwitz" and r[2] < 0
            elif u > 0:
                assert r[3] == "no-coexistence"

    def test_cell_at_threshold(self, case1):
        uc = u_crit(case1, 0.5)
        res = analysis.stability_map(case1, (0.5, 0.5), (uc, uc), 1)
        assert res.rows[0][3] == "no-coexistence"

    def test_eps_zero_column_is_cep(self, case1):
        res = analysis.stability_map(case1, (0, 0), (0.4, 0.4), 1)
        m = case1.with_params(epsilon=0.0)
        assert res.rows[0][2] == classify(m, cep_equilibrium(m, 1)).margin

    def test_no_unique_winner(self, case1):
        # above every break-even attainable rate the unperturbed column has no winner
        uc0 = u_crit(case1, 0.0)
        res = analysis.stability_map(case1, (0, 0), (uc0 - 1e-13, uc0 - 1e-13), 1)
        assert res.rows[0][3] in ("hurwitz", "marginal", "no-unique-winner")

    def test_solver_error_is_recorded(self, case1, monkeypatch):
        from chemostat.errors import NumericError

        def broken(model):
            raise NumericError("boom")

        monkeypatch.setattr(analysis, "coexistence_equilibrium", broken)
        res = analysis.stability_map(case1, (0.5, 0.5), (0.3, 0.3), 1)
        assert res.rows[0][3] == "solver-error: NumericError"


class TestLambdaScan:
    def test_monotone(self, case2):
        scan = analysis.lambda_scan(case2, 0.4, np.linspace(0, 100, 11))
        assert scan.values.shape == (100, 11)
        assert scan.strictly_increasing().all()

    def test_shift_in_u(self, case2):
        eps = [0, 1, 10, 100]
        a = analysis.lambda_scan(case2, 0.4, eps).values
        b = analysis.lambda_scan(case2, 1.5, eps).values
        assert np.allclose(a - b, 1.1, atol=1e-12, rtol=0)

    def test_empty_substrate(self, either_case):
        scan = analysis.lambda_scan(either_case, 0.4, [0, 3, 30])
        assert np.allclose(scan.values[0], -0.4, atol=1e-12, rtol=0)


class TestRegions:
    @pytest.mark.parametrize("text,expected", [
        ("full", BasinRegion("full")),
        ("delta:1:0.05", BasinRegion("delta", 1, 0.05)),
        ("delta-minus:3:0.2", BasinRegion("delta-minus", 3, 0.2)),
    ])
    def test_parse(self, text, expected):
        assert BasinRegion.parse(text) == expected
        assert BasinRegion.parse(str(expected)) == expected

    @pytest.mark.parametrize("text", ["box", "delta:1", "delta:x:0.1", "full:1:2"])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigurationError):
            BasinRegion.parse(text)

    @given(seed=st.integers(0, 2**63), spec=st.sampled_from(["full", "delta:1:0.05", "delta-minus:1:0.05", "delta:5:0.5"]))
    @settings(max_examples=30)
    def test_samples_in_region(self, case1, seed, spec):
        region = BasinRegion.parse(spec)
        y = analysis.sample_region(case1, region, 25, seed)
        assert y.shape == (25, 6)
        assert region.contains(case1, y).all()
        if region.kind == "full":
            assert (y[:, :5] > 0).all() and (y[:, :5] <= 10).all()

    def test_seeded(self, case1):
        r = BasinRegion.parse("delta:1:0.05")
        a = analysis.sample_region(case1, r, 10, seed=7)
        assert np.array_equal(a, analysis.sample_region(case1, r, 10, seed=7))
        assert not np.array_equal(a, analysis.sample_region(case1, r, 10, seed=8))

    def test_delta_fills_simplex(self, case1):
        # the mass coordinate of a uniform point in the 6-simplex has mean 6/7 of s_in
        y = analysis.sample_region(case1, BasinRegion("delta", 1, 1e-300), 20000, seed=0)
        b = y[:, 5] + y[:, :5].sum(axis=1) / 3.0
        assert b.mean() == pytest.approx(6 / 7, abs=5e-3)

    @pytest.mark.parametrize("spec", ["delta:1:5", "delta:6:0.1", "delta:1:0"])
    def test_empty_or_invalid(self, case1, spec):
        with pytest.raises(ConfigurationError):
            analysis.sample_region(case1, BasinRegion.parse(spec), 3)


class TestBasin:
    def test_converges(self, case1):
        eq = coexistence_equilibrium(case1)
        study = analysis.basin_study(case1, BasinRegion.parse("delta-minus:1:0.05"), 10, eq, seed=1)
        assert study.count == 10 and study.final_distances.shape == (10,)
        assert study.max_distance <= 1e-2

    def test_start_at_target(self, either_case):
        eq = coexistence_equilibrium(either_case)
        y = eq.state.as_vector()
        # error control admits drift of order atol + rtol |y|; with rtol = atol the bound is 10 atol
        tight = IntegratorSettings(rtol=1e-10, atol=1e-10)
        study = analysis.basin_from_initials(either_case, [y], eq, tight)
        assert study.max_distance <= 10 * tight.atol
        default = IntegratorSettings()
        study = analysis.basin_from_initials(either_case, [y], eq, default)
        assert study.max_distance <= 10 * (default.atol + default.rtol * np.abs(y).max())

    def test_target_residual_checked(self, case1):
        fake = Equilibrium("coexistence", State([0.2] * 5, 0.5), residual=1.0)
        with pytest.raises(DomainError):
            analysis.basin_from_initials(case1, [[0.1] * 5 + [0.5]], fake)


def test_gap_study(case1):
    g = analysis.gap_study(case1, [0.2, 0.025], count=8, seed=3)
    assert g[1] < g[0]


class TestOutput:
    def test_sweep_csv(self, case1, tmp_path):
        res = analysis.stability_map(case1, (0, 1), (0, 0.4), 2)
        path = tmp_path / "s.csv"
        analysis.write_sweep_csv(res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epsilon,u,lambda_J,status"
        assert lines[1] == "0,0,nan,degenerate"
        assert len(lines) == 5
        assert float(lines[2].split(",")[2]) == res.rows[1][2]

    def test_ucrit_csv(self, case1, tmp_path):
        path = tmp_path / "u.csv"
        analysis.write_ucrit_csv(analysis.ucrit_curve(case1, [0, 10]), path)
        lines = path.read_text().splitlines()
        assert lines[:2] == ["epsilon,u_c", "0,0.65625"]

    def test_lambda_csv(self, case2, tmp_path):
        path = tmp_path / "l.csv"
        analysis.write_lambda_scan_csv(analysis.lambda_scan(case2, 0.4, [0, 2.5], s_resolution=3), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "s,eps=0,eps=2.5" and len(lines) == 4

    def test_gnuplot(self):
        text = analysis.gnuplot_script({"operating_diagram": "o.csv", "ucrit_curve": "u.csv", "lambda_scan": "l.csv"})
        assert "'o.csv'" in text and "'u.csv'" in text and "'l.csv'" in text
        assert "set datafile separator ','" in text


def test_jobs_env(monkeypatch):
    monkeypatch.setenv("CHEMOSTAT_JOBS", "3")
    assert analysis.default_jobs() == 3
    monkeypatch.setenv("CHEMOSTAT_JOBS", "many")
    with pytest.raises(ConfigurationError):
        analysis.default_jobs()
