import math

import numpy as np
import pytest

from dqdcap.analysis import (
    AnalysisError,
    compare_report,
    coulomb_period,
    dotsize_sweep,
    estimate_misalignment,
    misalign_sweep,
    stability_diagram,
    transfer_metrics,
)
from dqdcap.capsolve import MaxwellMatrix, SolveOptions
from dqdcap.charging import Bias, ModelCaps, config_energy, stable_config
from dqdcap.constants import AF, MV, Q_E
from dqdcap.reference import build_reference_device
from dqdcap.validation import random_model_caps


def toy_caps():
    cmat = np.array([[2.0, -1.0], [-1.0, 2.0]]) * AF
    gates = np.zeros((2, 4))
    gates[0, 0] = gates[1, 1] = 1.0 * AF
    return ModelCaps(("d1", "d2"), cmat, gates)


class TestStabilityDiagram:
    def test_grid_matches_stable_config(self):
        diag = stability_diagram(toy_caps(), n=51)
        rng = np.random.default_rng(0)
        for _ in range(30):
            i = rng.integers(0, 51)
            j = rng.integers(0, 51)
            assert diag.grid[i, j] == stable_config(
                toy_caps(), diag.v_sl[i], diag.v_sr[j])

    def test_point_symmetry(self):
        diag = stability_diagram(toy_caps(), n=75)
        assert np.array_equal(diag.grid, -diag.grid[::-1, ::-1])

    def test_boundaries_separate_adjacent_configs(self):
        diag = stability_diagram(toy_caps())
        assert len(diag.boundaries) >= 3
        ks = [b.x for b in diag.boundaries]
        assert ks == sorted(ks)

    def test_toy_boundary_crosses_antidiagonal_at_80mV(self):
        # the x=0<->1 line meets V_SR = -V_SL at V_SL = -q_e/(2 aF)
        diag = stability_diagram(toy_caps())
        line = next(b for b in diag.boundaries if b.x == 0)
        p0, p1 = np.array(line.p0), np.array(line.p1)
        d = p1 - p0
        # solve p0 + t d on the antidiagonal: x + y = 0
        t = -(p0[0] + p0[1]) / (d[0] + d[1])
        v_sl = p0[0] + t * d[0]
        assert v_sl == pytest.approx(-Q_E / (2.0 * AF), rel=1e-6)

    def test_boundary_lines_straight(self):
        diag = stability_diagram(toy_caps())
        step = diag.v_sl[1] - diag.v_sl[0]
        for b in diag.boundaries:
            assert b.residual < step

    def test_boundary_points_sit_on_energy_degeneracy(self):
        caps = toy_caps()
        diag = stability_diagram(caps, n=51)
        line = next(b for b in diag.boundaries if b.x == 0)
        for p in (line.p0, line.p1):
            b = Bias(p[0], p[1])
            e0 = config_energy(caps, b, 0)
            e1 = config_energy(caps, b, 1)
            assert abs(e0 - e1) < 1e-25

    def test_periodicities_absent_in_featureless_window(self):
        diag = stability_diagram(toy_caps(), v_ranges=((-1e-3, 1e-3), (-1e-3, 1e-3)), n=21)
        assert diag.dv_sl is None and diag.theta_deg is None

    def test_explicit_window(self):
        w = 0.7
        diag = stability_diagram(toy_caps(), v_ranges=((-w, w), (-w, w)), n=41)
        assert diag.v_sl[0] == -w and diag.v_sl[-1] == w

    def test_min_grid_size(self):
        with pytest.raises(AnalysisError):
            stability_diagram(toy_caps(), n=1)


class TestTransferMetrics:
    def test_equal_periods_45_degrees(self):
        theta, _ = transfer_metrics(0.1, 0.1, 0.05)
        assert theta == 45.0

    def test_sqrt3_gives_60_degrees(self):
        theta, _ = transfer_metrics(1.0, math.sqrt(3.0), 1.0)
        assert theta == pytest.approx(60.0, abs=1e-12)

    def test_endpoint_dynamic_range_in_db(self):
        # 20 log10(8.36 V / 47.5 mV) = 44.91 dB
        _, db = transfer_metrics(8.36, 1.0, 0.0475)
        assert db == pytest.approx(20.0 * math.log10(8.36 / 0.0475), rel=1e-12)
        assert db == pytest.approx(44.91, abs=5e-3)

    def test_complementarity_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            a, b = rng.uniform(0.01, 10.0, 2)
            ta, _ = transfer_metrics(a, b, 1.0)
            tb, _ = transfer_metrics(b, a, 1.0)
            assert ta + tb == 90.0

    def test_nonpositive_inputs_rejected(self):
        with pytest.raises(AnalysisError):
            transfer_metrics(-1.0, 1.0, 1.0)
        with pytest.raises(AnalysisError):
            transfer_metrics(1.0, 1.0, 0.0)


class TestCoulombPeriod:
    def test_one_electron_per_100mV(self):
        assert coulomb_period(1.602176634 * AF) == pytest.approx(0.100, rel=1e-9)
        assert coulomb_period(16.02176634 * AF) == pytest.approx(0.010, rel=1e-9)

    def test_table_value(self):
        # e / 23.4 aF = 6.847 mV to four significant digits
        assert coulomb_period(23.4 * AF) * 1e3 == pytest.approx(6.847, abs=5e-4)

    def test_nonpositive_rejected(self):
        with pytest.raises(AnalysisError):
            coulomb_period(0.0)


def _tiny_sweep(jobs=1):
    spec = build_reference_device()
    opts = SolveOptions(epsilon_r=spec.epsilon_r)
    return misalign_sweep(spec, (-20.0, 20.0), (0.0, 0.0), 20.0,
                          opts=opts, h_max_nm=16.0, jobs=jobs, diagram_n=101)


class TestSweeps:
    def test_grid_complete_and_ordered(self):
        sweep = _tiny_sweep()
        assert [(r["dx_nm"], r["dy_nm"]) for r in sweep.rows] == \
            [(-20.0, 0.0), (0.0, 0.0), (20.0, 0.0)]
        assert all(r["status"] == "ok" for r in sweep.rows)

    def test_db_reference_is_map_minimum(self):
        sweep = _tiny_sweep()
        dbs = [r["dV_SL_dB"] for r in sweep.rows]
        assert min(dbs) == 0.0

    def test_parallel_matches_serial(self):
        s1 = _tiny_sweep(jobs=1)
        s2 = _tiny_sweep(jobs=4)
        for a, b in zip(s1.rows, s2.rows):
            assert a == b

    def test_aligned_cell_mirror_symmetry(self):
        sweep = _tiny_sweep()
        mid = sweep.rows[1]
        assert mid["C_SLd1_aF"] == pytest.approx(mid["C_SRd2_aF"], rel=0.02)
        assert mid["theta_deg"] == pytest.approx(45.0, abs=1.0)

    def test_theta_mirror_against_dx(self):
        sweep = _tiny_sweep()
        assert sweep.rows[0]["theta_deg"] + sweep.rows[2]["theta_deg"] == \
            pytest.approx(90.0, abs=0.5)

    def test_failed_cells_reported_not_interpolated(self):
        import json

        from dqdcap.geometry import loads_device

        cfg = {"boxes": [
            {"name": "dot1", "group": "d1", "role": "d1",
             "min_nm": [-70, -20, -30], "dims_nm": [40, 40, 10]},
            {"name": "dot2", "group": "d2", "role": "d2",
             "min_nm": [30, -20, -30], "dims_nm": [40, 40, 10]},
            {"name": "marker", "group": "m", "role": "other",
             "min_nm": [-140, -20, -30], "dims_nm": [40, 40, 10]},
        ]}
        spec = loads_device(json.dumps(cfg))
        # dx = -40 drives dot1 into the buried marker: that cell must fail
        sweep = misalign_sweep(spec, (-40.0, 0.0), (0.0, 0.0), 40.0,
                               opts=SolveOptions(epsilon_r=6.0), h_max_nm=16.0,
                               diagram_n=51)
        statuses = [r["status"] for r in sweep.rows]
        assert statuses[0] == "failed" and statuses[1] == "ok"
        assert "error" in sweep.rows[0]

    def test_dotsize_sweep_records_island_coupling(self):
        spec = build_reference_device()
        sweep = dotsize_sweep(spec, (20.0, 40.0), h_max_nm=16.0, diagram_n=51)
        assert [r["R_nm"] for r in sweep.rows] == [20.0, 40.0]
        for r in sweep.rows:
            assert r["status"] == "ok"
            assert r["C_d1i1_aF"] > 0
            assert 0.0 < r["delta_q_e"] < 0.5

    def test_bad_inputs_rejected(self):
        spec = build_reference_device()
        with pytest.raises(AnalysisError):
            dotsize_sweep(spec, (), h_max_nm=16.0)
        with pytest.raises(AnalysisError):
            dotsize_sweep(spec, (-5.0,), h_max_nm=16.0)


class TestEstimateMisalignment:
    def _map(self):
        sweep = _tiny_sweep()
        return sweep

    def test_round_trip_contains_generating_cell(self):
        sweep = self._map()
        row = sweep.rows[0]
        got = estimate_misalignment(row["theta_deg"], row["dV_SL_mV"] * MV, sweep)
        assert (row["dx_nm"], row["dy_nm"]) in got

    def test_theta_above_45_means_negative_dx(self):
        sweep = self._map()
        got = estimate_misalignment(58.0, sweep.rows[0]["dV_SL_mV"] * MV, sweep,
                                    theta_tol_deg=3.0, dv_rel_tol=0.5)
        assert got
        assert all(dx < 0 for dx, _ in got)

    def test_impossible_observation_empty(self):
        sweep = self._map()
        assert estimate_misalignment(89.0, 100.0, sweep) == set()


class TestCompareReport:
    def test_report_rows(self):
        entries = np.array([[30.0, -10.0], [-10.0, 40.0]]) * AF
        m = MaxwellMatrix(("i1", "g1"), entries, 0.0,
                          roles={"i1": "i1", "g1": "g1"})
        rep = compare_report(m, {"pairs": [
            {"a": "g1", "b": "i1", "measured_aF": 12.0, "sd_aF": 2.0}]})
        row = rep["pairs"][0]
        assert row["calculated_aF"] == pytest.approx(10.0)
        assert row["ratio"] == pytest.approx(10.0 / 12.0)
        assert row["deviation_sd"] == pytest.approx(-1.0)
        assert row["period_mV"] == pytest.approx(Q_E / (10.0 * AF) / MV)

    def test_unknown_conductor_rejected(self):
        m = MaxwellMatrix(("a",), np.array([[1.0]]) * AF, 0.0)
        with pytest.raises(AnalysisError):
            compare_report(m, {"pairs": [{"a": "a", "b": "nope"}]})


class TestPropertyInvariants:
    def test_diagram_periodicity_matches_degeneracy_spacing(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            caps = random_model_caps(rng, island=False)
            diag = stability_diagram(caps, n=151)
            if diag.dv_sl is None:
                continue
            # spacing of consecutive line intercepts is uniform for the
            # constant-interaction model
            ints = sorted(b.sl_intercept for b in diag.boundaries
                          if b.sl_intercept is not None)
            gaps = np.diff(ints)
            assert np.allclose(gaps, np.median(gaps), rtol=1e-6)
