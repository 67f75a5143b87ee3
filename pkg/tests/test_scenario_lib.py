import json

import numpy as np
import pytest

from consensus_mpc.jmls_core import discretize
from consensus_mpc.safety_barriers import is_safe
from consensus_mpc.scenario_lib import (
    HEX_GRAVITY,
    HEX_MASS,
    HEX_ROTOR_MAX,
    HEX_ROTOR_MIN,
    ScenarioFormatError,
    build_mineshaft,
    build_rendezvous,
    cwh_continuous,
    default_grid,
    hexacopter_hover_thrust,
    load_scenario,
    mineshaft_grid,
    rendezvous_grid,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


class TestCwh:
    def test_structure_and_values(self):
        n = 0.061
        cont = cwh_continuous(n)
        A, B = cont.A_cont, cont.B_cont
        assert A[3, 0] == pytest.approx(3 * n * n, abs=1e-15)
        assert A[3, 4] == pytest.approx(2 * n, abs=1e-15)
        assert A[4, 3] == pytest.approx(-2 * n, abs=1e-15)
        assert A[5, 2] == pytest.approx(-n * n, abs=1e-15)
        np.testing.assert_array_equal(A[0:3, 3:6], np.eye(3))
        # Everything else is structurally zero.
        mask = np.zeros((6, 6), dtype=bool)
        mask[0:3, 3:6] = np.eye(3, dtype=bool)
        mask[3, 0] = mask[3, 4] = mask[4, 3] = mask[5, 2] = True
        assert np.all(A[~mask] == 0.0)
        np.testing.assert_array_equal(B[0:3], np.zeros((3, 3)))
        np.testing.assert_array_equal(B[3:6], np.eye(3))

    def test_zero_mean_motion_limit(self):
        cont = cwh_continuous(1e-12)
        coupled = cont.A_cont.copy()
        coupled[0:3, 3:6] = 0.0
        assert np.max(np.abs(coupled)) <= 1e-11

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            cwh_continuous(0.0)


class TestRendezvousBundle:
    def test_table_parameters(self):
        b = build_rendezvous(0.101)
        assert b.model.n_modes == 2
        assert b.ocp.horizon_steps == 30
        assert b.dt == 10.0
        assert b.episode_steps == 28
        assert b.duration_s == 280.0
        np.testing.assert_array_equal(b.model.u_min, [-0.1] * 3)
        np.testing.assert_array_equal(b.model.u_max, [0.1] * 3)
        np.testing.assert_array_equal(
            np.diag(b.ocp.Q), [50, 50, 50, 0.1, 0.1, 0.1]
        )
        np.testing.assert_array_equal(b.ocp.R, 0.01 * np.eye(3))
        np.testing.assert_array_equal(b.x0, [0.01, 3.8, 0, 0, 0, 0])
        np.testing.assert_array_equal(b.x_ref[:3], [1.0, 1.0, 0.0])
        assert b.barriers.gamma == 0.05
        assert b.ocp.horizon_steps * b.dt == 300.0

    def test_x0_strictly_safe_with_expected_margins(self):
        b = build_rendezvous()
        values = sorted(b.barriers.values(b.x0))
        np.testing.assert_allclose(values, sorted([6.01, 5.99, 3.8, 0.2, 10, 10]))
        assert is_safe(b.barriers, b.x0)

    def test_modes_differ_only_through_mean_motion(self):
        b = build_rendezvous(0.101)
        expected = discretize(cwh_continuous(0.101), 10.0)
        np.testing.assert_array_equal(b.model.modes[1].A, expected.A)
        np.testing.assert_array_equal(b.model.modes[1].B, expected.B)

    def test_spectral_radius_marginally_stable(self):
        for n_p in np.arange(0.041, 0.1011, 0.01):
            b = build_rendezvous(round(float(n_p), 3))
            for mode in b.model.modes:
                radius = max(abs(np.linalg.eigvals(mode.A)))
                assert radius <= 1 + 1e-9


class TestMineshaftBundle:
    def test_dimensions_and_parameters(self):
        b = build_mineshaft()
        assert b.model.n_states == 12
        assert b.model.n_controls == 6
        assert b.model.n_modes == 3
        assert b.ocp.horizon_steps == 10
        assert b.dt == 0.05
        assert b.episode_steps == 80
        assert b.duration_s == 4.0
        np.testing.assert_allclose(
            np.diag(b.ocp.Q), [50.0] * 3 + [0.1] * 9
        )
        np.testing.assert_array_equal(b.x_ref[:3], [-0.7, 0.7, -5.0])

    def test_failure_modes_zero_one_actuator_column(self):
        b = build_mineshaft()
        B0 = b.model.modes[0].B
        for mode_idx, rotor in ((1, 0), (2, 1)):
            Bf = b.model.modes[mode_idx].B
            np.testing.assert_array_equal(Bf[:, rotor], np.zeros(12))
            keep = [c for c in range(6) if c != rotor]
            np.testing.assert_array_equal(Bf[:, keep], B0[:, keep])
            np.testing.assert_array_equal(b.model.modes[mode_idx].A, b.model.modes[0].A)

    def test_hover_thrust_strictly_inside_bounds(self):
        hover = hexacopter_hover_thrust()
        assert hover == pytest.approx(HEX_MASS * HEX_GRAVITY / 6)
        assert HEX_ROTOR_MIN < hover < HEX_ROTOR_MAX
        b = build_mineshaft()
        assert np.all(b.model.u_min < 0.0) and np.all(b.model.u_max > 0.0)
        np.testing.assert_allclose(b.model.u_max - b.model.u_min,
                                   np.full(6, HEX_ROTOR_MAX - HEX_ROTOR_MIN))

    def test_x0_safe_with_expected_margins(self):
        b = build_mineshaft()
        values = sorted(b.barriers.values(b.x0))
        np.testing.assert_allclose(values, [1.0, 1.0, 1.0, 1.0, 6.0])


class TestGrids:
    def test_rendezvous_grid_is_336(self):
        grid = rendezvous_grid()
        assert len(grid) == 336
        n_ps = sorted({c.n_offnominal for c in grid})
        assert n_ps == [0.041, 0.051, 0.061, 0.071, 0.081, 0.091, 0.101]
        assert sorted({c.switch_step for c in grid}) == [1, 6, 11, 16, 21, 26, 31, 36]
        assert sorted({c.detection_delay for c in grid}) == [0, 1, 2, 3, 4, 5]

    def test_mineshaft_grid_is_108(self):
        grid = mineshaft_grid()
        assert len(grid) == 108
        assert len({c.x0_xy for c in grid}) == 9
        assert sorted({c.switch_step for c in grid}) == [1, 14, 27, 40]
        assert sorted({c.detection_delay for c in grid}) == [0, 2, 4]

    def test_default_grid_dispatch(self):
        assert len(default_grid("rendezvous")) == 336
        assert len(default_grid("mineshaft")) == 108
        with pytest.raises(ValueError):
            default_grid("unknown")


class TestScenarioFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        for bundle in (build_rendezvous(0.071), build_mineshaft()):
            path = tmp_path / f"{bundle.name}.json"
            save_scenario(bundle, path)
            again = load_scenario(path)
            for a, b in zip(bundle.model.modes, again.model.modes):
                np.testing.assert_array_equal(a.A, b.A)
                np.testing.assert_array_equal(a.B, b.B)
            np.testing.assert_array_equal(bundle.x0, again.x0)
            np.testing.assert_array_equal(bundle.ocp.Q, again.ocp.Q)
            assert bundle.barriers.gamma == again.barriers.gamma
            assert bundle.success_tolerance == again.success_tolerance
            # A second serialization is byte-identical.
            assert json.dumps(scenario_to_dict(bundle)) == json.dumps(
                scenario_to_dict(again)
            )

    def test_malformed_files_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ScenarioFormatError, match="JSON"):
            load_scenario(bad)

        d = scenario_to_dict(build_rendezvous())
        del d["model"]
        with pytest.raises(ScenarioFormatError, match="model"):
            scenario_from_dict(d)

        d = scenario_to_dict(build_rendezvous())
        d["format"] = "something else"
        with pytest.raises(ScenarioFormatError, match="format"):
            scenario_from_dict(d)

        d = scenario_to_dict(build_rendezvous())
        d["model"]["omega"] = [[0.5, 0.0], [0.0, 1.0]]
        with pytest.raises(ScenarioFormatError):
            scenario_from_dict(d)

        d = scenario_to_dict(build_rendezvous())
        d["model"]["modes"][0]["A"] = [[1.0]]
        with pytest.raises(ScenarioFormatError, match="dimension"):
            scenario_from_dict(d)

    def test_x0_outside_safe_set_rejected(self):
        d = scenario_to_dict(build_rendezvous())
        d["x0"] = [0.0, 4.5, 0.0, 0.0, 0.0, 0.0]
        with pytest.raises(ScenarioFormatError, match="safe"):
            scenario_from_dict(d)
