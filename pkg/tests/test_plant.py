"""Tests for the synthetic constant-curvature arm."""

import math

import numpy as np
import pytest

from softarm.plant import (
    BeaconGeometry,
    OverinflationError,
    PlantConfig,
    PlantError,
    PlantState,
    ScheduleError,
    arc_transform,
    beacon_world_positions,
    execute_schedule,
    initial_state,
    load_plant_config,
    parse_schedule,
    reset,
    save_plant_config,
    segment_arcs,
    step_deflate,
    step_inflate,
    tip_pose,
    with_segments,
)
from softarm.vision import Pose, rotation_from_euler


@pytest.fixture
def config() -> PlantConfig:
    return PlantConfig()


def drive(config, fills):
    """State with the given bladder fills applied as single inflations."""
    state = initial_state(config)
    for bladder, ms in fills:
        state = step_inflate(config, state, bladder, ms)
    return state


class TestConfig:
    def test_total_height_three_segments(self, config):
        assert config.total_height_mm == 390.0

    def test_total_height_one_segment(self, config):
        assert with_segments(config, 1).total_height_mm == 150.0

    def test_rejects_bad_factors(self):
        with pytest.raises(ValueError):
            PlantConfig(deflation_factor=0.9)
        with pytest.raises(ValueError):
            PlantConfig(hysteresis_factor=0.5)
        with pytest.raises(ValueError):
            PlantConfig(n_segments=0)

    def test_config_file_round_trip(self, tmp_path, config):
        path = tmp_path / "plant.json"
        save_plant_config(config, path)
        assert load_plant_config(path) == config

    def test_config_rejects_unknown_fields(self, tmp_path):
        path = tmp_path / "plant.json"
        path.write_text('{"segment_count": 3}')
        with pytest.raises(ValueError, match="unknown plant config"):
            load_plant_config(path)


class TestReset:
    def test_zeroes_everything(self, config):
        state = drive(config, [(0, 400), (4, 250)])
        cleared = reset(state)
        assert cleared.fill == (0.0,) * 9
        assert cleared.cumulative == (0.0,) * 9

    def test_straight_arm_pose(self, config):
        pose = tip_pose(config, initial_state(config))
        assert np.allclose(pose.position, [0.0, 0.0, 390.0])
        assert np.array_equal(pose.orientation, np.eye(3))

    def test_idempotent(self, config):
        state = drive(config, [(2, 100)])
        assert reset(reset(state)) == reset(state)


class TestInflate:
    def test_first_inflation_is_direct(self, config):
        state = drive(config, [(0, 500)])
        assert state.fill[0] == 500.0

    def test_resumed_inflation_is_derated(self, config):
        state = drive(config, [(0, 500), (0, 200)])
        assert abs(state.fill[0] - (500.0 + 200.0 / 1.2)) < 1e-9

    def test_cumulative_budget_enforced(self, config):
        state = drive(config, [(0, 900)])
        with pytest.raises(OverinflationError):
            step_inflate(config, state, 0, 200)

    def test_budget_counts_commands_not_fill(self, config):
        # Deflation does not refund the inflation budget.
        state = drive(config, [(0, 800)])
        state = step_deflate(config, state, 0, 1160)
        with pytest.raises(OverinflationError):
            step_inflate(config, state, 0, 300)

    def test_fill_clamped_at_max(self, config):
        state = drive(config, [(0, 1000)])
        state = PlantState(fill=state.fill, cumulative=(0.0,) * 9)
        state = step_inflate(config, state, 0, 600)
        assert state.fill[0] == config.max_fill_ms

    def test_negative_duration_rejected(self, config):
        with pytest.raises(ValueError):
            step_inflate(config, initial_state(config), 0, -1)

    def test_bladder_range_checked(self, config):
        with pytest.raises(PlantError, match="out of range"):
            step_inflate(config, initial_state(config), 9, 100)


class TestDeflate:
    def test_compensated_deflation_restores_zero(self, config):
        state = drive(config, [(3, 300)])
        state = step_deflate(config, state, 3, 435)
        assert abs(state.fill[3]) < 1e-9

    def test_deflating_empty_bladder_is_noop(self, config):
        state = step_deflate(config, initial_state(config), 5, 250)
        assert state.fill[5] == 0.0

    def test_asymmetry_visible(self, config):
        state = drive(config, [(0, 300)])
        state = step_deflate(config, state, 0, 300)
        assert abs(state.fill[0] - (300.0 - 300.0 / 1.45)) < 1e-9

    def test_compensated_round_trip_property(self, config):
        rng = np.random.default_rng(3)
        for _ in range(100):
            t = rng.uniform(1.0, 1000.0)
            state = step_inflate(config, initial_state(config), 4, t)
            state = step_deflate(config, state, 4, 1.45 * t)
            assert abs(state.fill[4]) < 1e-9


class TestArcs:
    def test_full_single_bladder_bends_forty_degrees(self, config):
        state = drive(config, [(3, 1000)])
        kappa, _ = segment_arcs(config, state)[1]
        assert abs(math.degrees(kappa * config.segment_length_mm) - 40.0) < 1e-9

    def test_equal_fills_bisect_azimuths(self, config):
        state = drive(config, [(0, 600), (1, 600)])
        _, theta = segment_arcs(config, state)[0]
        assert abs(theta - math.radians(150.0)) < 1e-9

    def test_three_active_bladders_rejected(self, config):
        state = drive(config, [(0, 100), (1, 100), (2, 100)])
        with pytest.raises(PlantError, match="three inflated"):
            segment_arcs(config, state)

    def test_arc_transform_straight(self):
        R, p = arc_transform(0.0, 1.2, 100.0)
        assert np.array_equal(R, np.eye(3))
        assert np.array_equal(p, [0.0, 0.0, 100.0])

    def test_arc_transform_quarter_circle(self):
        kappa = math.pi / 2 / 100.0
        R, p = arc_transform(kappa, 0.0, 100.0)
        r = 1.0 / kappa
        assert np.allclose(p, [r, 0.0, r])
        assert np.max(np.abs(R - rotation_from_euler(0.0, 90.0, 0.0))) < 1e-9


class TestTipPose:
    def test_monotone_bend_under_stepped_inflation(self, config):
        state = initial_state(config)
        last = -1.0
        for _ in range(10):
            state = step_inflate(config, state, 0, 100)
            kappa, _ = segment_arcs(config, state)[0]
            assert kappa >= last
            last = kappa

    def test_single_segment_sphericity(self, config):
        # Independent arc-endpoint predictor for the one-segment chain.
        cfg = with_segments(config, 1)
        for fill in (100.0, 400.0, 777.0, 1000.0):
            state = drive(cfg, [(1, fill)])
            pose = tip_pose(cfg, state)
            kappa = cfg.response(fill)
            bend = kappa * cfg.segment_length_mm
            radius = 1.0 / kappa
            az = math.radians(cfg.bladder_azimuths_deg[1])
            in_plane = np.array(
                [radius * (1 - math.cos(bend)), 0.0, radius * math.sin(bend)]
            )
            ct, st = math.cos(az), math.sin(az)
            Rz = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
            tangent = Rz @ np.array([math.sin(bend), 0.0, math.cos(bend)])
            predicted = (
                np.array([0.0, 0.0, cfg.base_connector_mm])
                + Rz @ in_plane
                + cfg.rod_length_mm * tangent
            )
            assert np.linalg.norm(pose.position - predicted) < 1e-6

    def test_deterministic_with_seed(self):
        cfg = PlantConfig(process_noise_sd_mm=2.0)
        poses = []
        for _ in range(2):
            rng = np.random.default_rng(99)
            state = drive(cfg, [(0, 500), (4, 300)])
            poses.append(tip_pose(cfg, state, rng=rng))
        assert np.array_equal(poses[0].position, poses[1].position)

    def test_noise_disabled_without_rng(self):
        cfg = PlantConfig(process_noise_sd_mm=2.0)
        state = drive(cfg, [(0, 500)])
        assert np.array_equal(tip_pose(cfg, state).position, tip_pose(cfg, state).position)


class TestPayload:
    def test_zero_payload_is_reference(self, config):
        state = drive(config, [(0, 700), (4, 400)])
        a = tip_pose(config, state, payload_g=0.0)
        b = tip_pose(config, state, payload_g=0.0)
        assert np.array_equal(a.position, b.position)

    def test_displacement_grows_with_payload(self, config):
        commands = [
            [(0, 800), (1, 300), (3, 500), (7, 600)],
            [(2, 900), (4, 700), (8, 400)],
            [(0, 600), (5, 500), (6, 700)],
        ]
        disp = {}
        for payload in (0.0, 55.0, 155.0):
            total = 0.0
            for fills in commands:
                state = drive(config, fills)
                base = tip_pose(config, state, payload_g=0.0).position
                loaded = tip_pose(config, state, payload_g=payload).position
                total += float(np.linalg.norm(loaded - base))
            disp[payload] = total / len(commands)
        assert disp[0.0] == 0.0
        assert disp[155.0] > disp[55.0] > 0.0

    def test_straight_arm_immune_to_payload(self, config):
        state = initial_state(config)
        pose = tip_pose(config, state, payload_g=155.0)
        assert np.allclose(pose.position, [0.0, 0.0, 390.0])


class TestBeacon:
    def test_identity_pose_returns_offsets(self):
        geometry = BeaconGeometry()
        pose = Pose(position=[0.0, 0.0, 0.0], orientation=np.eye(3))
        r_g, r_r, r_b = beacon_world_positions(pose, geometry)
        assert np.array_equal(r_g, [0.0, 0.0, 0.0])
        assert np.array_equal(r_r, [40.0, 0.0, 0.0])
        assert np.array_equal(r_b, [0.0, 40.0, 0.0])

    def test_translation_only(self):
        pose = Pose(position=[5.0, -2.0, 390.0], orientation=np.eye(3))
        r_g, r_r, r_b = beacon_world_positions(pose)
        assert np.array_equal(r_g, [5.0, -2.0, 390.0])
        assert np.array_equal(r_r, [45.0, -2.0, 390.0])
        assert np.array_equal(r_b, [5.0, 38.0, 390.0])

    def test_rigidity_under_random_poses(self):
        rng = np.random.default_rng(17)
        ref = beacon_world_positions(Pose(position=np.zeros(3), orientation=np.eye(3)))
        ref_d = [np.linalg.norm(ref[i] - ref[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
        for _ in range(200):
            R = rotation_from_euler(
                rng.uniform(-180, 180), rng.uniform(-89, 89), rng.uniform(-180, 180)
            )
            pose = Pose(position=rng.uniform(-100, 100, 3), orientation=R)
            pts = beacon_world_positions(pose)
            for (i, j), d0 in zip(((0, 1), (0, 2), (1, 2)), ref_d):
                assert abs(np.linalg.norm(pts[i] - pts[j]) - d0) < 1e-9

    def test_ninety_degree_yaw(self):
        pose = Pose(position=[0.0, 0.0, 100.0], orientation=rotation_from_euler(90, 0, 0))
        _, r_r, r_b = beacon_world_positions(pose)
        assert np.allclose(r_r, [0.0, 40.0, 100.0])
        assert np.allclose(r_b, [-40.0, 0.0, 100.0])

    def test_collinear_geometry_rejected(self):
        with pytest.raises(ValueError, match="non-collinear"):
            BeaconGeometry(red_offset_mm=(40.0, 0.0, 0.0), blue_offset_mm=(80.0, 0.0, 0.0))


class TestSchedule:
    def test_parse_and_execute(self, config):
        text = """
        # warm-up
        INF 0 300
        DEF 0 435
        RESET
        """
        commands = parse_schedule(text)
        assert commands == [("INF", 0, 300.0), ("DEF", 0, 435.0), ("RESET",)]
        trace = execute_schedule(config, commands)
        assert abs(trace[1][1].fill[0]) < 1e-9
        assert np.allclose(trace[2][2].position, [0.0, 0.0, 390.0])

    def test_compensated_pair_returns_to_start(self, config):
        trace = execute_schedule(config, parse_schedule("INF 0 300\nDEF 0 435"))
        assert np.allclose(trace[-1][2].position, [0.0, 0.0, 390.0])

    def test_malformed_line_reports_number(self):
        with pytest.raises(ScheduleError, match="line 2"):
            parse_schedule("INF 0 300\nWOBBLE 1 2")

    def test_bad_arity(self):
        with pytest.raises(ScheduleError, match="line 1"):
            parse_schedule("INF 0")

    def test_negative_duration(self):
        with pytest.raises(ScheduleError, match="nonnegative"):
            parse_schedule("DEF 1 -5")

    def test_out_of_range_bladder_fails_at_execution(self, config):
        commands = parse_schedule("INF 9 100")
        with pytest.raises(PlantError, match="out of range"):
            execute_schedule(config, commands)
