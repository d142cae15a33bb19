import json
import math

import numpy as np
import pytest

from gneva.dataio import (
    AgentState,
    AgentTrack,
    MapPolyline,
    Scenario,
    SynthConfig,
    load_scenario,
    mask_map_by_radius,
    save_scenario,
    synth_generate,
    to_target_frame,
    vectorize,
)
from gneva.encoders import EncoderConfig
from gneva.errors import MissingHorizonState, ParseError, ValidationError


def minimal_scenario(h=10, t=30):
    states = [
        AgentState(t=i, x=float(i), y=0.0, heading=0.0, vx=10.0, vy=0.0)
        for i in range(1, h + t + 1)
    ]
    return Scenario(
        scenario_id="s0",
        dt=0.1,
        H=h,
        T=t,
        target_id="a0",
        agents=[AgentTrack(id="a0", kind="vehicle", states=states)],
        map=[MapPolyline(id="l0", kind="lane_center", points=[[-5.0, 0.0], [50.0, 0.0]])],
    )


class TestSchema:
    def test_round_trip_is_identity(self, tmp_path):
        s = minimal_scenario()
        path = tmp_path / "s0.json"
        save_scenario(s, path)
        loaded = load_scenario(path)
        assert loaded.scenario_id == s.scenario_id
        assert loaded.dt == s.dt and loaded.H == s.H and loaded.T == s.T
        assert len(loaded.agents) == 1
        for a, b in zip(loaded.agents[0].states, s.agents[0].states):
            assert (a.t, a.x, a.y, a.heading, a.vx, a.vy) == (b.t, b.x, b.y, b.heading, b.vx, b.vy)
        assert np.array_equal(loaded.map[0].points, s.map[0].points)

    def test_missing_target_rejected(self, tmp_path):
        s = minimal_scenario()
        s.target_id = "ghost"
        path = tmp_path / "bad.json"
        save_scenario(s, path)
        with pytest.raises(ValidationError):
            load_scenario(path)

    def test_malformed_json_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_scenario(path)

    def test_wrong_format_version(self, tmp_path):
        s = minimal_scenario()
        path = tmp_path / "v9.json"
        save_scenario(s, path)
        doc = json.loads(path.read_text())
        doc["format_version"] = 9
        path.write_text(json.dumps(doc))
        with pytest.raises((ParseError, ValidationError)):
            load_scenario(path)

    def test_goal_is_position_at_h_plus_t(self):
        s = minimal_scenario(h=10, t=30)
        assert s.goal() == pytest.approx([40.0, 0.0])


class TestTargetFrame:
    def test_target_pose_becomes_origin(self):
        rng = np.random.default_rng(0)
        for s in synth_generate(SynthConfig(n=5, seed=3), "straight"):
            proj, _ = to_target_frame(s)
            state = proj.target().state_at(proj.H)
            assert abs(state.x) < 1e-9 and abs(state.y) < 1e-9
            assert abs(state.heading % (2 * math.pi)) < 1e-9 or abs(
                state.heading % (2 * math.pi) - 2 * math.pi
            ) < 1e-9

    def test_inverse_recovers_coordinates(self):
        for s in synth_generate(SynthConfig(n=3, seed=4), "merge"):
            proj, transform = to_target_frame(s)
            back = transform.inverse().apply_scenario(proj)
            for a, b in zip(back.agents, s.agents):
                for sa, sb in zip(a.states, b.states):
                    assert sa.x == pytest.approx(sb.x, abs=1e-9)
                    assert sa.y == pytest.approx(sb.y, abs=1e-9)
            for pa, pb in zip(back.map, s.map):
                assert np.max(np.abs(pa.points - pb.points)) < 1e-9

    def test_rigid_motion_preserves_distances(self):
        rng = np.random.default_rng(5)
        s = synth_generate(SynthConfig(n=1, seed=6), "turn")[0]
        proj, _ = to_target_frame(s)
        pts_before = np.concatenate([p.points for p in s.map])
        pts_after = np.concatenate([p.points for p in proj.map])
        for _ in range(50):
            i, j = rng.integers(0, len(pts_before), size=2)
            d0 = np.linalg.norm(pts_before[i] - pts_before[j])
            d1 = np.linalg.norm(pts_after[i] - pts_after[j])
            assert d1 == pytest.approx(d0, abs=1e-9)

    def test_missing_horizon_state(self):
        s = minimal_scenario()
        s.agents[0].states = [st for st in s.agents[0].states if st.t != s.H]
        with pytest.raises(MissingHorizonState):
            to_target_frame(s)


class TestVectorize:
    def test_polyline_vector_count(self):
        s = minimal_scenario()
        cfg = EncoderConfig()
        proj, _ = to_target_frame(s)
        vs = vectorize(proj, cfg)
        assert vs.map_polylines[0].shape == (1, 8)  # 2 points -> 1 vector
        assert vs.target.shape == (s.H - 1, 10)

    def test_single_state_agent_has_no_vectors(self):
        s = minimal_scenario()
        s.agents.append(
            AgentTrack(id="solo", kind="pedestrian", states=[AgentState(2, 1.0, 1.0, 0.0, 0.0, 0.0)])
        )
        proj, _ = to_target_frame(s)
        vs = vectorize(proj, EncoderConfig())
        assert len(vs.surrounding) == 0

    def test_world_frame_invariance(self):
        # Same target-frame scene regardless of the world pose it was saved in.
        from gneva.dataio import RigidTransform

        s = synth_generate(SynthConfig(n=1, seed=7), "merge")[0]
        cfg = EncoderConfig()
        base, _ = to_target_frame(s)
        moved = RigidTransform(angle=1.1, tx=40.0, ty=-3.0).apply_scenario(s)
        again, _ = to_target_frame(moved)
        va, vb = vectorize(base, cfg), vectorize(again, cfg)
        assert np.allclose(va.target, vb.target, atol=1e-9)
        for a, b in zip(va.map_polylines, vb.map_polylines):
            assert np.allclose(a, b, atol=1e-9)

    def test_caps_respected(self):
        s = synth_generate(SynthConfig(n=1, seed=8), "merge")[0]
        proj, _ = to_target_frame(s)
        cfg = EncoderConfig(max_polylines=2, max_vectors_per_polyline=5)
        vs = vectorize(proj, cfg)
        assert len(vs.map_polylines) <= 2
        assert all(len(v) <= 5 for v in vs.map_polylines)
        assert len(vs.target) <= 5


class TestMaskMap:
    def test_radius_zero_empties_map(self):
        s, _ = to_target_frame(synth_generate(SynthConfig(n=1, seed=9), "turn")[0])
        assert mask_map_by_radius(s, 0.0).map == []

    def test_infinite_radius_is_identity(self):
        s, _ = to_target_frame(synth_generate(SynthConfig(n=1, seed=10), "turn")[0])
        masked = mask_map_by_radius(s, math.inf)
        assert [p.id for p in masked.map] == [p.id for p in s.map]

    def test_segment_distance_thresholds(self):
        seg = MapPolyline(id="x", kind="lane_center", points=[[3.0, 0.0], [10.0, 0.0]])
        s = minimal_scenario()
        s.map = [seg]
        proj, _ = to_target_frame(s)
        # target at step H is at (10, 0) world; use raw scenario in canonical frame instead
        s2 = Scenario(
            scenario_id="m",
            dt=0.1,
            H=s.H,
            T=s.T,
            target_id="a0",
            agents=s.agents,
            map=[seg],
        )
        # place the disc at the origin by constructing a target-frame scenario directly
        assert len(mask_map_by_radius(s2, 5.0).map) == 1
        assert len(mask_map_by_radius(s2, 2.0).map) == 0

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(11)
        scenes = synth_generate(SynthConfig(n=20, seed=12), "merge")
        for s in scenes:
            proj, _ = to_target_frame(s)
            r1, r2 = sorted(rng.uniform(0.0, 40.0, size=2))
            kept1 = {p.id for p in mask_map_by_radius(proj, r1).map}
            kept2 = {p.id for p in mask_map_by_radius(proj, r2).map}
            assert kept1 <= kept2


class TestSynthGenerate:
    def test_deterministic(self):
        a = synth_generate(SynthConfig(n=4, seed=13), "straight")
        b = synth_generate(SynthConfig(n=4, seed=13), "straight")
        for sa, sb in zip(a, b):
            assert sa.scenario_id == sb.scenario_id
            for ta, tb in zip(sa.agents, sb.agents):
                for x, y in zip(ta.states, tb.states):
                    assert (x.x, x.y, x.vx, x.vy) == (y.x, y.y, y.vx, y.vy)

    def test_straight_goal_near_constant_velocity(self):
        for s in synth_generate(SynthConfig(n=10, seed=14), "straight"):
            proj, _ = to_target_frame(s)
            state = proj.target().state_at(proj.H)
            v = math.hypot(state.vx, state.vy)
            expected = v * proj.T * proj.dt
            goal = proj.goal()
            assert abs(goal[0] - expected) < 0.25 * expected
            assert abs(goal[1]) < 2.0

    def test_turn_goals_bimodal(self):
        goals = []
        for s in synth_generate(SynthConfig(n=200, seed=15), "turn"):
            proj, _ = to_target_frame(s)
            goals.append(proj.goal())
        goals = np.array(goals)
        left = goals[goals[:, 1] > 0]
        right = goals[goals[:, 1] < 0]
        assert len(left) > 40 and len(right) > 40
        assert np.linalg.norm(left.mean(axis=0) - right.mean(axis=0)) > 5.0

    def test_all_kinds_validate(self):
        for kind in ("straight", "turn", "merge"):
            scenes = synth_generate(SynthConfig(n=3, seed=16), kind)
            assert len(scenes) == 3
            for s in scenes:
                s.validate()
                assert s.goal() is not None

    def test_n_must_be_positive(self):
        with pytest.raises(ValidationError):
            SynthConfig(n=0, seed=1)
