import math

import numpy as np
import pytest

from torquelab import (EnvConfig, RaceEnv, OBS_DIM, ACTIVE_4WD, PASSIVE_4WD,
                       progress_reward, action_penalty, check_termination,
                       generate_oval, generate_straight, motor_torque_limit)
from conftest import progress_only_config


# ---------------------------------------------------------------------------
# reward pieces
# ---------------------------------------------------------------------------

def test_progress_reward_arithmetic():
    assert progress_reward(101.5, 100.0) == pytest.approx(1.5, abs=1e-12)
    assert progress_reward(55.0, 55.0) == 0.0
    assert progress_reward(99.0, 100.0) == pytest.approx(-1.0, abs=1e-12)


def test_progress_reward_lap_wrap(oval_track):
    env = RaceEnv(oval_track, config=EnvConfig(initial_speed=20.0))
    env.reset()
    L = oval_track.total_length
    # drive across the start/finish line; unwrapped progress keeps growing
    total = 0.0
    crossed_raw_drop = False
    prev_raw = env.s
    while env.episode_dist < 1.5 and not env.terminated:
        res = env.step(np.array([np.clip(-1.2 * env.lateral_offset
                                         - 2.0 * env.heading_error, -1, 1),
                                 0.3, 0.3, 0.3, 0.3]))
        total += res.info["r_progr"]
        if env.s < prev_raw - L / 2:
            crossed_raw_drop = True  # raw s wrapped from ~L to ~0
        prev_raw = env.s
    # cumulative unwrapped progress telescopes to episode distance
    assert total == pytest.approx(env.episode_dist, abs=1e-9)
    assert not crossed_raw_drop  # sanity: did not complete a lap in 1.5 m


@pytest.mark.parametrize("a, expected", [
    (np.zeros(5), 0.0),
    ([3.0], 0.0),          # hinge boundary: p_sc * (p_bnd - 1) = 15 * 0.2
    ([18.0], 1.0),         # (18/15 - 0.2)^2
    ([-18.0], 1.0),        # odd input, same penalty
])
def test_action_penalty_hinged(a, expected):
    assert action_penalty(a, 15.0, 1.2, "hinged") == pytest.approx(expected, abs=1e-12)


def test_action_penalty_literal_at_zero():
    assert action_penalty([0.0], 15.0, 1.2, "literal") == pytest.approx(0.04, abs=1e-12)
    assert action_penalty(np.zeros(5), 15.0, 1.2, "literal") == pytest.approx(0.2, abs=1e-12)


def test_action_penalty_sums_components():
    v = action_penalty([18.0, -18.0, 0.0], 15.0, 1.2, "hinged")
    assert v == pytest.approx(2.0, abs=1e-12)


# ---------------------------------------------------------------------------
# termination table
# ---------------------------------------------------------------------------

def _term(dist=0.0, offset=0.0, heading=0.0, vx=1.0, damage=0.0,
          timestep=1, ep_reward=1.0, cfg=None, finish=3900.0):
    cfg = cfg or EnvConfig()
    return check_termination(dist, offset, heading, vx, damage, timestep,
                             ep_reward, cfg, finish)


def test_termination_finish():
    assert _term(dist=3950.0) == ("finish", 100.0)


def test_termination_off_track():
    assert _term(offset=1.3) == ("off_track", -10.0)
    assert _term(offset=-1.3) == ("off_track", -10.0)
    assert _term(offset=1.19) == ("none", 0.0)


def test_termination_turned_back_default_and_literal():
    assert _term(heading=math.pi / 2 + 0.01) == ("turned_back", -10.0)
    assert _term(heading=-math.pi / 2 - 0.01) == ("turned_back", -10.0)
    assert _term(heading=-0.3) == ("none", 0.0)  # default tolerates sign
    literal = EnvConfig(turned_back_literal=True)
    assert _term(heading=-0.01, cfg=literal) == ("turned_back", -10.0)


def test_termination_damage_and_backwards():
    assert _term(damage=1.0) == ("damage", -10.0)
    assert _term(vx=-0.1) == ("backwards", -10.0)


def test_termination_low_progress():
    assert _term(timestep=501, ep_reward=-5.0) == ("low_progress", -10.0)
    assert _term(timestep=500, ep_reward=-5.0) == ("none", 0.0)
    assert _term(timestep=501, ep_reward=0.5) == ("none", 0.0)


def test_termination_priority_order():
    # finish wins over everything else
    assert _term(dist=4000.0, offset=2.0, heading=3.0, vx=-1.0,
                 damage=5.0, timestep=600, ep_reward=-9.0)[0] == "finish"
    # off_track next
    assert _term(offset=2.0, heading=3.0, vx=-1.0, damage=5.0)[0] == "off_track"
    assert _term(heading=3.0, vx=-1.0, damage=5.0)[0] == "turned_back"
    assert _term(vx=-1.0, damage=5.0)[0] == "damage"


# ---------------------------------------------------------------------------
# observation
# ---------------------------------------------------------------------------

def test_observation_scales(straight_track, params):
    from torquelab import build_observation, VehicleState
    cfg = EnvConfig()
    state = VehicleState(x=20.0, y=0.0, yaw=0.0, vx=60.0, vy=-30.0,
                         yaw_rate=math.pi / 2,
                         omega=np.full(4, 80.0 / params.wheel_radius),
                         ax=50.0, ay=-100.0)
    obs = build_observation(straight_track, params, state, 55.0, cfg)
    assert obs.shape == (OBS_DIM,)
    assert obs[23] == pytest.approx(60.0 / 300.0, abs=1e-12)   # speed_x = 0.2
    assert obs[24] == pytest.approx(-0.1, abs=1e-12)
    np.testing.assert_allclose(obs[17:21], 1.0, atol=1e-12)    # 80 / 80
    assert obs[21] == pytest.approx(55.0 / straight_track.total_length, abs=1e-12)
    assert obs[25] == pytest.approx(0.5, abs=1e-12)
    assert obs[26] == pytest.approx(0.5, abs=1e-12)
    assert obs[27] == pytest.approx(-1.0, abs=1e-12)
    # lidar on the centerline of a 10 m wide straight: +/-90 deg rays see 5 m
    assert obs[0] == pytest.approx(5.0 / 300.0, abs=1e-12)
    assert obs[16] == pytest.approx(5.0 / 300.0, abs=1e-12)


def test_observation_angle_wraps_to_unit(straight_track, params):
    from torquelab import build_observation, VehicleState
    state = VehicleState(x=20.0, yaw=math.pi)  # facing straight back
    obs = build_observation(straight_track, params, state, 0.0, EnvConfig())
    assert obs[22] == pytest.approx(1.0, abs=1e-12)  # wrapped to (-pi, pi] -> +pi


def test_reset_deterministic_and_symmetric(straight_env):
    a = straight_env.reset(seed=7)
    b = straight_env.reset(seed=7)
    assert np.array_equal(a, b)
    assert a[21] == 0.0 and a[22] == 0.0
    np.testing.assert_allclose(a[0:8], a[16:8:-1], atol=1e-12)


def test_mode_parity_observation_layout(straight_track):
    active = RaceEnv(straight_track, config=EnvConfig(actuation_mode=ACTIVE_4WD))
    passive = RaceEnv(straight_track, config=EnvConfig(actuation_mode=PASSIVE_4WD))
    oa = active.reset()
    op = passive.reset()
    assert oa.shape == op.shape == (OBS_DIM,)
    assert np.array_equal(oa, op)  # same start state, same layout
    assert active.action_dim == 5 and passive.action_dim == 2
    ra = active.step(np.array([0.0, 0.5, 0.5, 0.5, 0.5]))
    rp = passive.step(np.array([0.0, 0.5]))
    # identical reward arithmetic: both are progress - penalty here
    for res in (ra, rp):
        assert res.reward == res.info["r_progr"] + res.info["r_ter"] - res.info["r_act"]


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def test_substep_count_default():
    cfg = EnvConfig()
    assert cfg.n_substeps == 25


def test_agent_dt_must_be_multiple():
    with pytest.raises(ValueError):
        EnvConfig(agent_dt=0.05, physics_dt=0.003)


def test_step_reward_decomposition_exact(straight_env, rng):
    straight_env.reset()
    for _ in range(30):
        action = rng.uniform(-1.5, 1.5, size=5)
        res = straight_env.step(action)
        assert res.reward == res.info["r_progr"] + res.info["r_ter"] - res.info["r_act"]
        if res.terminated:
            break


def test_progress_telescoping(straight_env):
    straight_env.reset()
    total = 0.0
    for _ in range(80):
        res = straight_env.step(np.array([0.0, 0.8, 0.8, 0.8, 0.8]))
        total += res.info["r_progr"]
        if res.terminated:
            break
    assert total == pytest.approx(straight_env.episode_dist, abs=1e-9)


def test_zero_action_rolling_reward_is_progress(straight_track):
    cfg = EnvConfig(initial_speed=15.0)
    env = RaceEnv(straight_track, config=cfg)
    env.reset()
    res = env.step(np.zeros(5))
    assert res.info["r_act"] == 0.0
    assert res.info["r_ter"] == 0.0
    assert res.reward == res.info["r_progr"]
    assert res.reward > 0.0


def test_clamped_actuation_raw_penalty(straight_track, params):
    env = RaceEnv(straight_track, config=EnvConfig(initial_speed=10.0))
    env.reset()
    res = env.step(np.array([2.0, 0.0, 0.0, 0.0, 0.0]))
    # steering actuated at the +1 clamp
    assert res.info["steer_cmd"] == pytest.approx(params.max_steer)
    assert res.info["steer_norm"] == 1.0
    # penalty computed from the raw 2.0 (hinged: still inside the bound)
    assert res.info["r_act"] == pytest.approx(action_penalty([2.0, 0, 0, 0, 0], 15, 1.2))


def test_step_after_termination_raises(straight_track):
    env = RaceEnv(straight_track, config=EnvConfig(finish_distance=2.0))
    env.reset()
    res = None
    for _ in range(200):
        res = env.step(np.array([0.0, 1.0, 1.0, 1.0, 1.0]))
        if res.terminated:
            break
    assert res.terminated
    with pytest.raises(RuntimeError):
        env.step(np.zeros(5))


def test_step_rejects_bad_actions(straight_env):
    straight_env.reset()
    with pytest.raises(ValueError):
        straight_env.step(np.zeros(3))
    with pytest.raises(ValueError):
        straight_env.step(np.array([0.0, np.nan, 0.0, 0.0, 0.0]))


def test_termination_exclusive_and_exact_kind(straight_track):
    env = RaceEnv(straight_track, config=EnvConfig(finish_distance=10.0))
    env.reset()
    kinds = []
    for _ in range(200):
        res = env.step(np.array([0.0, 1.0, 1.0, 1.0, 1.0]))
        if res.termination_kind != "none":
            kinds.append(res.termination_kind)
        assert res.terminated == (res.termination_kind != "none")
        if res.terminated:
            break
    assert kinds == ["finish"]
    assert "lap_time" in res.info


def test_determinism_fixed_action_sequence(straight_track, rng):
    actions = rng.uniform(-1, 1, size=(50, 5))
    outs = []
    for _ in range(2):
        env = RaceEnv(straight_track, config=EnvConfig(seed=3))
        env.reset()
        trace = []
        for a in actions:
            res = env.step(a)
            trace.append((res.observation.tobytes(), res.reward))
            if res.terminated:
                break
        outs.append(trace)
    assert outs[0] == outs[1]


def test_backwards_termination(straight_track):
    env = RaceEnv(straight_track, config=EnvConfig(initial_speed=1.0))
    env.reset()
    res = None
    for _ in range(200):
        res = env.step(np.array([0.0, -1.0, -1.0, -1.0, -1.0]))
        if res.terminated:
            break
    assert res.terminated and res.termination_kind == "backwards"


def test_off_track_termination(oval_track):
    env = RaceEnv(oval_track, config=EnvConfig(initial_speed=25.0))
    env.reset()
    res = None
    for _ in range(500):
        res = env.step(np.array([0.0, 0.5, 0.5, 0.5, 0.5]))  # never steers
        if res.terminated:
            break
    assert res.terminated
    assert res.termination_kind in ("off_track", "turned_back")
    assert abs(res.info["lateral_offset"]) > 1.0


def test_low_progress_termination(straight_track):
    cfg = EnvConfig(low_progress_steps=30)
    env = RaceEnv(straight_track, config=cfg)
    env.reset()
    res = None
    for _ in range(200):
        # stand still but pay the literal-mode-style penalty via raw outputs
        res = env.step(np.array([4.0, 0.0, 0.0, 0.0, 0.0]))
        if res.terminated:
            break
    assert res.terminated and res.termination_kind == "low_progress"


def test_passive_mode_brake_bias_and_split(straight_track, params):
    env = RaceEnv(straight_track,
                  config=EnvConfig(actuation_mode=PASSIVE_4WD, initial_speed=20.0))
    env.reset()
    res = env.step(np.array([0.0, 1.0]))  # full throttle: equal split
    t = res.info["torque_cmds"]
    assert t[0] == t[1] == t[2] == t[3]
    assert t[0] > 0
    res = env.step(np.array([0.0, -1.0]))  # full brake: front bias
    t = res.info["torque_cmds"]
    assert t[0] == t[1] < 0 and t[2] == t[3] < 0
    total = -t.sum()
    assert (-t[0] - t[1]) / total == pytest.approx(params.brake_front_bias)


def test_active_mode_respects_motor_curve(straight_track, params):
    env = RaceEnv(straight_track, config=EnvConfig(initial_speed=30.0))
    env.reset()
    omega = env.state.omega[0]
    res = env.step(np.array([0.0, 1.0, 1.0, 1.0, 1.0]))
    expected = motor_torque_limit(params.motor, omega)
    assert res.info["torque_cmds"][0] == pytest.approx(expected)


def test_verge_friction_slows_cornering(oval_track):
    # with the verge active the same wide entry ends further off line;
    # structurally: mu scale applies when |offset| in (1, 1.2]
    cfg = EnvConfig(verge_friction_scale=0.5, initial_speed=20.0)
    env = RaceEnv(oval_track, config=cfg)
    env.reset()
    assert env.config.verge_friction_scale == 0.5


def test_observation_bounds_under_caps(straight_env, rng):
    straight_env.reset()
    for _ in range(40):
        res = straight_env.step(rng.uniform(-1, 1, 5))
        obs = res.observation
        assert np.all(np.isfinite(obs))
        assert np.all(obs[0:17] >= 0.0) and np.all(obs[0:17] <= 1.0)
        assert -1.0 < obs[22] <= 1.0
        if res.terminated:
            break


def test_progress_only_config_helper(straight_track):
    env = RaceEnv(straight_track, config=progress_only_config(finish_distance=95.0))
    env.reset()
    res = env.step(np.array([0.0, 1.0, 1.0, 1.0, 1.0]))
    assert res.info["r_act"] == 0.0
    assert res.reward == res.info["r_progr"]
