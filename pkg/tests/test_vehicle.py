import math

import numpy as np
import pytest

from torquelab import (GRAVITY, MotorCurve, TireParams, VehicleParams,
                       VehicleState, WheelCommand, motor_torque_limit,
                       normal_loads, slip_quantities, tire_forces,
                       physics_step, run_physics)


def mirror_state_array(arr):
    out = arr.copy()
    out[[1, 2, 4, 5, 11]] *= -1.0      # y, yaw, vy, yaw_rate, ay
    out[[6, 7, 8, 9]] = out[[7, 6, 9, 8]]  # swap left/right wheels
    return out


# ---------------------------------------------------------------------------
# motor curve
# ---------------------------------------------------------------------------

def test_motor_torque_plateau_and_hyperbola():
    curve = MotorCurve(t_max=800.0, omega_base=68.75)
    assert motor_torque_limit(curve, 0.0) == pytest.approx(800.0)
    assert motor_torque_limit(curve, curve.omega_base) == pytest.approx(800.0)
    assert motor_torque_limit(curve, 2 * curve.omega_base) == pytest.approx(400.0)
    # continuity across the base speed
    lo = motor_torque_limit(curve, curve.omega_base * (1 - 1e-9))
    hi = motor_torque_limit(curve, curve.omega_base * (1 + 1e-9))
    assert lo == pytest.approx(hi, rel=1e-8)


# ---------------------------------------------------------------------------
# normal loads
# ---------------------------------------------------------------------------

def test_static_loads_split_by_geometry(params):
    fz = normal_loads(params, 0.0, 0.0)
    total = params.mass * GRAVITY
    assert fz.sum() == pytest.approx(total, abs=1e-9)
    front_share = params.cg_to_rear / params.wheelbase
    assert fz[0] + fz[1] == pytest.approx(total * front_share, rel=1e-12)
    assert fz[0] == fz[1] and fz[2] == fz[3]


def test_braking_loads_front(params):
    static = normal_loads(params, 0.0, 0.0)
    braking = normal_loads(params, -6.0, 0.0)
    assert braking[0] > static[0] and braking[1] > static[1]
    assert braking[2] < static[2]
    assert braking.sum() == pytest.approx(params.mass * GRAVITY, abs=1e-9)


def test_loads_match_closed_form(params):
    ax, ay = 3.0, 5.0
    # independent closed-form evaluation of the quasi-static model
    m, h = params.mass, params.cg_height
    wb, tw = params.wheelbase, params.track_width
    front = m * (GRAVITY * params.cg_to_rear - ax * h) / wb
    rear = m * (GRAVITY * params.cg_to_front + ax * h) / wb
    lat = ay * h / (GRAVITY * tw)
    expected = np.array([front * (0.5 - lat), front * (0.5 + lat),
                         rear * (0.5 - lat), rear * (0.5 + lat)])
    np.testing.assert_allclose(normal_loads(params, ax, ay), expected, atol=1e-9)


def test_loads_floor_at_zero(params):
    fz = normal_loads(params, 0.0, 60.0)  # absurd lateral acceleration
    assert np.all(fz >= 0.0)


# ---------------------------------------------------------------------------
# slip quantities
# ---------------------------------------------------------------------------

def test_pure_rolling_zero_slip(params):
    v = 20.0
    state = VehicleState(vx=v, omega=np.full(4, v / params.wheel_radius))
    for wheel in range(4):
        ratio, angle = slip_quantities(state, params, 0.0, wheel)
        assert ratio == pytest.approx(0.0, abs=1e-12)
        assert angle == pytest.approx(0.0, abs=1e-12)


def test_locked_wheel_slip_ratio(params):
    state = VehicleState(vx=20.0, omega=np.zeros(4))
    ratio, _ = slip_quantities(state, params, 0.0, 0)
    assert ratio == pytest.approx(-1.0, abs=1e-12)


def test_cornering_slip_matches_hand_kinematics(params):
    # independent contact-patch kinematics for the front-left wheel
    state = VehicleState(vx=18.0, vy=-1.2, yaw_rate=0.7,
                         omega=np.array([55.0, 58.0, 60.0, 61.0]))
    steer = 0.15
    wx, wy = params.cg_to_front, params.track_width / 2.0
    cvx = state.vx - state.yaw_rate * wy
    cvy = state.vy + state.yaw_rate * wx
    wvx = cvx * math.cos(steer) + cvy * math.sin(steer)
    wvy = -cvx * math.sin(steer) + cvy * math.cos(steer)
    denom = max(abs(wvx), params.slip_v_floor)
    expect_ratio = (state.omega[0] * params.wheel_radius - wvx) / denom
    expect_angle = math.atan2(wvy, abs(wvx) + params.slip_v_floor)
    ratio, angle = slip_quantities(state, params, steer, 0)
    assert ratio == pytest.approx(expect_ratio, abs=1e-9)
    assert angle == pytest.approx(expect_angle, abs=1e-9)


# ---------------------------------------------------------------------------
# tire forces
# ---------------------------------------------------------------------------

def test_tire_zero_at_zero_slip():
    tire = TireParams()
    assert tire_forces(tire, 0.0, 0.0, 4000.0) == (0.0, 0.0)


def test_tire_longitudinal_saturation():
    tire = TireParams()
    fx, fy = tire_forces(tire, 5.0, 0.0, 4000.0)
    assert fy == 0.0
    assert fx == pytest.approx(tire.mu * 4000.0, rel=1e-3)
    fx_neg, _ = tire_forces(tire, -5.0, 0.0, 4000.0)
    assert fx_neg == pytest.approx(-fx, abs=1e-9)


def test_tire_zero_load_zero_force():
    tire = TireParams()
    assert tire_forces(tire, 0.5, 0.3, 0.0) == (0.0, 0.0)


def test_tire_friction_circle_random(rng):
    tire = TireParams()
    for _ in range(1000):
        ratio = rng.uniform(-3, 3)
        angle = rng.uniform(-math.pi, math.pi)
        fz = rng.uniform(0, 9000)
        fx, fy = tire_forces(tire, ratio, angle, fz)
        assert math.hypot(fx, fy) <= tire.mu * fz + 1e-6


def test_tire_oddness_and_fy_opposes_slip(rng):
    tire = TireParams()
    for _ in range(100):
        ratio = rng.uniform(-1, 1)
        angle = rng.uniform(-1, 1)
        fx, fy = tire_forces(tire, ratio, angle, 3000.0)
        fx2, fy2 = tire_forces(tire, -ratio, -angle, 3000.0)
        assert fx2 == pytest.approx(-fx, abs=1e-9)
        assert fy2 == pytest.approx(-fy, abs=1e-9)
        if angle > 1e-3:
            assert fy < 0.0


# ---------------------------------------------------------------------------
# physics step
# ---------------------------------------------------------------------------

def test_coastdown_dissipates_energy(params):
    v = 20.0
    state = VehicleState(vx=v, omega=np.full(4, v / params.wheel_radius))

    def kinetic(s: VehicleState) -> float:
        return (0.5 * params.mass * (s.vx ** 2 + s.vy ** 2)
                + 0.5 * params.yaw_inertia * s.yaw_rate ** 2
                + 0.5 * params.wheel_inertia * float(np.sum(s.omega ** 2)))

    arr = state.as_array()
    e0 = kinetic(state)
    arr = run_physics(arr, params.as_array(), np.zeros(4), np.zeros(4),
                      0.0, 1.0, 0.002, 500)
    after = VehicleState.from_array(arr)
    assert kinetic(after) < e0
    assert after.vx < v


def test_left_right_symmetry_exact(params):
    state = VehicleState(vx=15.0, omega=np.full(4, 15.0 / params.wheel_radius))
    cmd = WheelCommand(torques=np.array([300.0, 300.0, 300.0, 300.0]), steer=0.0)
    for _ in range(200):
        state = physics_step(state, params, cmd, 0.002)
    assert abs(state.vy) <= 1e-12
    assert abs(state.yaw_rate) <= 1e-12
    assert abs(state.y) <= 1e-12


def test_mirror_equivariance(params, rng):
    pa = params.as_array()
    for _ in range(200):
        arr = np.concatenate([
            rng.uniform(-50, 50, 2), rng.uniform(-3, 3, 1),
            rng.uniform(-5, 45, 1), rng.uniform(-4, 4, 1), rng.uniform(-2, 2, 1),
            rng.uniform(-20, 140, 4), rng.uniform(-10, 10, 2)])
        drive = rng.uniform(0, 800, 4)
        brake = rng.uniform(0, 2500, 4)
        steer = rng.uniform(-0.4, 0.4)
        out = run_physics(arr.copy(), pa, drive, brake, steer, 1.0, 0.002, 1)
        out_mirror = run_physics(mirror_state_array(arr), pa,
                                 drive[[1, 0, 3, 2]], brake[[1, 0, 3, 2]],
                                 -steer, 1.0, 0.002, 1)
        np.testing.assert_allclose(out_mirror, mirror_state_array(out), atol=1e-9)


def test_standstill_stays_at_rest(params):
    state = VehicleState()
    arr = run_physics(state.as_array(), params.as_array(), np.zeros(4),
                      np.zeros(4), 0.0, 1.0, 0.002, 2000)
    assert np.all(np.abs(arr) <= 1e-12)


def test_step_deterministic_bitwise(params, rng):
    arr0 = np.concatenate([rng.uniform(-5, 5, 2), [0.3], [22.0], [0.5], [0.2],
                           rng.uniform(50, 80, 4), [0.5, 2.0]])
    drive = rng.uniform(0, 700, 4)
    brake = np.zeros(4)
    a = run_physics(arr0.copy(), params.as_array(), drive, brake, 0.1, 1.0, 0.002, 250)
    b = run_physics(arr0.copy(), params.as_array(), drive, brake, 0.1, 1.0, 0.002, 250)
    assert np.array_equal(a, b)


def test_physics_step_rejects_nonfinite(params):
    state = VehicleState(vx=float("nan"))
    with pytest.raises(ValueError):
        physics_step(state, params, WheelCommand(), 0.002)
    with pytest.raises(ValueError):
        physics_step(VehicleState(), params,
                     WheelCommand(torques=np.array([np.inf, 0, 0, 0])), 0.002)


def test_drive_power_bound_after_clamping(params, rng):
    # above base speed a clamped drive command never exceeds motor power
    curve = params.motor
    for _ in range(500):
        omega = rng.uniform(curve.omega_base, 4 * curve.omega_base)
        cmd = rng.uniform(0, 1)
        torque = cmd * motor_torque_limit(curve, omega)
        assert abs(torque * omega) <= curve.p_max * (1 + 1e-9) + 1e-6


def test_braking_locks_wheel_at_speed(params):
    # a -1 brake command overpowers the tire and drags the wheel to a stop
    v = 40.0
    state = VehicleState(vx=v, omega=np.full(4, v / params.wheel_radius))
    arr = state.as_array()
    arr = run_physics(arr, params.as_array(), np.zeros(4),
                      np.full(4, params.motor.brake_torque), 0.0, 1.0, 0.002, 250)
    after = VehicleState.from_array(arr)
    assert after.vx > 5.0          # car still moving
    assert np.all(np.abs(after.omega) < 2.0)  # wheels essentially locked


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(mass=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(max_steer=2.0)
    with pytest.raises(ValueError):
        TireParams(shape_c=2.5)


def test_params_file_roundtrip(tmp_path, params):
    path = tmp_path / "veh.json"
    params.to_file(path)
    again = VehicleParams.from_file(path)
    assert again == params
