"""The racing MDP: scaled observations, normalized actions, composite reward.

One agent step holds the actuator command constant across
agent_dt / physics_dt physics substeps (25 with the defaults: 0.05 s at
20 Hz over a 0.002 s integrator). The reward is

    reward = r_progr + r_ter - r_act

where r_progr is the centerline progress since the previous step, r_ter is
the termination bonus/penalty, and r_act penalizes raw policy outputs far
outside [-1, 1]. All three components are reported per step in
StepResult.info, and the identity above holds exactly.

Observation layout (28 values, mode independent):

    [ 0:17]  lidar distances / 300
    [17:21]  wheel contact speeds (omega * r) / 80, order FL FR RL RR
    [21]     episode centerline distance / track length
    [22]     heading error / pi
    [23]     longitudinal speed / 300
    [24]     lateral speed / 300
    [25]     yaw rate / pi
    [26]     longitudinal acceleration / 100
    [27]     lateral acceleration / 100

Actions are normalized to [-1, 1]: active_4wd mode takes
[steer, T_FL, T_FR, T_RL, T_RR] (steer +1 = max left; torque +1 = max
drive, -1 = max brake); passive_4wd takes [steer, pedal] with the pedal
split 50:50 front/rear through open differentials. Penalties are computed
on the raw (unclamped) action; actuators receive the clamped one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .track import Track, wrap_angle
from .vehicle import (VehicleParams, VehicleState, motor_torque_limit,
                      run_physics, _wheel_slip, _S_W0)

OBS_DIM = 28
LIDAR_SCALE = 300.0
WHEEL_SPEED_SCALE = 80.0
SPEED_SCALE = 300.0
ACCEL_SCALE = 100.0

ACTIVE_4WD = "active_4wd"
PASSIVE_4WD = "passive_4wd"

TERMINATION_KINDS = ("finish", "off_track", "turned_back", "damage",
                     "backwards", "low_progress", "none")


@dataclass
class EnvConfig:
    actuation_mode: str = ACTIVE_4WD
    agent_dt: float = 0.05
    physics_dt: float = 0.002
    # reward parameters
    p_sc: float = 15.0
    p_bnd: float = 1.2
    penalty_mode: str = "hinged"        # "hinged" (zero inside the bound) or
                                        # "literal" (penalizes a = 0 too)
    finish_reward: float = 100.0
    off_track_reward: float = -10.0
    turned_back_reward: float = -10.0
    damage_reward: float = -10.0
    backwards_reward: float = -10.0
    low_progress_reward: float = -10.0
    # termination thresholds
    off_track_limit: float = 1.2
    low_progress_steps: int = 500
    finish_distance: float | None = None  # None: one full track length
    turned_back_literal: bool = False     # terminate on heading_error < 0
    damage_walls: bool = False            # count boundary contact as damage
    # track surface and sensing
    verge_friction_scale: float = 0.6     # mu scale for |offset| in (1, 1.2]
    max_range: float = 300.0
    n_rays: int = 17
    reference_speed: float = 20.0         # config parity only, unused
    initial_speed: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.actuation_mode not in (ACTIVE_4WD, PASSIVE_4WD):
            raise ValueError(f"unknown actuation_mode {self.actuation_mode!r}")
        if self.penalty_mode not in ("hinged", "literal"):
            raise ValueError(f"unknown penalty_mode {self.penalty_mode!r}")
        if self.p_sc <= 0:
            raise ValueError("p_sc must be > 0")
        if self.p_bnd <= 1:
            raise ValueError("p_bnd must be > 1")
        n = self.agent_dt / self.physics_dt
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("agent_dt must be an integer multiple of physics_dt")

    @property
    def n_substeps(self) -> int:
        return int(round(self.agent_dt / self.physics_dt))

    @property
    def action_dim(self) -> int:
        return 5 if self.actuation_mode == ACTIVE_4WD else 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvConfig":
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "EnvConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    terminated: bool
    termination_kind: str
    info: dict


def progress_reward(s_unwrapped_t: float, s_unwrapped_prev: float) -> float:
    """Centerline distance gained this step (negative when reversing).
    Inputs are wrap-unwrapped cumulative distances."""
    return s_unwrapped_t - s_unwrapped_prev


def action_penalty(raw_action, p_sc: float, p_bnd: float,
                   mode: str = "hinged") -> float:
    """Per-component action-bound penalty, summed over the action vector.

    hinged: max(0, |a|/p_sc - (p_bnd - 1))^2, zero anywhere inside the
    feasible band |a| <= p_sc * (p_bnd - 1).
    literal: (|a|/p_sc - p_bnd + 1)^2 with no hinge, which is nonzero even
    at a = 0.
    """
    a = np.abs(np.asarray(raw_action, dtype=np.float64))
    z = a / p_sc - (p_bnd - 1.0)
    if mode == "hinged":
        z = np.maximum(z, 0.0)
    elif mode != "literal":
        raise ValueError(f"unknown penalty mode {mode!r}")
    return float(np.sum(z * z))


def check_termination(dist_unwrapped: float, lateral_offset: float,
                      heading_error: float, vx: float, damage: float,
                      timestep: int, episode_reward: float,
                      config: EnvConfig, finish_distance: float) -> tuple[str, float]:
    """First matching termination rule, in fixed priority order."""
    if dist_unwrapped > finish_distance:
        return "finish", config.finish_reward
    if abs(lateral_offset) > config.off_track_limit:
        return "off_track", config.off_track_reward
    if config.turned_back_literal:
        if heading_error < 0.0:
            return "turned_back", config.turned_back_reward
    elif abs(heading_error) > math.pi / 2.0:
        return "turned_back", config.turned_back_reward
    if damage > 0:
        return "damage", config.damage_reward
    if vx < 0.0:
        return "backwards", config.backwards_reward
    if timestep > config.low_progress_steps and episode_reward < 0.0:
        return "low_progress", config.low_progress_reward
    return "none", 0.0


def build_observation(track: Track, params: VehicleParams, state: VehicleState,
                      episode_dist: float, config: EnvConfig,
                      heading_error: float | None = None) -> np.ndarray:
    """Assemble the 28-value scaled observation for an arbitrary state."""
    if heading_error is None:
        heading_error = track.frame((state.x, state.y), state.yaw).heading_error
    angles = ray_angles(config.n_rays)
    lidar = track.raycast((state.x, state.y), state.yaw, angles, config.max_range)
    obs = np.empty(OBS_DIM)
    obs[0:17] = lidar / LIDAR_SCALE
    obs[17:21] = state.omega * params.wheel_radius / WHEEL_SPEED_SCALE
    obs[21] = episode_dist / track.total_length
    obs[22] = heading_error / math.pi
    obs[23] = state.vx / SPEED_SCALE
    obs[24] = state.vy / SPEED_SCALE
    obs[25] = state.yaw_rate / math.pi
    obs[26] = state.ax / ACCEL_SCALE
    obs[27] = state.ay / ACCEL_SCALE
    return obs


def ray_angles(n_rays: int = 17) -> np.ndarray:
    """Lidar ray directions relative to the car heading: uniform over
    [-90 deg, +90 deg], right to left."""
    return np.linspace(-math.pi / 2.0, math.pi / 2.0, n_rays)


class RaceEnv:
    """One car on one track. Instances are independent; a single instance
    must not be stepped concurrently."""

    def __init__(self, track: Track, params: VehicleParams | None = None,
                 config: EnvConfig | None = None):
        self.track = track
        self.params = params if params is not None else VehicleParams()
        self.config = config if config is not None else EnvConfig()
        self._params_arr = self.params.as_array()
        self._ray_angles = ray_angles(self.config.n_rays)
        if self.config.finish_distance is not None:
            self._finish_distance = self.config.finish_distance
        elif track.closed:
            self._finish_distance = track.total_length
        else:
            # open tracks: the projection plateaus exactly at L past the last
            # point, so a finish at L would be unreachable
            self._finish_distance = track.total_length - 0.5
        self._state_arr: np.ndarray | None = None
        self._terminated = True
        self.seed = self.config.seed

    # -- properties -------------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.config.action_dim

    @property
    def observation_dim(self) -> int:
        return OBS_DIM

    @property
    def n_substeps(self) -> int:
        return self.config.n_substeps

    @property
    def state(self) -> VehicleState:
        return VehicleState.from_array(self._state_arr)

    @property
    def terminated(self) -> bool:
        return self._terminated

    @property
    def timestep(self) -> int:
        return self._t

    @property
    def episode_dist(self) -> float:
        return self._dist

    @property
    def episode_reward(self) -> float:
        return self._episode_reward

    @property
    def lateral_offset(self) -> float:
        return self._offset

    @property
    def heading_error(self) -> float:
        return self._heading_error

    @property
    def s(self) -> float:
        return self._s_raw

    @property
    def finish_distance(self) -> float:
        return self._finish_distance

    # -- lifecycle ----------------------------------------------------------

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Place the car at s = 0 on the centerline, heading along the
        tangent, at the configured initial speed. Deterministic per seed."""
        if seed is not None:
            self.seed = seed
        start = self.track.point_at(0.0)
        yaw = self.track.tangent_at(0.0)
        v0 = self.config.initial_speed
        state = VehicleState(x=float(start[0]), y=float(start[1]), yaw=yaw,
                             vx=v0, omega=np.full(4, v0 / self.params.wheel_radius))
        self._state_arr = state.as_array()
        self._terminated = False
        self._t = 0
        self._episode_reward = 0.0
        self._dist = 0.0
        self._damage = 0.0
        frame = self.track.frame((state.x, state.y), state.yaw)
        self._s_raw = frame.s
        self._offset = frame.lateral_offset
        self._heading_error = frame.heading_error
        self._last_info: dict = {}
        return self.observe()

    def observe(self) -> np.ndarray:
        state = self.state
        return build_observation(self.track, self.params, state, self._dist,
                                 self.config, heading_error=self._heading_error)

    # -- actuation -----------------------------------------------------------

    def _map_action(self, clamped: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        """Clamped normalized action -> (steer rad, drive N*m, brake N*m).
        Limits are evaluated once per agent step at the current wheel speeds."""
        motor = self.params.motor
        steer = float(clamped[0]) * self.params.max_steer
        drive = np.zeros(4)
        brake = np.zeros(4)
        omega = self._state_arr[_S_W0:_S_W0 + 4]
        if self.config.actuation_mode == ACTIVE_4WD:
            for i in range(4):
                c = float(clamped[1 + i])
                if c >= 0.0:
                    drive[i] = c * motor_torque_limit(motor, omega[i])
                else:
                    brake[i] = -c * motor.brake_torque
        else:
            pedal = float(clamped[1])
            if pedal >= 0.0:
                # one engine of the same total power, open differentials
                w_avg = float(np.mean(np.abs(omega)))
                total = pedal * 4.0 * motor_torque_limit(motor, w_avg)
                drive[:] = total / 4.0
            else:
                total = -pedal * 4.0 * motor.brake_torque
                bias = self.params.brake_front_bias
                brake[0] = brake[1] = total * bias / 2.0
                brake[2] = brake[3] = total * (1.0 - bias) / 2.0
        return steer, drive, brake

    # -- stepping -----------------------------------------------------------

    def step(self, action) -> StepResult:
        if self._state_arr is None:
            raise RuntimeError("call reset() before step()")
        if self._terminated:
            raise RuntimeError("episode is terminated; call reset()")
        raw = np.asarray(action, dtype=np.float64)
        if raw.shape != (self.action_dim,):
            raise ValueError(f"action must have shape ({self.action_dim},), "
                             f"got {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise ValueError("action contains non-finite values")

        cfg = self.config
        clamped = np.clip(raw, -1.0, 1.0)
        steer, drive, brake = self._map_action(clamped)

        # verge: reduced friction between the track edge and the 1.2 limit
        mu_scale = 1.0
        if 1.0 < abs(self._offset) <= cfg.off_track_limit:
            mu_scale = cfg.verge_friction_scale

        self._state_arr = run_physics(self._state_arr, self._params_arr,
                                      drive, brake, steer, mu_scale,
                                      cfg.physics_dt, cfg.n_substeps)

        state = self.state
        frame = self.track.frame((state.x, state.y), state.yaw)
        ds = frame.s - self._s_raw
        if self.track.closed:
            half = self.track.total_length / 2.0
            ds = (ds + half) % self.track.total_length - half
        self._s_raw = frame.s
        self._offset = frame.lateral_offset
        self._heading_error = frame.heading_error

        dist_prev = self._dist
        self._dist += ds
        r_progr = progress_reward(self._dist, dist_prev)
        r_act = action_penalty(raw, cfg.p_sc, cfg.p_bnd, cfg.penalty_mode)

        if cfg.damage_walls and abs(self._offset) >= cfg.off_track_limit:
            self._damage += 1.0

        self._t += 1
        running_reward = self._episode_reward + r_progr - r_act
        kind, r_ter = check_termination(self._dist, self._offset,
                                        self._heading_error, state.vx,
                                        self._damage, self._t, running_reward,
                                        cfg, self._finish_distance)
        reward = r_progr + r_ter - r_act
        self._episode_reward += reward
        self._terminated = kind != "none"

        slips = np.empty(4)
        for i in range(4):
            st_i = steer if i < 2 else 0.0
            wx = self.params.cg_to_front if i < 2 else -self.params.cg_to_rear
            wy = self.params.track_width / 2.0 if i in (0, 2) else -self.params.track_width / 2.0
            slips[i], _, _, _ = _wheel_slip(self._params_arr, state.vx, state.vy,
                                            state.yaw_rate, st_i,
                                            float(state.omega[i]), wx, wy)

        # normalized per-wheel torque commands: the active-mode action that
        # would produce the same torques (lets passive laps plot the same
        # channels)
        motor = self.params.motor
        torque_norm = np.empty(4)
        for i in range(4):
            if brake[i] > 0.0:
                torque_norm[i] = -brake[i] / motor.brake_torque
            else:
                limit = motor_torque_limit(motor, self._state_arr[_S_W0 + i])
                torque_norm[i] = drive[i] / limit if limit > 0 else 0.0

        info = {
            "s": frame.s,
            "lateral_offset": self._offset,
            "heading_error": self._heading_error,
            "episode_dist": self._dist,
            "r_progr": r_progr,
            "r_ter": r_ter,
            "r_act": r_act,
            "time": self._t * cfg.agent_dt,
            "timestep": self._t,
            "speed": state.speed,
            "vx": state.vx,
            "vy": state.vy,
            "yaw_rate": state.yaw_rate,
            "ax": state.ax,
            "ay": state.ay,
            "steer_cmd": steer,
            "steer_norm": float(clamped[0]),
            "torque_cmds": drive - brake,
            "torque_norm": torque_norm,
            "pedal": float(clamped[1]) if cfg.actuation_mode == PASSIVE_4WD else 0.0,
            "wheel_speeds": state.omega * self.params.wheel_radius,
            "slip_ratios": slips,
            "episode_reward": self._episode_reward,
        }
        if kind == "finish":
            info["lap_time"] = self._t * cfg.agent_dt
        self._last_info = info

        return StepResult(self.observe(), reward, self._terminated, kind, info)
