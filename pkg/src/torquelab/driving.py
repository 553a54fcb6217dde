"""Heuristic centerline-following driver.

Not a trained agent: a plain proportional steering controller with a
curvature-aware speed target. Used by the demos and tests to produce
complete reference laps (e.g. for telemetry tooling) without training.
"""

from __future__ import annotations

import math

import numpy as np

from .env import RaceEnv, ACTIVE_4WD
from .vehicle import GRAVITY


class CenterlineDriver:
    def __init__(self, env: RaceEnv, max_speed: float = 30.0,
                 grip_fraction: float = 0.5, lookahead_time: float = 1.6,
                 steer_gain: float = 1.4, heading_gain: float = 2.2,
                 speed_gain: float = 0.4):
        self.env = env
        self.max_speed = max_speed
        self.grip_fraction = grip_fraction
        self.lookahead_time = lookahead_time
        self.steer_gain = steer_gain
        self.heading_gain = heading_gain
        self.speed_gain = speed_gain
        track = env.track
        # sustained curvature per point: max over a short forward window
        k = track.curvature()
        self._curv = k
        self._cum_s = track.cumulative_s
        self._mu = env.params.tire.mu

    def _target_speed(self, s: float, speed: float) -> float:
        track = self.env.track
        look = max(10.0, speed * self.lookahead_time + 0.5 * speed ** 2 / 6.0)
        n = max(2, int(look / 2.0))
        worst = self.max_speed
        for i in range(n):
            si = s + look * (i + 1) / n
            if track.closed:
                si = si % track.total_length
            idx = min(int(np.searchsorted(self._cum_s, si)),
                      len(self._curv) - 1)
            k = self._curv[idx]
            if k > 1e-6:
                v_corner = math.sqrt(self.grip_fraction * self._mu * GRAVITY / k)
                # allow braking distance: relax the limit with distance out
                dist = look * (i + 1) / n
                v_here = math.sqrt(v_corner ** 2 + 2.0 * 4.0 * dist)
                worst = min(worst, v_here)
        return worst

    def action(self) -> np.ndarray:
        env = self.env
        st = env.state
        steer = (-self.steer_gain * env.lateral_offset
                 - self.heading_gain * env.heading_error / (1.0 + 0.04 * st.vx))
        steer = float(np.clip(steer, -1.0, 1.0))
        v_target = self._target_speed(env.s, st.vx)
        pedal = float(np.clip(self.speed_gain * (v_target - st.vx), -1.0, 1.0))
        if env.config.actuation_mode == ACTIVE_4WD:
            return np.array([steer, pedal, pedal, pedal, pedal])
        return np.array([steer, pedal])


def drive_lap(env: RaceEnv, driver: CenterlineDriver | None = None,
              max_steps: int = 6000):
    """Run one episode with the heuristic driver; returns (StepResult list,
    termination kind)."""
    if driver is None:
        driver = CenterlineDriver(env)
    env.reset()
    results = []
    kind = "none"
    for _ in range(max_steps):
        res = env.step(driver.action())
        results.append(res)
        if res.terminated:
            kind = res.termination_kind
            break
    return results, kind
