"""Planar double-track vehicle dynamics with four independent wheel torques.

7 DOF: body x, y, yaw plus four wheel spin states, integrated with
semi-implicit Euler at a fixed physics step. Wheel order is FL, FR, RL, RR
everywhere. Tire forces come from a normalized magic-formula shape applied
to the combined slip vector, which keeps the force magnitude inside the
friction circle mu*Fz by construction. Wheel loads follow a quasi-static
load-transfer model driven by the previous step's body accelerations.

All state-transition functions are pure: no shared mutable state, safe to
run many vehicles concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numba import njit

GRAVITY = 9.80665
AIR_DENSITY = 1.225

WHEEL_NAMES = ("FL", "FR", "RL", "RR")

# smooth-sign regularization scales
_BRAKE_OMEGA_EPS = 0.5   # rad/s, brake torque fade-in around standstill
_ROLL_RES_V_EPS = 0.5    # m/s, rolling resistance fade-in


@dataclass
class TireParams:
    """Combined-slip tire: normalized magic-formula shape on the slip vector.

    long_stiffness / corner_stiffness are small-slip gradients per newton of
    load (Fx ~= long_stiffness * Fz * slip_ratio). With the default shape
    factor C = 1 the force saturates monotonically toward mu * Fz (no grip
    loss at extreme slip); C in (1, 2) instead peaks at exactly mu * Fz at
    the saturation slip and falls off beyond it.
    """

    mu: float = 1.5
    long_stiffness: float = 25.0   # 1 / unit slip ratio
    corner_stiffness: float = 17.0  # 1 / rad
    shape_c: float = 1.0           # magic-formula shape factor, in [1, 2)

    def __post_init__(self):
        if not 1.0 <= self.shape_c < 2.0:
            raise ValueError("shape_c must be in [1, 2)")

    @property
    def shape_b(self) -> float:
        # C > 1: peak of sin(C * atan(B * s)) lands at 1 exactly when s = 1
        if self.shape_c == 1.0:
            return 1.0
        return math.tan(math.pi / (2.0 * self.shape_c))

    @property
    def sat_slip_ratio(self) -> float:
        return self.mu * self.shape_c * self.shape_b / self.long_stiffness

    @property
    def sat_slip_angle(self) -> float:
        return self.mu * self.shape_c * self.shape_b / self.corner_stiffness


@dataclass
class MotorCurve:
    """Per-wheel electric motor: constant torque up to base speed, constant
    power above it. The brake is a separate mechanical limit, deliberately
    large enough to lock a wheel at speed."""

    t_max: float = 800.0        # N*m
    omega_base: float = 68.75   # rad/s
    brake_torque: float = 2500.0  # N*m, above peak grip torque at full load

    @property
    def p_max(self) -> float:
        return self.t_max * self.omega_base


@dataclass
class VehicleParams:
    mass: float = 1100.0          # kg
    yaw_inertia: float = 1400.0   # kg*m^2
    cg_to_front: float = 1.25     # m
    cg_to_rear: float = 1.40      # m
    track_width: float = 1.60     # m
    cg_height: float = 0.30       # m
    wheel_radius: float = 0.31    # m
    wheel_inertia: float = 1.2    # kg*m^2
    tire: TireParams = field(default_factory=TireParams)
    motor: MotorCurve = field(default_factory=MotorCurve)
    drag_area: float = 1.0        # Cd*A, m^2
    rolling_resistance: float = 0.012
    max_steer: float = 0.42       # rad
    brake_front_bias: float = 0.60  # passive-mode axle brake split
    slip_v_floor: float = 1.5     # m/s, slip-ratio regularization

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "cg_to_front", "cg_to_rear",
                     "track_width", "cg_height", "wheel_radius", "wheel_inertia"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.tire.mu <= 0:
            raise ValueError("tire.mu must be > 0")
        if not 0.0 < self.max_steer < math.pi / 2:
            raise ValueError("max_steer must be in (0, pi/2)")

    @property
    def wheelbase(self) -> float:
        return self.cg_to_front + self.cg_to_rear

    def wheel_positions(self) -> np.ndarray:
        """Body-frame (x, y) of each contact patch, order FL, FR, RL, RR."""
        a, b, half = self.cg_to_front, self.cg_to_rear, self.track_width / 2.0
        return np.array([[a, half], [a, -half], [-b, half], [-b, -half]])

    def as_array(self) -> np.ndarray:
        """Flat float64 parameter vector for the physics kernels."""
        t = self.tire
        return np.array([
            self.mass, self.yaw_inertia, self.cg_to_front, self.cg_to_rear,
            self.track_width, self.cg_height, self.wheel_radius,
            self.wheel_inertia, t.mu, t.sat_slip_ratio, t.sat_slip_angle,
            t.shape_c, t.shape_b, self.drag_area, self.rolling_resistance,
            self.slip_v_floor,
        ])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "VehicleParams":
        doc = dict(doc)
        if "tire" in doc:
            doc["tire"] = TireParams(**doc["tire"])
        if "motor" in doc:
            doc["motor"] = MotorCurve(**doc["motor"])
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "VehicleParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# kernel parameter vector indices (see VehicleParams.as_array)
_P_MASS, _P_IZ, _P_A, _P_B, _P_TW, _P_H, _P_RW, _P_IW = range(8)
_P_MU, _P_KSAT, _P_ASAT, _P_C, _P_BB, _P_DRAG, _P_RR, _P_VFLOOR = range(8, 16)

# state vector indices
_S_X, _S_Y, _S_YAW, _S_VX, _S_VY, _S_R = range(6)
_S_W0 = 6  # four wheel speeds at 6..9
_S_AX, _S_AY = 10, 11
STATE_DIM = 12


@dataclass
class VehicleState:
    """Planar pose, body-frame velocities and wheel speeds (FL, FR, RL, RR).

    ax/ay hold the body-frame accelerations produced by the last physics
    substep (accelerometer-style: force over mass, drag included)."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    omega: np.ndarray = field(default_factory=lambda: np.zeros(4))
    ax: float = 0.0
    ay: float = 0.0

    def as_array(self) -> np.ndarray:
        out = np.empty(STATE_DIM)
        out[0:6] = (self.x, self.y, self.yaw, self.vx, self.vy, self.yaw_rate)
        out[6:10] = self.omega
        out[10] = self.ax
        out[11] = self.ay
        return out

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]), float(arr[3]),
                   float(arr[4]), float(arr[5]), np.array(arr[6:10]),
                   float(arr[10]), float(arr[11]))

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass
class WheelCommand:
    """Per-wheel signed torques (+drive, -brake) and a front-axle steer angle.

    Negative torques act as brakes: the magnitude opposes wheel rotation
    through a smooth sign so a braked wheel settles at rest instead of
    spinning backwards."""

    torques: np.ndarray = field(default_factory=lambda: np.zeros(4))
    steer: float = 0.0


# ---------------------------------------------------------------------------
# Pure per-wheel physics (shared by the substep kernel and the public API)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _loads(p, ax, ay, out):
    m = p[_P_MASS]
    wb = p[_P_A] + p[_P_B]
    h = p[_P_H]
    front = m * (GRAVITY * p[_P_B] - ax * h) / wb
    rear = m * (GRAVITY * p[_P_A] + ax * h) / wb
    lat = ay * h / (GRAVITY * p[_P_TW])
    out[0] = front * (0.5 - lat)
    out[1] = front * (0.5 + lat)
    out[2] = rear * (0.5 - lat)
    out[3] = rear * (0.5 + lat)
    for i in range(4):
        if out[i] < 0.0:
            out[i] = 0.0


@njit(cache=True)
def _wheel_slip(p, vx, vy, yaw_rate, steer, omega, wx, wy):
    """Slip ratio and slip angle at one contact patch."""
    cvx = vx - yaw_rate * wy
    cvy = vy + yaw_rate * wx
    cw = math.cos(steer)
    sw = math.sin(steer)
    wvx = cvx * cw + cvy * sw
    wvy = -cvx * sw + cvy * cw
    denom = abs(wvx)
    if denom < p[_P_VFLOOR]:
        denom = p[_P_VFLOOR]
    kappa = (omega * p[_P_RW] - wvx) / denom
    alpha = math.atan2(wvy, abs(wvx) + p[_P_VFLOOR])
    return kappa, alpha, wvx, wvy


@njit(cache=True)
def _tire(p, kappa, alpha, fz, mu_scale):
    """Wheel-frame (Fx, Fy). Fy opposes the slip angle."""
    if fz <= 0.0:
        return 0.0, 0.0
    mu = p[_P_MU] * mu_scale
    sx = kappa / p[_P_KSAT]
    sy = alpha / p[_P_ASAT]
    s = math.hypot(sx, sy)
    if s < 1e-12:
        return 0.0, 0.0
    f = mu * fz * math.sin(p[_P_C] * math.atan(p[_P_BB] * s))
    return f * sx / s, -f * sy / s


@njit(cache=True)
def _substeps(st, p, drive, brake, steer, mu_scale, dt, n_sub):
    """Advance the 12-entry state vector by n_sub fixed steps of dt.

    drive[i] >= 0 and brake[i] >= 0 are held constant; the braking torque
    opposes wheel rotation through a smooth sign. Wheel spin uses an
    implicit relaxation against the zero-slip tire stiffness so the
    slip-ratio dynamics stay stable down to standstill."""
    s = st.copy()
    fz = np.empty(4)
    for _ in range(n_sub):
        vx = s[_S_VX]
        vy = s[_S_VY]
        r = s[_S_R]
        _loads(p, s[_S_AX], s[_S_AY], fz)
        mu = p[_P_MU] * mu_scale
        stiff0 = p[_P_C] * p[_P_BB] / p[_P_KSAT]  # d(F/(mu*Fz))/d(kappa) at 0
        fx_tot = 0.0
        fy_tot = 0.0
        mz = 0.0
        half = p[_P_TW] / 2.0
        for i in range(4):
            wx = p[_P_A] if i < 2 else -p[_P_B]
            wy = half if (i == 0 or i == 2) else -half
            st_i = steer if i < 2 else 0.0
            w = s[_S_W0 + i]
            kappa, alpha, wvx, wvy = _wheel_slip(p, vx, vy, r, st_i, w, wx, wy)
            fxw, fyw = _tire(p, kappa, alpha, fz[i], mu_scale)
            # rolling resistance opposes contact motion, fading out at rest
            fxw -= p[_P_RR] * fz[i] * wvx / (abs(wvx) + _ROLL_RES_V_EPS)

            # wheel spin: I_w * dw/dt = T - r_w * Fx, implicit in the
            # zero-slip stiffness bound (unconditionally stable)
            denom_v = abs(wvx)
            if denom_v < p[_P_VFLOOR]:
                denom_v = p[_P_VFLOOR]
            torque = drive[i] - brake[i] * w / (abs(w) + _BRAKE_OMEGA_EPS)
            dfx_dw = mu * fz[i] * stiff0 * p[_P_RW] / denom_v
            dw = dt * (torque - p[_P_RW] * fxw) / \
                (p[_P_IW] + dt * p[_P_RW] * dfx_dw * p[_P_RW])
            s[_S_W0 + i] = w + dw

            cw = math.cos(st_i)
            sw = math.sin(st_i)
            fxb = fxw * cw - fyw * sw
            fyb = fxw * sw + fyw * cw
            fx_tot += fxb
            fy_tot += fyb
            mz += wx * fyb - wy * fxb

        v = math.hypot(vx, vy)
        fx_tot -= 0.5 * AIR_DENSITY * p[_P_DRAG] * v * vx
        fy_tot -= 0.5 * AIR_DENSITY * p[_P_DRAG] * v * vy

        ax = fx_tot / p[_P_MASS]
        ay = fy_tot / p[_P_MASS]
        rdot = mz / p[_P_IZ]

        s[_S_VX] = vx + dt * (ax + r * vy)
        s[_S_VY] = vy + dt * (ay - r * vx)
        s[_S_R] = r + dt * rdot
        s[_S_YAW] = s[_S_YAW] + dt * s[_S_R]
        cy = math.cos(s[_S_YAW])
        sy = math.sin(s[_S_YAW])
        s[_S_X] = s[_S_X] + dt * (s[_S_VX] * cy - s[_S_VY] * sy)
        s[_S_Y] = s[_S_Y] + dt * (s[_S_VX] * sy + s[_S_VY] * cy)
        s[_S_AX] = ax
        s[_S_AY] = ay
    return s


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def motor_torque_limit(curve: MotorCurve, omega: float) -> float:
    """Available drive torque at wheel speed omega (uses |omega|)."""
    w = abs(omega)
    if w <= 1e-9:
        return curve.t_max
    return min(curve.t_max, curve.p_max / w)


def normal_loads(params: VehicleParams, ax: float, ay: float) -> np.ndarray:
    """Quasi-static per-wheel loads for the given body accelerations."""
    out = np.empty(4)
    _loads(params.as_array(), float(ax), float(ay), out)
    return out


def slip_quantities(state: VehicleState, params: VehicleParams,
                    steer: float, wheel: int) -> tuple[float, float]:
    """(slip_ratio, slip_angle) at one contact patch; steer applies to the
    front wheels only."""
    wx, wy = params.wheel_positions()[wheel]
    st = steer if wheel < 2 else 0.0
    kappa, alpha, _, _ = _wheel_slip(params.as_array(), state.vx, state.vy,
                                     state.yaw_rate, st,
                                     float(state.omega[wheel]), wx, wy)
    return kappa, alpha


def tire_forces(tire: TireParams, slip_ratio: float, slip_angle: float,
                fz: float, mu_scale: float = 1.0) -> tuple[float, float]:
    """Wheel-frame (Fx, Fy): odd in each slip input, Fy opposing the slip
    angle, combined magnitude capped at mu * Fz."""
    if fz < 0:
        raise ValueError("fz must be >= 0")
    p = np.zeros(16)
    p[_P_MU] = tire.mu
    p[_P_KSAT] = tire.sat_slip_ratio
    p[_P_ASAT] = tire.sat_slip_angle
    p[_P_C] = tire.shape_c
    p[_P_BB] = tire.shape_b
    return _tire(p, float(slip_ratio), float(slip_angle), float(fz), mu_scale)


def physics_step(state: VehicleState, params: VehicleParams,
                 cmd: WheelCommand, dt: float,
                 mu_scale: float = 1.0) -> VehicleState:
    """One semi-implicit Euler substep. Deterministic: identical inputs
    produce bit-identical outputs. Torques are applied as given (caller
    clamps against the motor curve / brake limit)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    arr = state.as_array()
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite vehicle state")
    t = np.asarray(cmd.torques, dtype=np.float64)
    if t.shape != (4,) or not np.all(np.isfinite(t)) or not math.isfinite(cmd.steer):
        raise ValueError("non-finite or malformed wheel command")
    drive = np.maximum(t, 0.0)
    brake = np.maximum(-t, 0.0)
    out = _substeps(arr, params.as_array(), drive, brake, float(cmd.steer),
                    float(mu_scale), float(dt), 1)
    return VehicleState.from_array(out)


def run_physics(state_arr: np.ndarray, params_arr: np.ndarray,
                drive: np.ndarray, brake: np.ndarray, steer: float,
                mu_scale: float, dt: float, n_substeps: int) -> np.ndarray:
    """Hot path used by the environment: n_substeps with a held command,
    operating directly on packed state/parameter vectors."""
    return _substeps(state_arr, params_arr, drive, brake, float(steer),
                     float(mu_scale), float(dt), n_substeps)
