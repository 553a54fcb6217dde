"""Lap telemetry: per-step recording, GG envelopes, corner reports, slip
events, and learning-curve extraction.

Storage is one CSV per episode (column order below) plus a JSON index per
telemetry directory. Floats are written with repr so a read-back is exact.

CSV columns:
    step, t, s, lat_offset, heading_err, speed, vx, vy, yaw_rate, ax, ay,
    steer, pedal, torque_fl, torque_fr, torque_rl, torque_rr,
    wheel_v_fl, wheel_v_fr, wheel_v_rl, wheel_v_rr,
    slip_fl, slip_fr, slip_rl, slip_rr, r_progr, r_ter, r_act, reward

steer/pedal/torque_* are normalized commands in the [-1, 1] action
convention; wheel_v_* are contact speeds in m/s.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.80665

COLUMNS = ["step", "t", "s", "lat_offset", "heading_err", "speed", "vx", "vy",
           "yaw_rate", "ax", "ay", "steer", "pedal",
           "torque_fl", "torque_fr", "torque_rl", "torque_rr",
           "wheel_v_fl", "wheel_v_fr", "wheel_v_rl", "wheel_v_rr",
           "slip_fl", "slip_fr", "slip_rl", "slip_rr",
           "r_progr", "r_ter", "r_act", "reward"]

WHEELS = ("fl", "fr", "rl", "rr")


@dataclass
class StepRecord:
    step: int
    t: float
    s: float
    lat_offset: float
    heading_err: float
    speed: float
    vx: float
    vy: float
    yaw_rate: float
    ax: float
    ay: float
    steer: float
    pedal: float
    torques: np.ndarray
    wheel_speeds: np.ndarray
    slips: np.ndarray
    r_progr: float
    r_ter: float
    r_act: float
    reward: float

    def row(self) -> list:
        return [self.step, self.t, self.s, self.lat_offset, self.heading_err,
                self.speed, self.vx, self.vy, self.yaw_rate, self.ax, self.ay,
                self.steer, self.pedal, *self.torques, *self.wheel_speeds,
                *self.slips, self.r_progr, self.r_ter, self.r_act, self.reward]

    @classmethod
    def from_row(cls, row: list) -> "StepRecord":
        v = [float(x) for x in row]
        return cls(int(v[0]), *v[1:13], np.array(v[13:17]), np.array(v[17:21]),
                   np.array(v[21:25]), *v[25:29])

    def __eq__(self, other) -> bool:
        return isinstance(other, StepRecord) and self.row() == other.row()


def record_from_info(step: int, info: dict) -> StepRecord:
    """Build a StepRecord from a RaceEnv step's info dict."""
    return StepRecord(
        step=step, t=info["time"], s=info["s"],
        lat_offset=info["lateral_offset"], heading_err=info["heading_error"],
        speed=info["speed"], vx=info["vx"], vy=info["vy"],
        yaw_rate=info["yaw_rate"], ax=info["ax"], ay=info["ay"],
        steer=info["steer_norm"], pedal=info["pedal"],
        torques=np.asarray(info["torque_norm"], dtype=np.float64),
        wheel_speeds=np.asarray(info["wheel_speeds"], dtype=np.float64),
        slips=np.asarray(info["slip_ratios"], dtype=np.float64),
        r_progr=info["r_progr"], r_ter=info["r_ter"], r_act=info["r_act"],
        reward=info["r_progr"] + info["r_ter"] - info["r_act"])


# ---------------------------------------------------------------------------
# Writing and reading
# ---------------------------------------------------------------------------

class TelemetryWriter:
    """One CSV stream per episode; close() registers it in the directory's
    JSON index and flushes."""

    def __init__(self, directory, name: str):
        os.makedirs(directory, exist_ok=True)
        self.directory = str(directory)
        self.name = name
        self.path = os.path.join(self.directory, f"{name}.csv")
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(COLUMNS)
        self.n_records = 0

    def record(self, rec: StepRecord) -> None:
        self._csv.writerow([repr(x) if isinstance(x, float) else x
                            for x in rec.row()])
        self.n_records += 1

    def close(self, lap_time: float | None = None, termination: str = "none",
              **extra) -> None:
        self._fh.flush()
        self._fh.close()
        entry = {"name": self.name, "file": os.path.basename(self.path),
                 "steps": self.n_records, "lap_time": lap_time,
                 "termination": termination, **extra}
        index_path = os.path.join(self.directory, "index.json")
        doc = {"episodes": []}
        if os.path.exists(index_path):
            with open(index_path) as fh:
                doc = json.load(fh)
        doc["episodes"].append(entry)
        with open(index_path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def write_telemetry(records, directory, name: str, lap_time=None,
                    termination: str = "none", **extra) -> str:
    w = TelemetryWriter(directory, name)
    for rec in records:
        w.record(rec)
    w.close(lap_time=lap_time, termination=termination, **extra)
    return w.path


def read_telemetry(path) -> tuple[list[StepRecord], int]:
    """Parse a telemetry CSV. Corrupt data rows are skipped; the second
    return value counts them. A wrong header is an error naming the
    mismatch."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != COLUMNS:
            missing = [c for c in COLUMNS if c not in (header or [])]
            raise ValueError(f"{path}: telemetry header mismatch, "
                             f"missing columns {missing}")
        records = []
        warnings = 0
        for row in reader:
            if len(row) != len(COLUMNS):
                warnings += 1
                continue
            try:
                records.append(StepRecord.from_row(row))
            except ValueError:
                warnings += 1
    return records, warnings


def total_progress(records) -> float:
    return float(sum(r.r_progr for r in records))


# ---------------------------------------------------------------------------
# GG envelope
# ---------------------------------------------------------------------------

@dataclass
class GgEnvelope:
    """Max combined acceleration (in g) binned by direction atan2(ay, ax),
    plus phase peaks. Quadrant masks (thresholds in m/s^2): braking+turning
    ax < -1 and |ay| > 1; accel+turning mirrored; pure lateral |ay| > 1 with
    |ax| <= 1."""

    bin_width_deg: float
    bin_centers_deg: np.ndarray
    envelope_g: np.ndarray
    peak_pure_lateral: float
    peak_braking_turning: float
    peak_accel_turning: float
    peak_combined: float


def gg_envelope(records, bin_width_deg: float = 5.0) -> GgEnvelope:
    if not records:
        raise ValueError("gg_envelope needs at least one record")
    ax = np.array([r.ax for r in records])
    ay = np.array([r.ay for r in records])
    combined = np.hypot(ax, ay) / GRAVITY
    direction = np.degrees(np.arctan2(ay, ax)) % 360.0
    n_bins = int(round(360.0 / bin_width_deg))
    idx = np.minimum((direction / bin_width_deg).astype(int), n_bins - 1)
    env = np.zeros(n_bins)
    np.maximum.at(env, idx, combined)
    turning = np.abs(ay) > 1.0

    def peak(mask):
        return float(combined[mask].max()) if mask.any() else 0.0

    return GgEnvelope(
        bin_width_deg=bin_width_deg,
        bin_centers_deg=(np.arange(n_bins) + 0.5) * bin_width_deg,
        envelope_g=env,
        peak_pure_lateral=peak(turning & (np.abs(ax) <= 1.0)),
        peak_braking_turning=peak(turning & (ax < -1.0)),
        peak_accel_turning=peak(turning & (ax > 1.0)),
        peak_combined=float(combined.max()),
    )


# ---------------------------------------------------------------------------
# Corner segment report
# ---------------------------------------------------------------------------

@dataclass
class SegmentReport:
    s_from: float
    s_to: float
    n_samples: int
    direction: str              # "left" or "right" from mean yaw rate
    min_speed: float
    max_abs_steer: float
    mean_torques: np.ndarray    # per wheel FL FR RL RR
    inside_mean: float
    outside_mean: float
    outside_exceeds_inside: bool
    records: list = field(repr=False, default_factory=list)


def segment_report(records, s_from: float, s_to: float) -> SegmentReport:
    """Channels and per-wheel torque split over one centerline range."""
    if s_from >= s_to:
        raise ValueError("s_from must be < s_to")
    seg = [r for r in records if s_from <= r.s < s_to]
    if not seg:
        raise ValueError(f"no samples in s range [{s_from}, {s_to})")
    yaw = float(np.mean([r.yaw_rate for r in seg]))
    direction = "left" if yaw >= 0 else "right"
    torques = np.array([r.torques for r in seg])
    mean_t = torques.mean(axis=0)
    # inside = wheels toward the corner center
    if direction == "left":
        inside = [0, 2]     # FL, RL
        outside = [1, 3]
    else:
        inside = [1, 3]
        outside = [0, 2]
    inside_mean = float(mean_t[inside].mean())
    outside_mean = float(mean_t[outside].mean())
    return SegmentReport(
        s_from=s_from, s_to=s_to, n_samples=len(seg), direction=direction,
        min_speed=float(min(r.speed for r in seg)),
        max_abs_steer=float(max(abs(r.steer) for r in seg)),
        mean_torques=mean_t, inside_mean=inside_mean, outside_mean=outside_mean,
        outside_exceeds_inside=outside_mean > inside_mean, records=seg)


# ---------------------------------------------------------------------------
# Slip events (lock-up / wheelspin intervals)
# ---------------------------------------------------------------------------

@dataclass
class SlipEvent:
    kind: str        # "lock" or "spin"
    wheel: int       # 0..3 = FL FR RL RR
    start_step: int
    end_step: int
    peak_slip: float
    modulated: bool  # torque derivative changed sign inside the event


def slip_events(records, lock_threshold: float = 0.3,
                spin_threshold: float = 0.3) -> list[SlipEvent]:
    """Intervals of slip beyond threshold under the matching torque sign,
    annotated with whether the commanded torque was modulated within the
    interval (the ABS/ASR signature)."""
    if not 0.0 < lock_threshold <= 1.0 or not 0.0 < spin_threshold <= 1.0:
        raise ValueError("thresholds must be in (0, 1]")
    events: list[SlipEvent] = []
    for w in range(4):
        run_kind = None
        run: list[StepRecord] = []

        def flush():
            if run_kind is None or not run:
                return
            torq = [r.torques[w] for r in run]
            d = np.diff(torq)
            nz = d[np.abs(d) > 1e-12]
            modulated = bool(nz.size >= 2 and np.any(np.sign(nz[1:]) != np.sign(nz[:-1])))
            slips = [r.slips[w] for r in run]
            peak = min(slips) if run_kind == "lock" else max(slips)
            events.append(SlipEvent(run_kind, w, run[0].step, run[-1].step,
                                    float(peak), modulated))

        for r in records:
            if r.slips[w] < -lock_threshold and r.torques[w] < 0.0:
                kind = "lock"
            elif r.slips[w] > spin_threshold and r.torques[w] > 0.0:
                kind = "spin"
            else:
                kind = None
            if kind != run_kind:
                flush()
                run = []
                run_kind = kind
            if kind is not None:
                run.append(r)
        flush()
    events.sort(key=lambda e: (e.start_step, e.wheel))
    return events


# ---------------------------------------------------------------------------
# Learning curve
# ---------------------------------------------------------------------------

@dataclass
class LearningCurvePoint:
    step: int
    explored_lap_time: float | None
    exploited_lap_time: float | None
    termination: str


def learning_curve(log_path) -> tuple[list[LearningCurvePoint], int]:
    """Extract explored (stochastic training episodes) and exploited
    (deterministic evals) lap times from a training log. Corrupt lines are
    skipped and counted."""
    points: dict[int, LearningCurvePoint] = {}
    warnings = 0
    with open(log_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kind = rec["kind"]
                if kind not in ("episode", "eval"):
                    continue
                step = int(rec["step"])
                lap = rec.get("lap_time")
                term = str(rec.get("termination"))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                warnings += 1
                continue
            pt = points.get(step)
            if pt is None:
                pt = LearningCurvePoint(step, None, None, term)
                points[step] = pt
            if kind == "episode":
                if lap is not None and (pt.explored_lap_time is None
                                        or lap < pt.explored_lap_time):
                    pt.explored_lap_time = lap
            else:
                pt.exploited_lap_time = lap
                pt.termination = term
    return [points[k] for k in sorted(points)], warnings


def write_learning_curve_csv(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "explored_lap_time", "exploited_lap_time", "termination"])
        for p in points:
            w.writerow([p.step,
                        "" if p.explored_lap_time is None else repr(p.explored_lap_time),
                        "" if p.exploited_lap_time is None else repr(p.exploited_lap_time),
                        p.termination])


# ---------------------------------------------------------------------------
# Plots (SVG via the Agg backend)
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_learning_curve(points, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ex = [(p.step, p.explored_lap_time) for p in points
          if p.explored_lap_time is not None]
    de = [(p.step, p.exploited_lap_time) for p in points
          if p.exploited_lap_time is not None]
    if ex:
        ax.plot(*zip(*ex), ".", ms=4, color="tab:blue", label="explored lap times")
    if de:
        ax.plot(*zip(*de), "-o", ms=3, color="tab:red", label="exploited lap times")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("lap time [s]")
    ax.legend(loc="best")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_gg(named_records: dict, path) -> None:
    """GG scatter + binned envelope for one or more laps."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    colors = ["tab:blue", "tab:red", "tab:green", "tab:orange"]
    for (name, records), color in zip(named_records.items(), colors):
        axs = np.array([r.ax for r in records]) / GRAVITY
        ays = np.array([r.ay for r in records]) / GRAVITY
        ax.plot(ays, axs, ".", ms=2, alpha=0.4, color=color, label=name)
        env = gg_envelope(records)
        ang = np.radians(env.bin_centers_deg)
        mask = env.envelope_g > 0
        ax.plot(env.envelope_g[mask] * np.sin(ang[mask]),
                env.envelope_g[mask] * np.cos(ang[mask]),
                "-", lw=1.0, color=color, alpha=0.9)
    ax.set_xlabel("lateral acceleration [g]")
    ax.set_ylabel("longitudinal acceleration [g]")
    ax.axhline(0, color="k", lw=0.5)
    ax.axvline(0, color="k", lw=0.5)
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_lap_channels(named_records: dict, path, s_range=None) -> None:
    """Stacked per-distance channel panels: steering, pedal, wheel torques,
    speeds, lateral position (one lap per line style/color)."""
    plt = _plt()
    fig, axes = plt.subplots(5, 1, figsize=(10, 11), sharex=True)
    colors = ["tab:blue", "tab:red", "tab:green", "tab:orange"]
    wheel_colors = ["tab:blue", "tab:cyan", "tab:red", "tab:orange"]
    for (name, records), color in zip(named_records.items(), colors):
        if s_range is not None:
            records = [r for r in records if s_range[0] <= r.s < s_range[1]]
        s = np.array([r.s for r in records])
        order = np.argsort(s)
        s = s[order]
        recs = [records[i] for i in order]
        axes[0].plot(s, [r.steer for r in recs], color=color, lw=0.9, label=name)
        axes[1].plot(s, [r.pedal for r in recs], color=color, lw=0.9, label=name)
        tq = np.array([r.torques for r in recs])
        for w, wname in enumerate(("FL", "FR", "RL", "RR")):
            axes[2].plot(s, tq[:, w], lw=0.8, color=wheel_colors[w],
                         alpha=0.9 if color == "tab:blue" else 0.45,
                         ls="-" if color == "tab:blue" else "--",
                         label=f"{name} {wname}")
        axes[3].plot(s, [r.speed for r in recs], color=color, lw=1.1, label=name)
        ws = np.array([r.wheel_speeds for r in recs])
        for w in range(4):
            axes[3].plot(s, ws[:, w], lw=0.5, color=color, alpha=0.35)
        axes[4].plot(s, [r.lat_offset for r in recs], color=color, lw=0.9, label=name)
    axes[0].set_ylabel("steer [-1, 1]")
    axes[1].set_ylabel("pedal [-1, 1]")
    axes[2].set_ylabel("wheel torque [-1, 1]")
    axes[2].legend(fontsize=6, ncol=4, loc="upper right")
    axes[3].set_ylabel("speed [m/s]")
    axes[4].set_ylabel("lateral position")
    axes[4].set_ylim(-1.3, 1.3)
    axes[4].axhline(1.0, color="k", lw=0.5, ls=":")
    axes[4].axhline(-1.0, color="k", lw=0.5, ls=":")
    axes[4].set_xlabel("centerline distance [m]")
    for a in axes:
        a.grid(alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_gg_csv(env: GgEnvelope, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center_deg", "envelope_g"])
        for c, g in zip(env.bin_centers_deg, env.envelope_g):
            w.writerow([repr(float(c)), repr(float(g))])
        w.writerow([])
        w.writerow(["peak_pure_lateral_g", repr(env.peak_pure_lateral)])
        w.writerow(["peak_braking_turning_g", repr(env.peak_braking_turning)])
        w.writerow(["peak_accel_turning_g", repr(env.peak_accel_turning)])
        w.writerow(["peak_combined_g", repr(env.peak_combined)])
