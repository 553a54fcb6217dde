"""torquelab: RL laboratory for a four-wheel independent-torque racecar.

A deterministic planar double-track vehicle simulator, a racing MDP with
progress-based rewards, a PPO trainer over parallel environments, and lap
telemetry analysis (GG envelopes, corner reports, slip events, learning
curves)."""

from .track import (Track, TrackFrame, TrackError, TrackSchemaError,
                    TrackValidationError, load_track, save_track,
                    generate_circuit, generate_oval, generate_paper_scale,
                    generate_straight, wrap_angle)
from .vehicle import (GRAVITY, TireParams, MotorCurve, VehicleParams,
                      VehicleState, WheelCommand, WHEEL_NAMES,
                      motor_torque_limit, normal_loads, slip_quantities,
                      tire_forces, physics_step, run_physics)
from .env import (EnvConfig, RaceEnv, StepResult, OBS_DIM, ACTIVE_4WD,
                  PASSIVE_4WD, TERMINATION_KINDS, progress_reward,
                  action_penalty, check_termination, build_observation,
                  ray_angles)
from .network import (PolicySpec, MLPPolicy, save_checkpoint, load_checkpoint,
                      config_hash)
from .ppo import (TrainConfig, RolloutBuffer, Adam, gae, lr_schedule,
                  sample_action, gaussian_log_prob, gaussian_entropy,
                  ppo_update, ppo_loss_and_grads, clip_grad_norm, train,
                  evaluate, EpisodeResult, TrainResult)
from .telemetry import (StepRecord, TelemetryWriter, record_from_info,
                        write_telemetry, read_telemetry, total_progress,
                        GgEnvelope, gg_envelope, SegmentReport, segment_report,
                        SlipEvent, slip_events, LearningCurvePoint,
                        learning_curve, write_learning_curve_csv,
                        plot_learning_curve, plot_gg, plot_lap_channels,
                        write_gg_csv)
from .driving import CenterlineDriver, drive_lap

__version__ = "0.1.0"
