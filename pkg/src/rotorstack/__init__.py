"""Deterministic software-in-the-loop multirotor flight stack.

Pipeline: mission reference -> receding-horizon tracker -> feedback
reference controller -> embedded attitude-rate autopilot -> simulated
plant, with a switchable bank of localization estimators in the loop.
"""

from .autopilot import AttitudeRateCommand, Autopilot, Mixer, TorqueCommand
from .control import (AGGRESSIVE, SMOOTH, ControlOutput, FullStateReference,
                      ReferenceController, se3_control, smooth_control)
from .estimation import (EstimatorBank, LocalizationSource, Measurement,
                         StateEstimate)
from .flightlog import FlightLog, emit_log, load_log, summarize
from .mission import (MissionState, Scenario, figure_eight_trajectory,
                      load_scenario, mission_step, run)
from .plant import (BatteryTelemetry, ImuNoise, ImuSample, PlantModel,
                    UavState, battery_telemetry, imu_measure, motor_thrust,
                    power_draw, step_dynamics)
from .platforms import (GRAVITY, DerivedParams, PlatformProfile,
                        ProfileRegistry, builtin_profiles, derive_params,
                        load_profiles, serialize_profiles, validate_profile)
from .tracker import (DesiredReference, MpcProblem, Tracker,
                      TrackerConstraints, TrajectorySample, load_trajectory,
                      mpc_solve)

__version__ = "0.1.0"
