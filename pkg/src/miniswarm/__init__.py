"""Desk-scale multi-drone coordination stack.

A library plus CLI that flies virtual COTS-style drones over a Tello-shaped
datagram protocol, behind address-translating relays with configurable
network impairment, compares snapshot relocalization against a sequential
estimator under link outages, and benchmarks the whole loop.
"""

from .state import (
    BodyVelocityCmd,
    DroneHealth,
    ErrorVector4,
    FleetState,
    Pose4,
    assemble_fleet_state,
    normalize_yaw,
)
from .control import (
    ControllerState,
    FilterCoeffs,
    GainSet,
    RateLimits,
    RcCommand,
    compute_error,
    filter_step,
    pd_control,
    saturate_to_rc,
    step_controller,
    world_to_body,
)
from .fabric import Fabric, LinkProfile, RelayNode, build_fabric
from .endpoint import DroneEndpoint, FlightMode, PlantParams, PlantState, dynamics_step
from .localization import (
    MapEstimatorParams,
    MapEstimatorState,
    MapStatus,
    OracleNoise,
    PoseFix,
    Relocalizer,
    SequentialMapLocalizer,
    map_step,
    mle_fix,
)
from .fleet import (
    DroneSession,
    Geofence,
    MissionPlan,
    SessionFsm,
    plan_letter_trajectory,
    session_step,
)
from .manager import FleetManager
from .metrics import LatencyReport, SuccessReport, associate, compute_ape, latency_stats
from .config import FleetConfig, load_config
from .sim import RunResult, SwarmSimulation

__version__ = "0.1.0"
