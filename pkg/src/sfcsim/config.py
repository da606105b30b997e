"""Run configuration: JSON loading, validation, defaults, and hashing.

A config file may set any subset of the known keys; unknown keys are
rejected loudly so typos cannot silently fall back to defaults.  The
canonical-JSON hash of the fully resolved config is stamped into every
output file header for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    # environment
    gravity_mode: str = "point"  # point | uniform | off
    altitude_m: float = 200_000.0
    uniform_gravity_mps2: float = 9.1
    i_sp_s: float = 250.0
    tau_thrust_s: float = 0.02
    # seeker
    sigma_theta_rad: float = 1e-3
    sigma_omega_radps: float = 1e-3
    tau_angle_filter_s: float = 0.02
    fov_half_angle_deg: float = 30.0
    # integration
    nav_dt_s: float = 0.02
    fine_substeps: int = 300
    fine_switch_range_m: float = 1000.0
    timeout_s: float = 40.0
    disable_target_maneuver: bool = False
    # guidance (frozen after the ideal-conditions tuning gate)
    nav_gain: float = 4.0
    apn_weight: float = 0.5
    closing_speed_mps: float | None = None
    cmd_every_n: int = 2  # command slots last this many nav steps
    kf_accel_sigma_mps2: float = 30.0
    kf_accel_sigma_quiet_mps2: float = 2.0
    kf_man_tau_s: float = 1.5
    kf_sched_tau_s: float = 2.5
    kf_sched_gain: float = 1.2
    kf_sched_prior_mps2: float = 15.0
    kf_meas_floor_rad: float = 1e-4
    accel_deadband: float = 12.0
    divert_accel_ref_mps2: float = 100.0
    duty_leak: float = 0.97
    duty_fire_threshold: float = 0.5
    angle_chain: str = "deconvolve"  # deconvolve | matched
    att_corridor_rad: float = 0.15
    att_horizon_s: float = 0.4
    omega_damp_radps: float = 0.6
    terminal_quiet_s: float = 0.25
    handoff_s: float = 0.12
    # estimator
    hidden: int = 64
    learning_rate: float = 5e-5
    init_seed: int = 0
    # harness
    master_seed: int = 1234
    eval_episodes: int = 500
    # training schedule
    total_episodes: int = 4000
    update_every: int = 120
    buffer_capacity: int = 360
    segment_len: int = 60
    buffer_passes: int = 1
    whole_buffer_step: bool = False
    success_window_frac: float = 0.06

    def __post_init__(self):
        if self.gravity_mode not in ("point", "uniform", "off"):
            raise ValueError(f"unknown gravity_mode {self.gravity_mode!r}")
        if self.update_every > self.buffer_capacity:
            raise ValueError("update_every must not exceed buffer_capacity")
        if self.segment_len < 1 or self.fine_substeps < 1:
            raise ValueError("segment_len and fine_substeps must be >= 1")
        if self.cmd_every_n < 1:
            raise ValueError("cmd_every_n must be >= 1")
        if self.angle_chain not in ("deconvolve", "matched"):
            raise ValueError(f"unknown angle_chain {self.angle_chain!r}")
        if not 0.0 <= self.duty_leak <= 1.0:
            raise ValueError("duty_leak must be in [0, 1]")

    @property
    def fov_half_angle_rad(self) -> float:
        return math.radians(self.fov_half_angle_deg)

    @property
    def success_window(self) -> int:
        return max(1, round(self.success_window_frac * self.total_episodes))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def load_config(path: str | Path | None) -> RunConfig:
    """Resolve a config file against defaults; unknown keys are errors."""
    if path is None:
        return RunConfig()
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**raw)


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the fully resolved configuration."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# fields that alter only the training schedule or the harness, not the
# deployed closed loop; checkpoints remain valid across changes to these
TRAIN_ONLY_FIELDS = frozenset({
    "master_seed", "eval_episodes", "total_episodes", "update_every",
    "buffer_capacity", "segment_len", "buffer_passes", "whole_buffer_step",
    "success_window_frac", "learning_rate", "init_seed",
})


def compat_hash(cfg: RunConfig) -> str:
    """Digest of the fields a checkpoint must agree with at eval time."""
    d = {k: v for k, v in cfg.to_dict().items()
         if k not in TRAIN_ONLY_FIELDS}
    canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
