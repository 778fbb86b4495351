"""Episodic training protocol, evaluation tasks and the PID baseline."""
from .episodes import (
    EPISODE_STEPS, HOLD_STEPS, EpisodeStats, EpisodeTrace, StateRepConfig, TargetSchedule,
    TraceStore, TrainConfig, TrainResult, build_learners, check_protocol, make_env, rng_streams,
    run_episode, train_controller,
    write_curve, write_diagnostics,
)
from .pid import ActiveMusclePattern, IntensityQuantizer, PidController, PidGains, pid_step
from .tasks import (
    DEFAULT_GAIN_GRIDS, TASK_PLANTS, TASKS, Controller, OracleController, PidTrackingController,
    RlController, TrackingMetrics, TrackingTrace, ZeroController, evaluate_tracking,
    hold_overshoots, task_targets, tracking_metrics, tune_pid,
)
from .checkpoints import load_controller, save_controller
