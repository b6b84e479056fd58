"""Discrete-event simulator for KV-cache admission scheduling in continuous-batching LLM serving."""

from .engine import CostModel, SimConfig, SimResult, Simulation, run, step_invariant_check
from .errors import ConfigError, IntegrityError
from .metrics import MetricsReport, build_report, compute_goodput, compute_outcomes
from .schedulers import Aggressive, Conservative, Oracle, PastFuture, make_policy
from .workload import (
    ClosedLoop,
    OpenLoop,
    RequestSpec,
    WorkloadConfig,
    concat_workloads,
    gen_uniform_workload,
    load_trace,
    preset_config,
)

__version__ = "0.1.0"
