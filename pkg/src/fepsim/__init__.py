"""fepsim: a deterministic MANET simulator with the FEP energy-preservation
overlay (fuzzy SL-REQ sleep grants, per-edge naps, zero-cost multipath route
switching) and a paired baseline/fep benchmark harness."""

from .config import ConfigError, ScenarioConfig, SessionSpec, load_config
from .metrics import MetricsReport, aggregate, improvement_pct, paired_summary
from .sim import RunResult, Simulation, SimulationError, run_scenario
from .slreq import (
    ClBounds,
    FormulaVariant,
    FuzzyGrade,
    HopSessionView,
    PhRecord,
    SleepDecision,
    SlReqTrace,
    combine_slpr,
    combine_temp,
    compute_ccs,
    compute_cl,
    compute_f1,
    compute_f2,
    compute_ph,
    enable_flags,
    evaluate,
    evaluate_trace,
    fuzzify_cl,
    fuzzify_unit,
    sleep_duration,
)

__version__ = "0.1.0"

__all__ = [
    "ClBounds",
    "ConfigError",
    "FormulaVariant",
    "FuzzyGrade",
    "HopSessionView",
    "MetricsReport",
    "PhRecord",
    "RunResult",
    "ScenarioConfig",
    "SessionSpec",
    "Simulation",
    "SimulationError",
    "SleepDecision",
    "SlReqTrace",
    "aggregate",
    "combine_slpr",
    "combine_temp",
    "compute_ccs",
    "compute_cl",
    "compute_f1",
    "compute_f2",
    "compute_ph",
    "enable_flags",
    "evaluate",
    "evaluate_trace",
    "fuzzify_cl",
    "fuzzify_unit",
    "improvement_pct",
    "load_config",
    "paired_summary",
    "run_scenario",
    "sleep_duration",
]
