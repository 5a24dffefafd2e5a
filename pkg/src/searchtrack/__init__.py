"""Multi-target search and track with GLMB beliefs and entropy-driven planning."""
__version__ = "0.1.0"

from .rfs import GlmbDensity, Label, LmbDensity, glmb_to_lmb, map_estimate  # noqa: E402
from .glmb import FilterConfig, MotionModel, SensorModel, predict, update  # noqa: E402
from .belief import Cluster, GaussianSpatial, PopulationPrior, UniformSpatial  # noqa: E402
from .planner import PlannerConfig, Workspace, lmb_entropy, plan  # noqa: E402
from .metrics import MetricConfig, ospa, ospa2_window  # noqa: E402
from .world import Scenario, ScenarioKind, generate_scenario  # noqa: E402
from .harness import run_episode, run_monte_carlo, summarize  # noqa: E402

__all__ = [
    "GlmbDensity", "Label", "LmbDensity", "glmb_to_lmb", "map_estimate",
    "FilterConfig", "MotionModel", "SensorModel", "predict", "update",
    "Cluster", "GaussianSpatial", "PopulationPrior", "UniformSpatial",
    "PlannerConfig", "Workspace", "lmb_entropy", "plan",
    "MetricConfig", "ospa", "ospa2_window",
    "Scenario", "ScenarioKind", "generate_scenario",
    "run_episode", "run_monte_carlo", "summarize",
]
