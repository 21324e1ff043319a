"""Reactive safe control: CBF-QP, dynamical-system modulation and modulated CBF-QP controllers."""

from .cbf import AlphaFn, BarrierMode, CbfQP, cbf_closed_form, cbf_qp_step
from .geometry import Circle, Funnel, Obstacle, OpenRing, boundary_value, eval_boundary
from .mcbf import OnMMcbfQP, RMcbfQP, rmcbf_closed_form
from .metrics import MetricsReport, compute_metrics
from .models import InputLimits, ModelKind, RobotModel
from .modulation import ModDS, ModulationSpec
from .qp import ActiveSetSolver, QProblem
from .simulation import Outcome, Scenario, TrajectoryRecord, run_scenario

__version__ = "0.1.0"
