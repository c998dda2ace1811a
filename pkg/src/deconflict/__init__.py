"""Two-stage aircraft conflict resolution: maneuver selection, then recovery timing."""
from .avoidance import AvoidanceSolution, InfeasibleError, Maneuver, solve_avoidance
from .instances import Aircraft, Instance, InstanceError, ScenarioConfig, generate_cp, generate_rcp
from .recovery import OmegaTables, RecoveryGrid, RecoverySolution, solve_exact, solve_greedy
from .trajectory import Trajectory, VerificationReport, assemble, metrics, verify

__all__ = [
    "Aircraft", "AvoidanceSolution", "InfeasibleError", "Instance", "InstanceError", "Maneuver",
    "OmegaTables", "RecoveryGrid", "RecoverySolution", "ScenarioConfig", "Trajectory",
    "VerificationReport", "assemble", "generate_cp", "generate_rcp", "metrics", "solve_avoidance",
    "solve_exact", "solve_greedy", "verify",
]
