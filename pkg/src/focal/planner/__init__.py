"""Split-point selection, tau search and the evaluation harness they use."""
from .energy import (
    EnergyProfile,
    energy_table,
    measure_overhead_c,
    overhead_from_costs,
    profile_energy,
    project_energy,
    select_k,
)
from .evaluate import DatasetOracle, EvalReport, evaluate_model, improvement, relative_change
from .search import (
    INFEASIBLE,
    SUCCESS,
    TIMED_OUT,
    SearchConfig,
    SearchRecord,
    SearchTrace,
    calibration_sums,
    search_tau,
)
