"""Dynamic origin-destination traffic flow estimation toolkit.

Estimates time-varying OD demand from link-level sensor data by assembling a
stacked regularized nonnegative least-squares problem (observation fit plus
local-road lower-bound, daily symmetry and total-flow terms) and solving it
with projected gradient descent in two stages.  Includes synthetic scenario
generation for validation and the statistical post-processing used to compare
traffic across periods and income strata.
"""

from .errors import OdflowError
from .grid import TimeGrid, make_grid
from .network import (
    DanglingReference,
    DisconnectedGraph,
    Link,
    NoPath,
    Node,
    OdPair,
    Path,
    Region,
    TrafficNetwork,
    UnassignedNode,
    build_network,
    enumerate_od_pairs,
    network_digest,
    region_flow_index,
    shortest_path,
)
from .ingest import (
    AllMissing,
    ArterialSensor,
    LinkFlows,
    NoSensorsOnLink,
    SensorSeries,
    ZeroSpeed,
    clean_sensors,
    clean_series,
    interpolate_missing,
    link_flow,
    link_flows,
    local_lower_bound,
    lower_bounds,
)
from .assignment import (
    DarTensor,
    RouteChoice,
    SpeedProfile,
    build_dar_tensor,
    build_route_choice,
    compute_dar,
    constant_speed_profile,
    path_arrival_ratios,
    route_choice_portions,
    speed_profile_from_sensors,
    trajectory,
)
from .problem import (
    DimensionMismatch,
    DodeProblem,
    MissingBaseEstimate,
    NegativeVariable,
    SparseBlock,
    VariableIndex,
    assemble_base,
    assemble_lower_bound,
    assemble_symmetry,
    assemble_total_flow,
    load_problem,
    objective_value,
    save_problem,
)
from .solver import (
    Diverged,
    ErrorReport,
    OdEstimate,
    ProblemInputs,
    SolverOptions,
    SweepRow,
    Weights,
    gradient,
    solve,
    two_stage_estimate,
    weight_sweep,
)
from .synth import ProfileParams, Scenario, demo_network, forward_simulate, generate_scenario
from .analysis import (
    DegenerateSample,
    InsufficientDays,
    IntervalScheme,
    KdeResult,
    MissingIncome,
    OdChangeRecord,
    RegionFlowMatrix,
    ZeroBaseline,
    ZipcodeIncome,
    classify_changes,
    district_income,
    kde,
    od_income_extrema,
    paired_t_test,
    percentage_change,
    region_flows,
    split_intervals,
)

__version__ = "0.1.0"
