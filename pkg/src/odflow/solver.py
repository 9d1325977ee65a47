"""Projected-gradient solver for the stacked nonnegative least-squares problem.

The objective is the weighted sum of squared block residuals; its gradient is
2 * sum_blocks w * A^T (A x - b).  Each update steps against the gradient and
clamps negatives to zero.  The default step is the reciprocal of an estimated
gradient Lipschitz constant (power iteration on the stacked normal matrix),
which keeps full-batch epochs nonincreasing.  Stochastic mode visits uniformly
shuffled row batches without replacement and decays the step per epoch.
Everything is driven by one seeded generator, so a fixed seed reproduces the
result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import OdflowError
from .grid import TimeGrid
from .network import TrafficNetwork, network_digest, region_flow_index
from .problem import (DodeProblem, ObjectiveBreakdown, SparseBlock, VariableIndex,
                      assemble_base, assemble_lower_bound, assemble_symmetry,
                      assemble_total_flow, objective_value)

_CONVERGE_STREAK = 3
_DIVERGE_STREAK = 10
_POWER_ITERATIONS = 20
_LIPSCHITZ_MARGIN = 1.001


class SolverError(OdflowError):
    pass


class Diverged(SolverError):
    """Objective grew for too many consecutive full-batch epochs."""


@dataclass(frozen=True)
class SolverOptions:
    max_epochs: int = 500
    batch_rows: int | str = "all"
    initial_step: float | None = None
    step_decay: float = 0.995
    tolerance: float = 1e-6
    seed: int = 0
    init_mode: str = "zeros"
    init_value: float = 1.0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if self.init_mode not in ("zeros", "uniform"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.batch_rows != "all" and int(self.batch_rows) < 1:
            raise ValueError("batch_rows must be 'all' or a positive count")


@dataclass(frozen=True)
class Weights:
    """Regularization multipliers for the extended model."""

    eta: float = 1.0
    beta: float = 10.0
    gamma: float = 1.0


@dataclass(frozen=True)
class ErrorReport:
    eps_b: float
    eps_s: float
    eps_lb: float
    eps_tau: float
    total_flow: float
    objective: float
    epochs_run: int
    converged: bool


@dataclass(frozen=True)
class OdEstimate:
    """Nonnegative solution vector with its column catalog and error report."""

    x: np.ndarray
    var_index: VariableIndex
    report: ErrorReport

    @property
    def q(self) -> np.ndarray:
        return self.var_index.q_part(self.x)


def _stack(problem: DodeProblem) -> tuple[sp.csr_matrix, np.ndarray]:
    """Stack blocks with positive weight, scaled by sqrt(weight)."""
    mats, targets = [], []
    for _name, block in problem.named_blocks():
        if block.weight <= 0:
            continue
        scale = np.sqrt(block.weight)
        mats.append(block.matrix * scale)
        targets.append(block.target * scale)
    matrix = sp.vstack(mats, format="csr")
    return matrix, np.concatenate(targets)


def _estimate_lipschitz(matrix: sp.csr_matrix, rng: np.random.Generator) -> float:
    """Gradient Lipschitz constant 2*lambda_max(M^T M), by power iteration."""
    n = matrix.shape[1]
    v = rng.standard_normal(n)
    norm = np.linalg.norm(v)
    if norm == 0:
        return 0.0
    v /= norm
    lam = 0.0
    for _ in range(_POWER_ITERATIONS):
        w = matrix.T @ (matrix @ v)
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        lam = norm
        v = w / norm
    return 2.0 * lam * _LIPSCHITZ_MARGIN


def gradient(problem: DodeProblem, x: np.ndarray) -> np.ndarray:
    """Gradient of the weighted objective: 2 * sum_blocks w * A^T (A x - b)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(problem.var_index.n_cols)
    for _name, block in problem.named_blocks():
        if block.weight == 0:
            continue
        grad += (2.0 * block.weight) * (block.matrix.T @ block.residual(x))
    return grad


def _build_report(problem: DodeProblem, x: np.ndarray, epochs: int, converged: bool) -> ErrorReport:
    breakdown: ObjectiveBreakdown = objective_value(problem, x)
    return ErrorReport(eps_b=breakdown.eps_b, eps_s=breakdown.eps_s,
                       eps_lb=breakdown.eps_lb, eps_tau=breakdown.eps_tau,
                       total_flow=float(problem.var_index.q_part(x).sum()),
                       objective=breakdown.total, epochs_run=epochs, converged=converged)


def solve(problem: DodeProblem, options: SolverOptions = SolverOptions()) -> OdEstimate:
    """Minimize the stacked weighted objective over x >= 0."""
    rng = np.random.default_rng(options.seed)
    matrix, target = _stack(problem)
    n_rows, n_cols = matrix.shape

    if options.initial_step is not None:
        step = float(options.initial_step)
    else:
        lipschitz = _estimate_lipschitz(matrix, rng)
        step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    if options.init_mode == "zeros":
        x = np.zeros(n_cols)
    else:
        x = np.full(n_cols, float(options.init_value))

    full_batch = options.batch_rows == "all" or int(options.batch_rows) >= n_rows

    def objective(vec: np.ndarray) -> float:
        r = matrix @ vec - target
        return float(r @ r)

    obj_prev = objective(x)
    converged = False
    epochs = 0
    calm, growth = 0, 0
    for _epoch in range(options.max_epochs):
        if full_batch:
            grad = 2.0 * (matrix.T @ (matrix @ x - target))
            x = np.maximum(x - step * grad, 0.0)
        else:
            batch = int(options.batch_rows)
            order = rng.permutation(n_rows)
            for start in range(0, n_rows, batch):
                rows = order[start:start + batch]
                sub = matrix[rows]
                grad = 2.0 * (sub.T @ (sub @ x - target[rows]))
                x = np.maximum(x - step * grad, 0.0)
            step *= options.step_decay
        epochs += 1
        obj = objective(x)
        if obj > obj_prev:
            growth += 1
            if full_batch and growth >= _DIVERGE_STREAK:
                raise Diverged(
                    f"objective grew for {growth} consecutive epochs; reduce the step")
        else:
            growth = 0
        rel_change = abs(obj_prev - obj) / max(obj_prev, 1e-300)
        if rel_change < options.tolerance:
            calm += 1
            if calm >= _CONVERGE_STREAK:
                converged = True
                obj_prev = obj
                break
        else:
            calm = 0
        obj_prev = obj

    return OdEstimate(x=x, var_index=problem.var_index,
                      report=_build_report(problem, x, epochs, converged))


@dataclass(frozen=True)
class ProblemInputs:
    """Everything needed to assemble the stacked problem, on one grid."""

    network: TrafficNetwork
    grid: TimeGrid
    dar: object
    route_choice: object
    link_flows: object
    lower_bounds: np.ndarray
    metadata: dict = field(default_factory=dict)


def _assemble_stage1(inputs: ProblemInputs) -> DodeProblem:
    """Base-stage problem: regularizer blocks present but weighted zero."""
    vi = VariableIndex.for_network(inputs.network, inputs.grid)
    base = assemble_base(inputs.network, inputs.dar, inputs.route_choice,
                         inputs.link_flows, vi)
    lb = assemble_lower_bound(inputs.network, inputs.lower_bounds, vi, weight=0.0)
    sym = _symmetry_block(inputs, vi, weight=0.0)
    metadata = dict(inputs.metadata)
    metadata.setdefault("network_digest", network_digest(inputs.network))
    metadata.setdefault("grid", f"{inputs.grid.interval_minutes}min x "
                                f"{inputs.grid.n_days}d from {inputs.grid.day_labels[0]}")
    return DodeProblem(var_index=vi, base=base, lower_bound=lb, symmetry=sym,
                       metadata=metadata)


def _symmetry_block(inputs: ProblemInputs, vi: VariableIndex, weight: float) -> SparseBlock | None:
    nodes = inputs.network.nodes
    if any(nodes[od.origin].region_id is None or nodes[od.destination].region_id is None
           for od in inputs.network.require_od_pairs()):
        if weight > 0:
            raise SolverError("symmetry weight is positive but nodes lack regions")
        return None
    index = region_flow_index(inputs.network)
    return assemble_symmetry(inputs.network, index, inputs.grid, vi, weight=weight)


def _extend(stage1: DodeProblem, inputs: ProblemInputs, base_q: np.ndarray,
            weights: Weights) -> DodeProblem:
    total = assemble_total_flow(inputs.grid, base_q, stage1.var_index, weight=weights.gamma)
    symmetry = stage1.symmetry
    if symmetry is None and weights.beta > 0:
        symmetry = _symmetry_block(inputs, stage1.var_index, weights.beta)
    elif symmetry is not None:
        symmetry = symmetry.with_weight(weights.beta)
    return DodeProblem(var_index=stage1.var_index,
                       base=stage1.base,
                       lower_bound=stage1.lower_bound.with_weight(weights.eta),
                       symmetry=symmetry,
                       total_flow=total,
                       metadata=dict(stage1.metadata))


def two_stage_estimate(network: TrafficNetwork, grid: TimeGrid, dar, route_choice,
                       link_flows, lower_bounds, weights: Weights = Weights(),
                       options: SolverOptions = SolverOptions()
                       ) -> tuple[OdEstimate, OdEstimate]:
    """Base solve (all regularizer weights zero) followed by the extended solve.

    The base stage yields the preliminary flows whose daily totals anchor the
    extended stage's total-flow block.
    """
    inputs = ProblemInputs(network=network, grid=grid, dar=dar,
                           route_choice=route_choice, link_flows=link_flows,
                           lower_bounds=np.asarray(lower_bounds, dtype=np.float64))
    stage1 = _assemble_stage1(inputs)
    base_est = solve(stage1, options)
    stage2 = _extend(stage1, inputs, base_est.q, weights)
    extended_est = solve(stage2, options)
    return base_est, extended_est


@dataclass(frozen=True)
class SweepRow:
    """One weight combination's errors, in the sweep-table column layout."""

    beta: float
    eta: float
    gamma: float
    eps_b: float
    eps_s: float
    eps_lb: float
    total_flow: float


def weight_sweep(inputs: ProblemInputs, weight_grid, options: SolverOptions = SolverOptions()
                 ) -> list[SweepRow]:
    """Solve the extended model for every (beta, eta, gamma) combination.

    The base stage runs once; each grid row reports the extended solution's
    unweighted errors and total flow.
    """
    combos = [tuple(float(v) for v in combo) for combo in weight_grid]
    if not combos:
        raise SolverError("weight grid is empty")
    stage1 = _assemble_stage1(inputs)
    base_est = solve(stage1, options)
    rows = []
    for beta, eta, gamma in combos:
        stage2 = _extend(stage1, inputs, base_est.q, Weights(eta=eta, beta=beta, gamma=gamma))
        est = solve(stage2, options)
        rows.append(SweepRow(beta=beta, eta=eta, gamma=gamma,
                             eps_b=est.report.eps_b, eps_s=est.report.eps_s,
                             eps_lb=est.report.eps_lb, total_flow=est.report.total_flow))
    return rows
