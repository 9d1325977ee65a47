"""Assembly of the stacked sparse least-squares system.

The decision vector is x = [q; xbar]: path flows q indexed by (od pair, path,
interval) followed by one nonnegative slack per (node, interval).  Four row
blocks act on it:

* base: observation rows, one per (link, interval); entry = DAR * route
  portion, target = observed link flow.
* lower_bound: one row per (node, interval); +1 on flows starting or ending
  at the node in that interval, -1 on the node's slack, target = discounted
  local-road bound.
* symmetry: one row per (day, unordered region pair); +1 on one direction's
  flows over the day, -1 on the reverse direction, target 0.
* total_flow: one row per day; +1 on every flow in the day, target = the
  base-stage solution's daily total.

Only the lower-bound block touches slack columns.  Block weights are the
regularization multipliers; the base block's weight is fixed at one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import OdflowError
from .grid import TimeGrid
from .network import TrafficNetwork

BLOCK_NAMES = ("base", "lower_bound", "symmetry", "total_flow")


class ProblemError(OdflowError):
    pass


class DimensionMismatch(ProblemError):
    pass


class MissingBaseEstimate(ProblemError):
    pass


class NegativeVariable(ProblemError):
    pass


@dataclass(frozen=True)
class VariableIndex:
    """Column catalog: q block (od, path, interval) then slack block (node, interval).

    Ordering is lexicographic within each block, so serialization is stable.
    """

    od_path_counts: tuple[int, ...]
    n_intervals: int
    node_ids: tuple[str, ...]

    def __post_init__(self):
        offsets = np.concatenate([[0], np.cumsum(self.od_path_counts)]).astype(np.int64)
        object.__setattr__(self, "_offsets", offsets)

    @classmethod
    def for_network(cls, net: TrafficNetwork, grid: TimeGrid) -> "VariableIndex":
        counts = tuple(len(od.paths) for od in net.require_od_pairs())
        return cls(od_path_counts=counts, n_intervals=grid.n_intervals,
                   node_ids=tuple(net.nodes))

    @property
    def n_od(self) -> int:
        return len(self.od_path_counts)

    @property
    def n_q(self) -> int:
        return int(self._offsets[-1]) * self.n_intervals

    @property
    def n_slack(self) -> int:
        return len(self.node_ids) * self.n_intervals

    @property
    def n_cols(self) -> int:
        return self.n_q + self.n_slack

    def q_col(self, od: int, k: int, t: int) -> int:
        if not 0 <= od < self.n_od:
            raise DimensionMismatch(f"od index {od} outside catalog of {self.n_od}")
        if not 0 <= k < self.od_path_counts[od]:
            raise DimensionMismatch(f"path {k} outside od {od}")
        if not 0 <= t < self.n_intervals:
            raise DimensionMismatch(f"interval {t} outside grid of {self.n_intervals}")
        return (int(self._offsets[od]) + k) * self.n_intervals + t

    def slack_col(self, node_idx: int, t: int) -> int:
        if not 0 <= node_idx < len(self.node_ids):
            raise DimensionMismatch(f"node index {node_idx} out of range")
        if not 0 <= t < self.n_intervals:
            raise DimensionMismatch(f"interval {t} outside grid of {self.n_intervals}")
        return self.n_q + node_idx * self.n_intervals + t

    def decode_q(self, col: int) -> tuple[int, int, int]:
        """(od, path, interval) owning a q column."""
        if not 0 <= col < self.n_q:
            raise DimensionMismatch(f"column {col} is not a q column")
        flat, t = divmod(col, self.n_intervals)
        od = int(np.searchsorted(self._offsets, flat, side="right")) - 1
        return od, flat - int(self._offsets[od]), t

    def q_part(self, x: np.ndarray) -> np.ndarray:
        return x[: self.n_q]


@dataclass(eq=False)
class SparseBlock:
    """One row block: COO triplets, target vector and regularization weight."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    target: np.ndarray
    weight: float = 1.0
    _csr: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if not (self.rows.shape == self.cols.shape == self.vals.shape):
            raise DimensionMismatch("triplet arrays must share a shape")
        if self.target.shape != (self.n_rows,):
            raise DimensionMismatch(
                f"target length {self.target.shape} != row count {self.n_rows}")
        if self.rows.size:
            if self.rows.min() < 0 or self.rows.max() >= self.n_rows:
                raise DimensionMismatch("row index out of range")
            if self.cols.min() < 0 or self.cols.max() >= self.n_cols:
                raise DimensionMismatch("column index out of range")
        if self.weight < 0:
            raise ValueError("block weight must be nonnegative")

    @property
    def matrix(self) -> sp.csr_matrix:
        """CSR form; duplicate coordinates are summed here."""
        if self._csr is None:
            coo = sp.coo_matrix((self.vals, (self.rows, self.cols)),
                                shape=(self.n_rows, self.n_cols))
            self._csr = coo.tocsr()
        return self._csr

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x - self.target

    def residual_norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.residual(x)))

    def with_weight(self, weight: float) -> "SparseBlock":
        return SparseBlock(self.n_rows, self.n_cols, self.rows, self.cols,
                           self.vals, self.target, weight, self._csr)


@dataclass
class DodeProblem:
    """Finalized stacked problem; immutable once handed to the solver."""

    var_index: VariableIndex
    base: SparseBlock
    lower_bound: SparseBlock | None = None
    symmetry: SparseBlock | None = None
    total_flow: SparseBlock | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, block in self.named_blocks():
            if block.n_cols != self.var_index.n_cols:
                raise DimensionMismatch(
                    f"{name} block has {block.n_cols} columns, expected {self.var_index.n_cols}")
            # only the lower-bound rows may touch slack columns
            if name != "lower_bound" and block.cols.size:
                if block.cols.max() >= self.var_index.n_q:
                    raise DimensionMismatch(f"{name} block has slack-column entries")

    def named_blocks(self):
        for name in BLOCK_NAMES:
            block = getattr(self, name)
            if block is not None:
                yield name, block

    @property
    def weights(self) -> dict[str, float]:
        return {name: block.weight for name, block in self.named_blocks()}


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    eps_b: float
    eps_lb: float
    eps_s: float
    eps_tau: float


def objective_value(problem: DodeProblem, x: np.ndarray) -> ObjectiveBreakdown:
    """Unweighted residual norms per block plus the weighted total."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.var_index.n_cols,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({problem.var_index.n_cols},)")
    if (x < 0).any():
        raise NegativeVariable("x must be componentwise nonnegative")
    norms = {name: block.residual_norm(x) for name, block in problem.named_blocks()}
    eps_b = norms.get("base", 0.0)
    eps_lb = norms.get("lower_bound", 0.0)
    eps_s = norms.get("symmetry", 0.0)
    eps_tau = norms.get("total_flow", 0.0)
    weights = problem.weights
    total = (eps_b ** 2
             + weights.get("lower_bound", 0.0) * eps_lb ** 2
             + weights.get("symmetry", 0.0) * eps_s ** 2
             + weights.get("total_flow", 0.0) * eps_tau ** 2)
    return ObjectiveBreakdown(total=total, eps_b=eps_b, eps_lb=eps_lb,
                              eps_s=eps_s, eps_tau=eps_tau)


def assemble_base(net: TrafficNetwork, dar, route_choice, link_flows,
                  var_index: VariableIndex) -> SparseBlock:
    """Observation block: row (link a, interval t), entry DAR * route portion."""
    od_pairs = net.require_od_pairs()
    link_row = {lid: i for i, lid in enumerate(link_flows.link_ids)}
    n_links = len(link_flows.link_ids)
    n_t = var_index.n_intervals
    if link_flows.values.shape[1] != n_t:
        raise DimensionMismatch("link flows do not cover the grid")
    rows, cols, vals = [], [], []
    for (od, k, lid, t, t_prime), ratio in dar.items():
        if not 0 <= od < len(od_pairs) or not 0 <= k < len(od_pairs[od].paths):
            raise DimensionMismatch(f"DAR entry ({od}, {k}) outside the OD catalog")
        if lid not in link_row:
            continue  # link without observations contributes no row
        value = ratio * route_choice.portion(od, k, t_prime)
        if value == 0.0:
            continue
        rows.append(t * n_links + link_row[lid])
        cols.append(var_index.q_col(od, k, t_prime))
        vals.append(value)
    # target ordered time-major to match the rows: y = [y(t)]_t, y(t) = [y_a]_a
    target = link_flows.values.T.ravel()
    return SparseBlock(n_rows=n_links * n_t, n_cols=var_index.n_cols,
                       rows=np.array(rows), cols=np.array(cols), vals=np.array(vals),
                       target=target, weight=1.0)


def assemble_lower_bound(net: TrafficNetwork, lower_bounds: np.ndarray,
                         var_index: VariableIndex, weight: float = 1.0) -> SparseBlock:
    """Lower-bound block: flows starting/ending at a node minus its slack."""
    od_pairs = net.require_od_pairs()
    node_idx = {nid: i for i, nid in enumerate(var_index.node_ids)}
    n_nodes = len(var_index.node_ids)
    n_t = var_index.n_intervals
    lower_bounds = np.asarray(lower_bounds, dtype=np.float64)
    if lower_bounds.shape != (n_nodes, n_t):
        raise DimensionMismatch(
            f"lower bounds shape {lower_bounds.shape} != ({n_nodes}, {n_t})")
    rows, cols, vals = [], [], []
    for od, pair in enumerate(od_pairs):
        for node in (pair.origin, pair.destination):
            i = node_idx[node]
            for k in range(len(pair.paths)):
                for t in range(n_t):
                    rows.append(t * n_nodes + i)
                    cols.append(var_index.q_col(od, k, t))
                    vals.append(1.0)
    for i in range(n_nodes):
        for t in range(n_t):
            rows.append(t * n_nodes + i)
            cols.append(var_index.slack_col(i, t))
            vals.append(-1.0)
    target = lower_bounds.T.ravel()
    return SparseBlock(n_rows=n_nodes * n_t, n_cols=var_index.n_cols,
                       rows=np.array(rows), cols=np.array(cols), vals=np.array(vals),
                       target=target, weight=weight)


def region_pairs(region_index) -> list[tuple[str, str]]:
    """Unordered region pairs (i < j) spanned by the OD catalog."""
    regions = sorted({r for key in region_index for r in key})
    return [(a, b) for ai, a in enumerate(regions) for b in regions[ai + 1:]]


def assemble_symmetry(net: TrafficNetwork, region_index, grid: TimeGrid,
                      var_index: VariableIndex, weight: float = 1.0) -> SparseBlock:
    """Daily directional-balance block over unordered region pairs."""
    od_pairs = net.require_od_pairs()
    pairs = region_pairs(region_index)
    n_pairs = len(pairs)
    rows, cols, vals = [], [], []
    for d in range(grid.n_days):
        ts = grid.day_intervals(d)
        for p, (ri, rj) in enumerate(pairs):
            row = d * n_pairs + p
            for sign, key in ((1.0, (ri, rj)), (-1.0, (rj, ri))):
                for od in sorted(region_index.get(key, ())):
                    for k in range(len(od_pairs[od].paths)):
                        for t in ts:
                            rows.append(row)
                            cols.append(var_index.q_col(od, k, t))
                            vals.append(sign)
    n_rows = grid.n_days * n_pairs
    return SparseBlock(n_rows=n_rows, n_cols=var_index.n_cols,
                       rows=np.array(rows), cols=np.array(cols), vals=np.array(vals),
                       target=np.zeros(n_rows), weight=weight)


def assemble_total_flow(grid: TimeGrid, base_estimate_q: np.ndarray | None,
                        var_index: VariableIndex, weight: float = 1.0) -> SparseBlock:
    """Daily-total block anchored to the base-stage solution."""
    if base_estimate_q is None:
        raise MissingBaseEstimate("total-flow block needs the base-stage q")
    q_hat = np.asarray(base_estimate_q, dtype=np.float64)
    if q_hat.shape != (var_index.n_q,):
        raise DimensionMismatch(f"base estimate length {q_hat.shape} != ({var_index.n_q},)")
    n_t = var_index.n_intervals
    rows, cols, vals = [], [], []
    target = np.zeros(grid.n_days)
    flat_paths = int(var_index.n_q // n_t)
    for d in range(grid.n_days):
        ts = grid.day_intervals(d)
        for flat in range(flat_paths):
            for t in ts:
                col = flat * n_t + t
                rows.append(d)
                cols.append(col)
                vals.append(1.0)
                target[d] += q_hat[col]
    return SparseBlock(n_rows=grid.n_days, n_cols=var_index.n_cols,
                       rows=np.array(rows), cols=np.array(cols), vals=np.array(vals),
                       target=target, weight=weight)


def save_problem(problem: DodeProblem, path) -> None:
    """Text dump: header with dims/weights, then per-block triplet sections.

    Floats are written as C99 hex so the dump round-trips bit-exactly.
    """
    vi = problem.var_index
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("odflow-problem v1\n")
        fh.write(f"n_intervals {vi.n_intervals}\n")
        fh.write("od_path_counts " + " ".join(map(str, vi.od_path_counts)) + "\n")
        fh.write("node_ids " + " ".join(vi.node_ids) + "\n")
        for key, value in sorted(problem.metadata.items()):
            fh.write(f"meta {key} {value}\n")
        for name, block in problem.named_blocks():
            fh.write(f"block {name} rows {block.n_rows} cols {block.n_cols} "
                     f"nnz {block.vals.size} weight {float(block.weight).hex()}\n")
            for r, c, v in zip(block.rows, block.cols, block.vals):
                fh.write(f"{r} {c} {float(v).hex()}\n")
            fh.write("target " + " ".join(float(v).hex() for v in block.target) + "\n")


def load_problem(path) -> DodeProblem:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "odflow-problem v1":
            raise ProblemError(f"not a problem dump: {path}")
        n_intervals = int(fh.readline().split()[1])
        od_path_counts = tuple(int(v) for v in fh.readline().split()[1:])
        node_ids = tuple(fh.readline().split()[1:])
        vi = VariableIndex(od_path_counts=od_path_counts, n_intervals=n_intervals,
                           node_ids=node_ids)
        metadata = {}
        blocks: dict[str, SparseBlock] = {}
        line = fh.readline()
        while line:
            parts = line.split()
            if parts[0] == "meta":
                metadata[parts[1]] = " ".join(parts[2:])
                line = fh.readline()
                continue
            if parts[0] != "block":
                raise ProblemError(f"unexpected line in dump: {line!r}")
            name = parts[1]
            n_rows, n_cols, nnz = int(parts[3]), int(parts[5]), int(parts[7])
            weight = float.fromhex(parts[9])
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz, dtype=np.float64)
            for i in range(nnz):
                r, c, v = fh.readline().split()
                rows[i], cols[i], vals[i] = int(r), int(c), float.fromhex(v)
            tparts = fh.readline().split()
            if tparts[0] != "target":
                raise ProblemError("malformed block: missing target")
            target = np.array([float.fromhex(v) for v in tparts[1:]])
            blocks[name] = SparseBlock(n_rows=n_rows, n_cols=n_cols, rows=rows,
                                       cols=cols, vals=vals, target=target, weight=weight)
            line = fh.readline()
    return DodeProblem(var_index=vi, base=blocks["base"],
                       lower_bound=blocks.get("lower_bound"),
                       symmetry=blocks.get("symmetry"),
                       total_flow=blocks.get("total_flow"),
                       metadata=metadata)
