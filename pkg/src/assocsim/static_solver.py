"""Static association: convex traffic splitting over shared zones.

The decision variables are, per shared zone, a probability vector over the
zone's candidate stations. Loads are affine in these variables, so any convex
function of the load vector gives a convex program over a product of
simplices. The default objective is the mean file transfer time.

Solved by projected gradient with Armijo backtracking; infeasible starting
points are first handled by subgradient minimization of the maximum load.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .topology import Topology
from .traffic import TrafficSpec, UnstableLoadError, bs_loads

__all__ = [
    "AssociationSplit",
    "StaticObjective",
    "InfeasibleSplitError",
    "SolverDidNotConverge",
    "mean_transfer_time_objective",
    "objective_and_gradient",
    "solve_static",
    "project_to_simplex",
    "minimize_max_load",
]

# loads are kept strictly below this during the solve so gradients stay finite
_LOAD_GUARD = 1.0 - 1e-9


class InfeasibleSplitError(ValueError):
    """No split keeps every station's load below one."""

    def __init__(self, message: str, split=None, loads=None):
        super().__init__(message)
        self.split = split
        self.loads = loads


class SolverDidNotConverge(RuntimeError):
    pass


class AssociationSplit:
    """Per shared zone, a probability vector over its candidate stations."""

    def __init__(self, probs: Sequence[Sequence[float]]):
        self.probs = [np.asarray(p, dtype=float) for p in probs]

    def __len__(self) -> int:
        return len(self.probs)

    def __getitem__(self, idx: int) -> np.ndarray:
        return self.probs[idx]

    def __iter__(self):
        return iter(self.probs)

    @classmethod
    def uniform(cls, topology: Topology) -> "AssociationSplit":
        return cls(
            [np.full(len(z.candidates), 1.0 / len(z.candidates))
             for z in topology.shared_zones]
        )

    def feasibility_violation(self) -> float:
        """Worst deviation from the simplex constraints over all zones."""
        worst = 0.0
        for p in self.probs:
            worst = max(worst, abs(float(p.sum()) - 1.0), float(-(p.min(initial=0.0))))
        return worst

    def copy(self) -> "AssociationSplit":
        return AssociationSplit([p.copy() for p in self.probs])


@dataclass(frozen=True)
class StaticObjective:
    """A convex function of the load vector with its gradient.

    Convexity of caller-supplied objectives is assumed, not verified.
    ``stable_only`` marks objectives only defined for loads below one.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    stable_only: bool = False


def mean_transfer_time_objective(total_arrival_rate: float) -> StaticObjective:
    """Mean file transfer time: sum of load/(1-load) over arrival rate."""

    def value(rho: np.ndarray) -> float:
        if np.any(rho >= 1.0):
            raise UnstableLoadError("transfer time undefined at load >= 1")
        return float(np.sum(rho / (1.0 - rho)) / total_arrival_rate)

    def grad(rho: np.ndarray) -> np.ndarray:
        if np.any(rho >= 1.0):
            raise UnstableLoadError("transfer time undefined at load >= 1")
        return 1.0 / (1.0 - rho) ** 2 / total_arrival_rate

    return StaticObjective(value=value, grad=grad, name="mean-transfer-time",
                           stable_only=True)


def _load_gradients(topology: Topology, traffic: TrafficSpec) -> List[np.ndarray]:
    """d(load of candidate cell)/d(split entry), constant per zone entry."""
    sigma = traffic.mean_file_size_mb
    out = []
    for z in topology.shared_zones:
        out.append(
            np.array(
                [sigma * z.arrival_rate / topology.rate_of_class(cls)
                 for _, cls in z.candidates]
            )
        )
    return out


def objective_and_gradient(
    topology: Topology,
    traffic: TrafficSpec,
    split: AssociationSplit,
    objective: StaticObjective,
) -> Tuple[float, List[np.ndarray]]:
    """Objective value and its exact gradient w.r.t. every split entry."""
    rho = bs_loads(topology, traffic, split)
    val = objective.value(rho)
    du = objective.grad(rho)
    coeffs = _load_gradients(topology, traffic)
    grads = []
    for z, c in zip(topology.shared_zones, coeffs):
        cells = np.array([cell for cell, _ in z.candidates])
        grads.append(du[cells] * c)
    return val, grads


def project_to_simplex(v: Sequence[float]) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("expected a nonempty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("entries must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    k = ks[u - css / ks > 0][-1]
    tau = css[k - 1] / k
    return np.maximum(v - tau, 0.0)


def _flatten(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, float).ravel() for p in parts])


def _unflatten(x: np.ndarray, sizes: Sequence[int]) -> List[np.ndarray]:
    out, pos = [], 0
    for n in sizes:
        out.append(x[pos:pos + n])
        pos += n
    return out


def _project_product(x: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    return _flatten([project_to_simplex(p) for p in _unflatten(x, sizes)])


def minimize_max_load(
    topology: Topology,
    traffic: TrafficSpec,
    max_iter: int = 5000,
    seed_split: Optional[AssociationSplit] = None,
) -> Tuple[AssociationSplit, np.ndarray]:
    """Projected subgradient descent on the maximum station load.

    Used to find a stabilizing split when the uniform one is overloaded.
    Returns the best split found and its load vector.
    """
    split = seed_split.copy() if seed_split else AssociationSplit.uniform(topology)
    sizes = [len(z.candidates) for z in topology.shared_zones]
    if not sizes:
        return split, bs_loads(topology, traffic, split)

    coeffs = _load_gradients(topology, traffic)
    zone_cells = [np.array([c for c, _ in z.candidates])
                  for z in topology.shared_zones]
    x = _flatten(split.probs)
    best_x, best_val = x.copy(), float(bs_loads(topology, traffic, split).max())
    scale = max(float(np.max(np.abs(c))) for c in coeffs) or 1.0

    for k in range(max_iter):
        probs = _unflatten(x, sizes)
        rho = bs_loads(topology, traffic, probs)
        worst = int(np.argmax(rho))
        if rho[worst] < best_val:
            best_val = float(rho[worst])
            best_x = x.copy()
        # subgradient of max load: gradient of the worst station's load
        g = [np.where(cells == worst, c, 0.0)
             for cells, c in zip(zone_cells, coeffs)]
        step = 1.0 / (scale * np.sqrt(k + 1.0))
        x = _project_product(x - step * _flatten(g), sizes)

    best = AssociationSplit(_unflatten(best_x, sizes))
    return best, bs_loads(topology, traffic, best)


@dataclass
class StaticSolveResult:
    split: AssociationSplit
    loads: np.ndarray
    objective_value: float
    iterations: int
    projected_grad_norm: float
    objective_history: List[float] = field(default_factory=list)


def solve_static(
    topology: Topology,
    traffic: TrafficSpec,
    objective: Optional[StaticObjective] = None,
    tolerance: float = 1e-8,
    max_iter: int = 100_000,
) -> StaticSolveResult:
    """Minimize a convex objective of the loads over all feasible splits.

    Converges when the projected-gradient norm drops below ``tolerance``.
    Raises InfeasibleSplitError when no stabilizing split can be found and
    SolverDidNotConverge past the iteration cap.
    """
    if objective is None:
        lam_tot = topology.total_arrival_rate
        if lam_tot <= 0:
            raise ValueError("default objective needs a positive arrival rate")
        objective = mean_transfer_time_objective(lam_tot)

    sizes = [len(z.candidates) for z in topology.shared_zones]
    split = AssociationSplit.uniform(topology)
    if not sizes:
        rho = bs_loads(topology, traffic, split)
        return StaticSolveResult(split, rho, objective.value(rho), 0, 0.0, [])

    if objective.stable_only:
        rho = bs_loads(topology, traffic, split)
        if float(rho.max()) >= _LOAD_GUARD:
            split, rho = minimize_max_load(topology, traffic)
            if float(rho.max()) >= _LOAD_GUARD:
                raise InfeasibleSplitError(
                    f"no stabilizing split found: best max load {rho.max():.6f}",
                    split=split, loads=rho,
                )

    x = _flatten(split.probs)

    def evaluate(xv: np.ndarray):
        probs = AssociationSplit(_unflatten(xv, sizes))
        rho = bs_loads(topology, traffic, probs)
        if objective.stable_only and float(rho.max()) >= _LOAD_GUARD:
            return np.inf, None
        val, grads = objective_and_gradient(topology, traffic, probs, objective)
        return val, _flatten(grads)

    val, g = evaluate(x)
    if not np.isfinite(val):
        raise InfeasibleSplitError("starting split infeasible after preprocessing")

    history = [val]
    step = 1.0
    pg_norm = np.inf
    for it in range(1, max_iter + 1):
        pg = x - _project_product(x - g, sizes)
        pg_norm = float(np.linalg.norm(pg))
        if pg_norm < tolerance:
            probs = AssociationSplit(_unflatten(x, sizes))
            return StaticSolveResult(
                probs, bs_loads(topology, traffic, probs), val, it - 1,
                pg_norm, history,
            )
        # Armijo backtracking along the projected arc
        step = min(step * 2.0, 1e8)
        accepted = False
        for _ in range(200):
            x_new = _project_product(x - step * g, sizes)
            val_new, g_new = evaluate(x_new)
            decrease = float(np.dot(g, x_new - x))
            if np.isfinite(val_new) and val_new <= val + 1e-4 * decrease:
                accepted = True
                break
            step *= 0.5
        if not accepted or val_new > val + 1e-15:
            # objective change below floating-point resolution; accept only
            # if the stationarity measure is already near the tolerance
            if pg_norm > max(tolerance, 1e-6):
                raise SolverDidNotConverge(
                    f"line search stalled with projected gradient norm "
                    f"{pg_norm:.3e}"
                )
            probs = AssociationSplit(_unflatten(x, sizes))
            return StaticSolveResult(
                probs, bs_loads(topology, traffic, probs), val, it,
                pg_norm, history,
            )
        x, val, g = x_new, val_new, g_new
        history.append(val)

    raise SolverDidNotConverge(
        f"projected gradient norm {pg_norm:.3e} after {max_iter} iterations"
    )
