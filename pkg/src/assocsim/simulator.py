"""Continuous-time simulation of the dynamic association model.

States are user counts per (station, rate class) and per (station, shared
zone). Arrivals are Poisson per zone; a user in a station with T active
users receives rate R/T (processor sharing), so each component of the state
departs at rate count * R / (file_size * T). Shared-zone arrivals trigger an
association decision, resolved instantaneously by the policy.

Besides the event-by-event simulator this module provides the uniformized
discrete-time view (used by the online learner) and an exact average-cost
solver for small truncated instances (relative value iteration), used as a
verification oracle.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .policies import PolicyParams, zone_action_probs, zone_score
from .state import UserConfiguration, empty_state, state_features
from .topology import Topology
from .traffic import TrafficSpec

__all__ = [
    "CostSpec",
    "Event",
    "FlowSimulator",
    "TruncationTooLarge",
    "ValueIterationDidNotConverge",
    "uniformization_bound",
    "enumerate_events",
    "cost_of_state",
    "run_time_average",
    "exact_average_cost",
]

# step codes returned by FlowSimulator
SELF_LOOP = 0
ARRIVAL_EXCLUSIVE = 1
ARRIVAL_SHARED = 2
DEPARTURE = 3


class TruncationTooLarge(ValueError):
    pass


class ValueIterationDidNotConverge(RuntimeError):
    pass


@dataclass(frozen=True)
class CostSpec:
    """Instantaneous state cost, decomposed into per-station local costs.

    total-users: local cost of station s is its number of active users.
    outage: local cost is 1 when some user of station s has instantaneous
    throughput below the target rate, else 0. Totals are exact sums of the
    locals, which is what the distributed learner relies on.
    """

    kind: str = "total-users"
    outage_target_mbps: float = 1.0

    def __post_init__(self):
        if self.kind not in ("total-users", "outage"):
            raise ValueError(f"unknown cost kind {self.kind!r}")
        if self.kind == "outage" and self.outage_target_mbps <= 0:
            raise ValueError("outage target must be positive")


@dataclass(frozen=True)
class Event:
    """One enabled transition with its intensity."""

    kind: str  # exclusive-arrival | shared-arrival | departure-exclusive | departure-shared
    rate: float
    cell: Optional[int] = None
    class_index: Optional[int] = None
    zone: Optional[int] = None
    candidate: Optional[int] = None
    action_probs: Optional[np.ndarray] = None


def uniformization_bound(topology: Topology, traffic: TrafficSpec) -> float:
    """Upper bound on the total event rate, valid in every state.

    Each station's total departure rate never exceeds max_rate / file_size,
    so arrivals plus num_cells * max_rate / file_size dominates.
    """
    return (
        topology.total_arrival_rate
        + topology.num_cells * topology.max_rate / traffic.mean_file_size_mb
    )


class _Model:
    """Flat component arrays compiled from a topology, for fast stepping.

    Components enumerate first the exclusive zones, then every (shared zone,
    candidate) pair; counts over components fully describe the state.
    """

    def __init__(self, topology: Topology, traffic: TrafficSpec):
        self.topology = topology
        self.traffic = traffic
        self.sigma = traffic.mean_file_size_mb
        self.num_cells = topology.num_cells
        self.num_classes = len(topology.rate_classes)

        excl = topology.exclusive_zones
        shared = topology.shared_zones
        self.num_exclusive = len(excl)
        self.num_shared = len(shared)
        self.shared_width = max((len(z.candidates) for z in shared), default=1)

        cells, classes, rates, zones, slots = [], [], [], [], []
        for z in excl:
            cell, cls = z.candidates[0]
            cells.append(cell)
            classes.append(cls)
            rates.append(topology.rate_of_class(cls))
            zones.append(-1)
            slots.append(-1)
        self.shared_comp_start = []
        for zi, z in enumerate(shared):
            self.shared_comp_start.append(len(cells))
            for k, (cell, cls) in enumerate(z.candidates):
                cells.append(cell)
                classes.append(cls)
                rates.append(topology.rate_of_class(cls))
                zones.append(zi)
                slots.append(k)
        self.comp_cell = np.array(cells, dtype=np.int64)
        self.comp_class = np.array(classes, dtype=np.int64)
        self.comp_rate = np.array(rates, dtype=float)
        self.comp_zone = np.array(zones, dtype=np.int64)
        self.comp_slot = np.array(slots, dtype=np.int64)
        self.num_components = len(cells)
        self.comps_of_cell = [
            np.flatnonzero(self.comp_cell == s) for s in range(self.num_cells)
        ]

        # arrival channels: exclusive zones first, then shared zones
        self.excl_arrival = np.array([z.arrival_rate for z in excl])
        self.shared_arrival = np.array([z.arrival_rate for z in shared])
        self.arrival_cumsum = np.cumsum(
            np.concatenate([self.excl_arrival, self.shared_arrival])
        )
        self.lam_tot = float(self.arrival_cumsum[-1]) if self.num_components else 0.0
        self.class_rates = np.array(
            [rc.rate_mbps for rc in topology.rate_classes]
        )
        self.uniformization_bound = uniformization_bound(topology, traffic)

    def counts_to_state(self, counts: np.ndarray) -> UserConfiguration:
        state = empty_state(self.topology)
        state.n_exclusive[:] = counts[: self.num_exclusive]
        for zi, start in enumerate(self.shared_comp_start):
            k = np.sum(self.comp_zone == zi)
            state.n_shared[zi, :k] = counts[start:start + k]
        return state

    def state_to_counts(self, state: UserConfiguration) -> np.ndarray:
        counts = np.zeros(self.num_components, dtype=np.int64)
        counts[: self.num_exclusive] = state.n_exclusive
        for zi, start in enumerate(self.shared_comp_start):
            k = int(np.sum(self.comp_zone == zi))
            counts[start:start + k] = state.n_shared[zi, :k]
        return counts


def _outage_locals(
    T: np.ndarray, T_cls: np.ndarray, class_rates: np.ndarray, target: float
) -> np.ndarray:
    """Per-station indicator: some present user is below the target rate."""
    below = (T_cls > 0) & (class_rates[None, :] < target * T[:, None])
    return below.any(axis=1).astype(np.int64)


def _users_below(
    T: np.ndarray, T_cls: np.ndarray, class_rates: np.ndarray, target: float
) -> int:
    below = (class_rates[None, :] < target * T[:, None])
    return int((T_cls * below).sum())


def cost_of_state(
    topology: Topology, state: UserConfiguration, cost: CostSpec
) -> Tuple[float, np.ndarray]:
    """Total cost of a state and its per-station local decomposition."""
    T, T_cls = state_features(topology, state)
    class_rates = np.array([rc.rate_mbps for rc in topology.rate_classes])
    if cost.kind == "total-users":
        locals_ = T.astype(float)
    else:
        locals_ = _outage_locals(
            T, T_cls, class_rates, cost.outage_target_mbps
        ).astype(float)
    return float(locals_.sum()), locals_


def enumerate_events(
    topology: Topology,
    traffic: TrafficSpec,
    state: UserConfiguration,
    params: Optional[PolicyParams] = None,
) -> List[Event]:
    """All enabled transitions of a state with their intensities.

    Shared-zone arrival events carry the policy's attachment distribution;
    the decision itself executes at the arrival instant.
    """
    T, T_cls = state_features(topology, state)
    sigma = traffic.mean_file_size_mb
    events: List[Event] = []
    for e, z in enumerate(topology.exclusive_zones):
        cell, cls = z.candidates[0]
        if z.arrival_rate > 0:
            events.append(Event(
                kind="exclusive-arrival", rate=z.arrival_rate,
                cell=cell, class_index=cls,
            ))
        n = int(state.n_exclusive[e])
        if n > 0:
            rate = n * topology.rate_of_class(cls) / (sigma * T[cell])
            events.append(Event(
                kind="departure-exclusive", rate=rate,
                cell=cell, class_index=cls,
            ))
    for zi, z in enumerate(topology.shared_zones):
        if z.arrival_rate > 0:
            probs = None
            if params is not None:
                probs = zone_action_probs(params, zi, T, T_cls)
            events.append(Event(
                kind="shared-arrival", rate=z.arrival_rate,
                zone=zi, action_probs=probs,
            ))
        for k, (cell, cls) in enumerate(z.candidates):
            n = int(state.n_shared[zi, k])
            if n > 0:
                rate = n * topology.rate_of_class(cls) / (sigma * T[cell])
                events.append(Event(
                    kind="departure-shared", rate=rate,
                    cell=cell, zone=zi, candidate=k, class_index=cls,
                ))
    return events


class FlowSimulator:
    """Event-by-event simulator with the policy resolving shared arrivals.

    Sampling is inverse-CDF over the enumerated rates: one uniform picks the
    transition (arrivals by fixed per-zone rates, departures proportionally
    to count * rate within the chosen station), a second resolves the
    association decision when needed.
    """

    def __init__(
        self,
        topology: Topology,
        traffic: TrafficSpec,
        params: Optional[PolicyParams] = None,
        seed=0,
        state: Optional[UserConfiguration] = None,
    ):
        self.model = _Model(topology, traffic)
        if self.model.num_shared and params is None:
            raise ValueError("a policy is required when shared zones exist")
        self.params = params
        self.rng = (
            seed if isinstance(seed, np.random.Generator)
            else np.random.Generator(np.random.Philox(seed))
        )
        self.reset(state)

    def reset(self, state: Optional[UserConfiguration] = None) -> None:
        m = self.model
        self.counts = (
            m.state_to_counts(state) if state is not None
            else np.zeros(m.num_components, dtype=np.int64)
        )
        self.time = 0.0
        self._rebuild_features()

    def _rebuild_features(self) -> None:
        m = self.model
        self.T = np.bincount(
            m.comp_cell, weights=self.counts, minlength=m.num_cells
        ).astype(np.int64)
        self.T_cls = np.zeros((m.num_cells, m.num_classes), dtype=np.int64)
        np.add.at(self.T_cls, (m.comp_cell, m.comp_class - 1), self.counts)
        self.W = np.bincount(
            m.comp_cell, weights=self.counts * m.comp_rate,
            minlength=m.num_cells,
        )

    @property
    def state(self) -> UserConfiguration:
        return self.model.counts_to_state(self.counts)

    @property
    def total_users(self) -> int:
        return int(self.counts.sum())

    def _apply(self, comp: int, delta: int) -> None:
        m = self.model
        self.counts[comp] += delta
        cell = m.comp_cell[comp]
        self.T[cell] += delta
        self.T_cls[cell, m.comp_class[comp] - 1] += delta
        self.W[cell] += delta * m.comp_rate[comp]

    def departure_rates(self) -> np.ndarray:
        """Per-station total departure intensity in the current state."""
        T = self.T
        with np.errstate(divide="ignore", invalid="ignore"):
            dep = np.where(T > 0, self.W / (self.model.sigma * T), 0.0)
        return dep

    def total_event_rate(self) -> float:
        return self.model.lam_tot + float(self.departure_rates().sum())

    def _dispatch(self, u: float, dep: np.ndarray):
        """Resolve which transition fires from one uniform draw over rates."""
        m = self.model
        if u < m.lam_tot:
            idx = int(np.searchsorted(m.arrival_cumsum, u, side="right"))
            idx = min(idx, m.num_exclusive + m.num_shared - 1)
            if idx < m.num_exclusive:
                self._apply(idx, +1)
                return ARRIVAL_EXCLUSIVE, idx, -1, None
            zone = idx - m.num_exclusive
            probs = zone_action_probs(self.params, zone, self.T, self.T_cls)
            v = self.rng.random()
            action = min(
                int(np.searchsorted(np.cumsum(probs), v)), len(probs) - 1
            )
            score_block = zone_score(
                self.params, zone, action, self.T, self.T_cls, probs
            )
            self._apply(m.shared_comp_start[zone] + action, +1)
            return ARRIVAL_SHARED, zone, action, score_block
        # departure: pick the station, then the component inside it
        v = u - m.lam_tot
        cum = np.cumsum(dep)
        cell = min(int(np.searchsorted(cum, v, side="right")), len(dep) - 1)
        leftover = v - (cum[cell - 1] if cell > 0 else 0.0)
        comps = m.comps_of_cell[cell]
        weights = self.counts[comps] * m.comp_rate[comps]
        wcum = np.cumsum(weights)
        # leftover is uniform on [0, dep[cell]); rescale to the weight total
        target = leftover / dep[cell] * wcum[-1]
        j = min(int(np.searchsorted(wcum, target, side="right")), len(comps) - 1)
        comp = int(comps[j])
        self._apply(comp, -1)
        return DEPARTURE, comp, -1, None

    def step_continuous(self):
        """Advance one transition; returns (sojourn, code, index, action, score).

        ``index`` is the exclusive-zone, shared-zone, or component index
        depending on the code; ``score`` is the policy's log-likelihood
        gradient block for shared arrivals, else None.
        """
        dep = self.departure_rates()
        total = self.model.lam_tot + float(dep.sum())
        if total <= 0:
            raise RuntimeError("no enabled events (empty system, no arrivals)")
        sojourn = self.rng.exponential(1.0 / total)
        u = self.rng.random() * total
        code, idx, action, score_block = self._dispatch(u, dep)
        self.time += sojourn
        return sojourn, code, idx, action, score_block

    def step_uniformized(self, uniformization_rate: Optional[float] = None):
        """One step of the uniformized chain; self-loops when no event fires.

        Returns (code, index, action, score) with code SELF_LOOP when the
        dominating clock ticks without a state change.
        """
        bound = self.model.uniformization_bound
        lam = bound if uniformization_rate is None else uniformization_rate
        if lam < bound - 1e-12:
            raise ValueError(
                f"uniformization rate {lam} below the computed bound {bound}"
            )
        dep = self.departure_rates()
        u = self.rng.random() * lam
        if u >= self.model.lam_tot + float(dep.sum()):
            return SELF_LOOP, -1, -1, None
        return self._dispatch(u, dep)


def run_time_average(
    sim: FlowSimulator,
    horizon_seconds: float,
    warmup_fraction: float = 0.1,
    outage_target_mbps: Optional[float] = None,
    max_events: Optional[int] = None,
) -> dict:
    """Time-averaged occupancy and outage statistics over one run.

    The first ``warmup_fraction`` of the horizon is discarded. Outage
    statistics are collected only when a target rate is given.
    """
    m = sim.model
    warmup = warmup_fraction * horizon_seconds
    t = 0.0
    measured = 0.0
    int_users = 0.0
    int_users_sq = 0.0
    int_per_cell = np.zeros(m.num_cells)
    int_empty = 0.0
    int_outage_any = 0.0
    int_outage_locals = 0.0
    int_users_below = 0.0
    events = 0
    while t < horizon_seconds and (max_events is None or events < max_events):
        dep = sim.departure_rates()
        total = m.lam_tot + float(dep.sum())
        if total <= 0:
            break
        sojourn = sim.rng.exponential(1.0 / total)
        weight = min(t + sojourn, horizon_seconds) - max(t, warmup)
        if weight > 0:
            n_tot = float(sim.T.sum())
            int_users += weight * n_tot
            int_users_sq += weight * n_tot * n_tot
            int_per_cell += weight * sim.T
            measured += weight
            if n_tot == 0:
                int_empty += weight
            if outage_target_mbps is not None:
                locals_ = _outage_locals(
                    sim.T, sim.T_cls, m.class_rates, outage_target_mbps
                )
                int_outage_locals += weight * float(locals_.sum())
                if locals_.any():
                    int_outage_any += weight
                int_users_below += weight * _users_below(
                    sim.T, sim.T_cls, m.class_rates, outage_target_mbps
                )
        u = sim.rng.random() * total
        sim._dispatch(u, dep)
        t += sojourn
        events += 1
    sim.time += t
    out = {
        "measured_seconds": measured,
        "events": events,
        "mean_users": int_users / measured if measured > 0 else float("nan"),
        "mean_users_per_cell": (
            int_per_cell / measured if measured > 0
            else np.full(m.num_cells, float("nan"))
        ),
        "var_users": (
            int_users_sq / measured - (int_users / measured) ** 2
            if measured > 0 else float("nan")
        ),
        "fraction_empty": int_empty / measured if measured > 0 else float("nan"),
    }
    if outage_target_mbps is not None:
        out["outage_network"] = (
            int_outage_any / measured if measured > 0 else float("nan")
        )
        out["outage_station_mean"] = (
            int_outage_locals / (measured * m.num_cells)
            if measured > 0 else float("nan")
        )
        out["outage_user"] = (
            int_users_below / int_users if int_users > 0 else 0.0
        )
    return out


def _shifted(V: np.ndarray, axis: int, delta: int) -> np.ndarray:
    """State value after a +/-1 move along one component, reflecting at caps."""
    if delta == +1:
        upper = V.take(indices=range(1, V.shape[axis]), axis=axis)
        edge = V.take(indices=[V.shape[axis] - 1], axis=axis)
        return np.concatenate([upper, edge], axis=axis)
    lower = V.take(indices=range(0, V.shape[axis] - 1), axis=axis)
    edge = V.take(indices=[0], axis=axis)
    return np.concatenate([edge, lower], axis=axis)


def exact_average_cost(
    topology: Topology,
    traffic: TrafficSpec,
    params: Optional[PolicyParams],
    n_max: int,
    cost: CostSpec = CostSpec("total-users"),
    tol: float = 1e-9,
    max_iter: int = 200_000,
    state_cap: int = 1_000_000,
) -> float:
    """Average cost of the truncated chain by relative value iteration.

    The state space caps every component at ``n_max`` (arrivals into a full
    component are dropped); iteration stops when the span of successive
    value differences falls below ``tol``. Intended as a verification oracle
    for small instances.
    """
    m = _Model(topology, traffic)
    if m.num_shared and params is None:
        raise ValueError("a policy is required when shared zones exist")
    C = m.num_components
    num_states = (n_max + 1) ** C
    if num_states > state_cap:
        raise TruncationTooLarge(
            f"{num_states} states exceed the cap of {state_cap}"
        )
    shape = (n_max + 1,) * C
    axes_counts = [
        np.arange(n_max + 1).reshape(
            tuple(n_max + 1 if j == c else 1 for j in range(C))
        )
        for c in range(C)
    ]
    T = [sum(axes_counts[c] for c in np.flatnonzero(m.comp_cell == s))
         for s in range(m.num_cells)]
    T_cls = {}
    for s in range(m.num_cells):
        for i in range(1, m.num_classes + 1):
            comps = np.flatnonzero((m.comp_cell == s) & (m.comp_class == i))
            T_cls[(s, i)] = (
                sum(axes_counts[c] for c in comps) if len(comps) else 0
            )

    # per-state cost grid
    if cost.kind == "total-users":
        r = sum(axes_counts).astype(float)
        r = np.broadcast_to(r, shape).copy()
    else:
        r = np.zeros(shape)
        for s in range(m.num_cells):
            local = np.zeros(shape, dtype=bool)
            for i in range(1, m.num_classes + 1):
                rate = topology.rate_of_class(i)
                present = np.broadcast_to(T_cls[(s, i)] > 0, shape)
                slow = np.broadcast_to(
                    rate < cost.outage_target_mbps * T[s], shape
                )
                local |= present & slow
            r += local

    # transition channels: (rate grid, axis, delta)
    channels = []
    for e in range(m.num_exclusive):
        if m.excl_arrival[e] > 0:
            channels.append((m.excl_arrival[e], e, +1))
    for zi in range(m.num_shared):
        if m.shared_arrival[zi] <= 0:
            continue
        comps = np.flatnonzero(m.comp_zone == zi)
        cells = m.comp_cell[comps]
        # policy scores over the whole grid
        scores = []
        for k, c in enumerate(comps):
            cell = int(cells[k])
            if params.layout.mode == "full":
                block = params.zone_block(zi)
                sc = np.full(shape, block[k, 0])
                for i in range(1, m.num_classes + 1):
                    w = block[k, i]
                    if w != 0.0:
                        sc = sc + w * np.broadcast_to(T_cls[(cell, i)], shape)
            else:
                w = params.vector[params.layout.offsets[zi]]
                sc = params.fixed_biases[zi][k] - w * np.broadcast_to(
                    T[cell], shape
                ).astype(float)
            scores.append(sc)
        smax = np.maximum.reduce(scores)
        exps = [np.exp(sc - smax) for sc in scores]
        norm = sum(exps)
        for k, c in enumerate(comps):
            channels.append((m.shared_arrival[zi] * exps[k] / norm, int(c), +1))
    for c in range(C):
        cell = int(m.comp_cell[c])
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = np.where(
                T[cell] > 0,
                axes_counts[c] * m.comp_rate[c] / (m.sigma * np.maximum(T[cell], 1)),
                0.0,
            )
        channels.append((np.broadcast_to(rate, shape), c, -1))

    lam = m.uniformization_bound
    total_rate = sum(
        np.broadcast_to(np.asarray(rate, dtype=float), shape)
        for rate, _, _ in channels
    )
    V = np.zeros(shape)
    for it in range(max_iter):
        PV = (lam - total_rate) * V
        for rate, axis, delta in channels:
            PV += rate * _shifted(V, axis, delta)
        W = r + PV / lam
        d = W - V
        span = float(d.max() - d.min())
        if span < tol:
            return float((d.max() + d.min()) / 2.0)
        V = W - W.flat[0]
    raise ValueIterationDidNotConverge(
        f"span {span:.3e} above {tol} after {max_iter} sweeps"
    )
