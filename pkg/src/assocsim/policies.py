"""Parameterized softmax association policies and closed-form baselines.

An arriving user in a shared zone is attached to candidate station s with
probability proportional to exp(bias_s + sum_i weight_{s,i} * T_{s,i}),
where T_{s,i} is the number of users already served by s at peak rate i.
Every candidate keeps strictly positive probability, which keeps the
average cost differentiable in the parameters.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .state import UserConfiguration, state_features
from .topology import Topology
from .traffic import TrafficSpec

__all__ = [
    "FULL",
    "PER_PAIR_SCALAR",
    "BASELINE_KINDS",
    "PolicyLayout",
    "PolicyParams",
    "zone_action_probs",
    "action_probs",
    "zone_score",
    "score",
    "baseline_params",
]

FULL = "full"
PER_PAIR_SCALAR = "per-pair-scalar"

BASELINE_KINDS = (
    "best-peak-rate",
    "best-data-rate",
    "smallest-workload",
    "shortest-queue",
)


class PolicyLayout:
    """Mapping between flat parameter vectors and per-zone blocks.

    Full mode gives each shared zone one bias plus one weight per rate class
    for every candidate. Per-pair-scalar mode ties everything to a single
    queue-length weight per zone (biases fixed, not learned), matching the
    compact parameter count of the two-candidate setting.
    """

    def __init__(self, topology: Topology, mode: str = FULL):
        if mode not in (FULL, PER_PAIR_SCALAR):
            raise ValueError(f"unknown tying mode {mode!r}")
        self.mode = mode
        self.num_classes = len(topology.rate_classes)
        shared = topology.shared_zones
        self.num_zones = len(shared)
        self.zone_cells = [
            np.array([c for c, _ in z.candidates]) for z in shared
        ]
        self.zone_classes = [
            np.array([cls for _, cls in z.candidates]) for z in shared
        ]
        self.zone_rates = [
            np.array([topology.rate_of_class(cls) for _, cls in z.candidates])
            for z in shared
        ]
        if mode == FULL:
            self.block_sizes = [
                len(z.candidates) * (1 + self.num_classes) for z in shared
            ]
        else:
            self.block_sizes = [1] * len(shared)
        self.offsets = np.concatenate([[0], np.cumsum(self.block_sizes)])
        self.dim = int(self.offsets[-1])

    def block(self, vector: np.ndarray, zone: int) -> np.ndarray:
        """Zone's slice of a flat vector; full mode as (candidates, 1+classes)."""
        flat = vector[self.offsets[zone]:self.offsets[zone + 1]]
        if self.mode == FULL:
            return flat.reshape(len(self.zone_cells[zone]), 1 + self.num_classes)
        return flat

    def param_cells(self) -> np.ndarray:
        """For each flat parameter, the candidate cells of its zone.

        Shape (dim, 2); requires every shared zone to have exactly two
        candidates. Used by the distributed gradient estimator.
        """
        cells = np.zeros((self.dim, 2), dtype=np.int64)
        for zi, zc in enumerate(self.zone_cells):
            if len(zc) != 2:
                raise ValueError(
                    "pair-local bookkeeping needs two-candidate zones"
                )
            cells[self.offsets[zi]:self.offsets[zi + 1]] = zc
        return cells


@dataclass
class PolicyParams:
    """Weights of the softmax association policy, flat vector plus layout."""

    layout: PolicyLayout
    vector: np.ndarray
    fixed_biases: Optional[List[np.ndarray]] = None  # scalar mode only

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        if self.vector.shape != (self.layout.dim,):
            raise ValueError(
                f"parameter vector has shape {self.vector.shape}, layout "
                f"needs ({self.layout.dim},)"
            )
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("parameters must be finite")
        if self.layout.mode == PER_PAIR_SCALAR and self.fixed_biases is None:
            self.fixed_biases = [
                np.zeros(len(c)) for c in self.layout.zone_cells
            ]

    @classmethod
    def zeros(cls, topology: Topology, mode: str = FULL) -> "PolicyParams":
        layout = PolicyLayout(topology, mode)
        return cls(layout=layout, vector=np.zeros(layout.dim))

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layout, self.vector.copy(), self.fixed_biases)

    def zone_block(self, zone: int) -> np.ndarray:
        return self.layout.block(self.vector, zone)


def _zone_scores(
    params: PolicyParams, zone: int, T: np.ndarray, T_cls: np.ndarray
) -> np.ndarray:
    lay = params.layout
    cells = lay.zone_cells[zone]
    if lay.mode == FULL:
        block = params.zone_block(zone)
        return block[:, 0] + (block[:, 1:] * T_cls[cells]).sum(axis=1)
    w = params.vector[lay.offsets[zone]]
    return params.fixed_biases[zone] - w * T[cells]


def zone_action_probs(
    params: PolicyParams, zone: int, T: np.ndarray, T_cls: np.ndarray
) -> np.ndarray:
    """Attachment distribution over the zone's candidates given features."""
    s = _zone_scores(params, zone, T, T_cls)
    s = s - s.max()  # overflow-safe softmax
    e = np.exp(s)
    return e / e.sum()


def action_probs(
    topology: Topology,
    state: UserConfiguration,
    zone: int,
    params: PolicyParams,
) -> np.ndarray:
    """Attachment distribution for shared zone ``zone`` in ``state``."""
    T, T_cls = state_features(topology, state)
    return zone_action_probs(params, zone, T, T_cls)


def zone_score(
    params: PolicyParams,
    zone: int,
    action: int,
    T: np.ndarray,
    T_cls: np.ndarray,
    probs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Gradient of log attachment probability w.r.t. the zone's block."""
    lay = params.layout
    if probs is None:
        probs = zone_action_probs(params, zone, T, T_cls)
    cells = lay.zone_cells[zone]
    indicator = np.zeros(len(cells))
    indicator[action] = 1.0
    residual = indicator - probs
    if lay.mode == FULL:
        block = np.empty((len(cells), 1 + lay.num_classes))
        block[:, 0] = residual
        block[:, 1:] = residual[:, None] * T_cls[cells]
        return block.ravel()
    return np.array([float(np.dot(probs, T[cells]) - T[cells][action])])


def score(
    topology: Topology,
    state: UserConfiguration,
    zone: int,
    action: int,
    params: PolicyParams,
) -> np.ndarray:
    """Full-length log-likelihood gradient; zero outside the zone's block."""
    T, T_cls = state_features(topology, state)
    out = np.zeros(params.layout.dim)
    lay = params.layout
    out[lay.offsets[zone]:lay.offsets[zone + 1]] = zone_score(
        params, zone, action, T, T_cls
    )
    return out


def baseline_params(
    kind: str,
    gamma: float,
    topology: Topology,
    traffic: TrafficSpec,
) -> PolicyParams:
    """Parameters realizing one of the four closed-form policies.

    best-peak-rate attaches by candidate peak rate alone; best-data-rate by
    the rate currently available (peak rate over queue size);
    smallest-workload by the expected residual work in the queue;
    shortest-queue by the number of active users. ``gamma`` sharpens the
    softmax toward the corresponding argmax rule.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    params = PolicyParams.zeros(topology, FULL)
    lay = params.layout
    class_rates = np.array([rc.rate_mbps for rc in topology.rate_classes])
    for zi in range(lay.num_zones):
        block = params.zone_block(zi)
        cand_rates = lay.zone_rates[zi]
        if kind == "best-peak-rate":
            block[:, 0] = gamma * cand_rates
        elif kind == "best-data-rate":
            block[:, 1:] = -gamma / cand_rates[:, None]
        elif kind == "smallest-workload":
            block[:, 1:] = -gamma * traffic.mean_file_size_mb / class_rates[None, :]
        elif kind == "shortest-queue":
            block[:, 1:] = -gamma
    return params
