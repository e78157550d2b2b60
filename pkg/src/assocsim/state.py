"""User configuration: per-station, per-class counts of active transfers."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .topology import Topology

__all__ = ["UserConfiguration", "empty_state", "state_features"]


@dataclass
class UserConfiguration:
    """Counts of active users, the state of the dynamic model.

    ``n_exclusive[e]`` counts users in the e-th exclusive zone (order of
    ``topology.exclusive_zones``); ``n_shared[z, k]`` counts users from the
    z-th shared zone attached to its k-th candidate. Unused candidate slots
    (zones with fewer candidates than the widest one) stay at zero.
    """

    n_exclusive: np.ndarray
    n_shared: np.ndarray

    def copy(self) -> "UserConfiguration":
        return UserConfiguration(self.n_exclusive.copy(), self.n_shared.copy())

    @property
    def total_users(self) -> int:
        return int(self.n_exclusive.sum() + self.n_shared.sum())


def empty_state(topology: Topology) -> UserConfiguration:
    num_excl = len(topology.exclusive_zones)
    shared = topology.shared_zones
    width = max((len(z.candidates) for z in shared), default=1)
    return UserConfiguration(
        n_exclusive=np.zeros(num_excl, dtype=np.int64),
        n_shared=np.zeros((len(shared), width), dtype=np.int64),
    )


def state_features(
    topology: Topology, state: UserConfiguration
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-station user totals and per-(station, class) user counts.

    Returns ``(T, T_by_class)`` with shapes (num_cells,) and
    (num_cells, num_classes); summing T_by_class over classes recovers T.
    """
    num_classes = len(topology.rate_classes)
    T = np.zeros(topology.num_cells, dtype=np.int64)
    T_cls = np.zeros((topology.num_cells, num_classes), dtype=np.int64)
    for e, z in enumerate(topology.exclusive_zones):
        cell, cls = z.candidates[0]
        n = int(state.n_exclusive[e])
        T[cell] += n
        T_cls[cell, cls - 1] += n
    for zi, z in enumerate(topology.shared_zones):
        for k, (cell, cls) in enumerate(z.candidates):
            n = int(state.n_shared[zi, k])
            T[cell] += n
            T_cls[cell, cls - 1] += n
    return T, T_cls
