"""Closed-form queueing quantities for the flow-level model.

Each base station behaves as an M/G/1 processor-sharing queue; its load is
an affine function of the traffic-split variables, stability requires load
below one, and the stationary mean user count is load/(1-load).
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .topology import Topology

__all__ = [
    "TrafficSpec",
    "UnstableLoadError",
    "bs_loads",
    "mean_users",
    "mean_transfer_time",
]


class UnstableLoadError(ValueError):
    """Raised when a stationary quantity is requested at load >= 1."""


@dataclass(frozen=True)
class TrafficSpec:
    """Offered traffic: mean file size (Mb) and total volume (Mbps).

    File sizes are exponential with the given mean; the total arrival rate
    is total_traffic_mbps / mean_file_size_mb per second.
    """

    mean_file_size_mb: float
    total_traffic_mbps: float = 0.0

    def __post_init__(self):
        if self.mean_file_size_mb <= 0:
            raise ValueError("mean file size must be positive")

    @property
    def total_arrival_rate(self) -> float:
        return self.total_traffic_mbps / self.mean_file_size_mb


def bs_loads(topology: Topology, traffic: TrafficSpec, split) -> np.ndarray:
    """Per-station loads induced by a traffic split.

    ``split`` is indexable by shared-zone position (in the order of
    ``topology.shared_zones``) and yields a probability vector over that
    zone's candidates. Exclusive-zone traffic is always carried by its own
    cell.
    """
    sigma = traffic.mean_file_size_mb
    rho = np.zeros(topology.num_cells)
    shared_idx = 0
    for z in topology.zones:
        if not z.is_shared:
            cell, cls = z.candidates[0]
            rho[cell] += sigma * z.arrival_rate / topology.rate_of_class(cls)
        else:
            probs = split[shared_idx]
            if len(probs) != len(z.candidates):
                raise ValueError(
                    f"split for shared zone {shared_idx} has {len(probs)} "
                    f"entries, zone has {len(z.candidates)} candidates"
                )
            for (cell, cls), a in zip(z.candidates, probs):
                rho[cell] += (
                    sigma * a * z.arrival_rate / topology.rate_of_class(cls)
                )
            shared_idx += 1
    return rho


def mean_users(load: float) -> float:
    """Stationary mean number of active users of a single station."""
    if load < 0:
        raise ValueError("load must be nonnegative")
    if load >= 1.0:
        raise UnstableLoadError(f"station unstable at load {load}")
    return load / (1.0 - load)


def mean_transfer_time(loads: Sequence[float], total_arrival_rate: float) -> float:
    """Mean file transfer time by Little's law, in seconds."""
    if total_arrival_rate <= 0:
        raise ValueError("total arrival rate must be positive")
    loads = np.asarray(loads, dtype=float)
    if np.any(loads >= 1.0):
        worst = float(loads.max())
        raise UnstableLoadError(f"unstable station with load {worst}")
    return float(np.sum(loads / (1.0 - loads)) / total_arrival_rate)
