"""Discretized network geometry: cells, rate classes, exclusive and shared zones.

The geometry is flow-level only: each cell has unit area, zones are area
fractions, and arrival rates come from a homogeneous traffic field. The
standard layout is a hexagonal grid with toroidal wrap-around so that every
cell has exactly six neighbors and no border effects exist.
"""

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

__all__ = [
    "RateClass",
    "Zone",
    "Topology",
    "build_hex_wraparound",
    "validate",
]


@dataclass(frozen=True)
class RateClass:
    """One of the finitely many achievable data rates.

    Index 0 (rate 0) is reserved for users barred by admission control and is
    never attached to a zone; indices here start at 1.
    """

    index: int
    rate_mbps: float


@dataclass(frozen=True)
class Zone:
    """A homogeneous-rate region of the network.

    ``candidates`` lists the (cell, rate-class index) pairs that can serve the
    zone. One candidate means the zone is exclusive to that cell; two or more
    mean arrivals there require an association decision.
    """

    candidates: Tuple[Tuple[int, int], ...]
    area_fraction: float
    arrival_rate: float

    @property
    def is_shared(self) -> bool:
        return len(self.candidates) >= 2

    @property
    def cell(self) -> int:
        """Serving cell of an exclusive zone."""
        if self.is_shared:
            raise ValueError("shared zone has no single serving cell")
        return self.candidates[0][0]

    @property
    def class_index(self) -> int:
        """Rate class of an exclusive zone."""
        if self.is_shared:
            raise ValueError("shared zone has per-candidate classes")
        return self.candidates[0][1]


@dataclass(frozen=True)
class Topology:
    """Immutable network layout: cells, rate classes, zones, neighbor pairs."""

    num_cells: int
    rate_classes: Tuple[RateClass, ...]
    zones: Tuple[Zone, ...]
    neighbor_pairs: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def rate_of_class(self, index: int) -> float:
        if not 1 <= index <= len(self.rate_classes):
            raise KeyError(f"unknown rate class {index}")
        return self.rate_classes[index - 1].rate_mbps

    @property
    def exclusive_zones(self) -> List[Zone]:
        return [z for z in self.zones if not z.is_shared]

    @property
    def shared_zones(self) -> List[Zone]:
        return [z for z in self.zones if z.is_shared]

    @property
    def total_arrival_rate(self) -> float:
        return sum(z.arrival_rate for z in self.zones)

    @property
    def max_rate(self) -> float:
        return max(rc.rate_mbps for rc in self.rate_classes)

    def cell_area_fractions(self) -> List[float]:
        """Per-cell area, counting an equal share of each shared zone."""
        areas = [0.0] * self.num_cells
        for z in self.zones:
            share = z.area_fraction / len(z.candidates)
            for cell, _ in z.candidates:
                areas[cell] += share
        return areas

    def to_dict(self) -> Dict:
        return {
            "num_cells": self.num_cells,
            "rate_classes": [
                {"index": rc.index, "rate_mbps": rc.rate_mbps}
                for rc in self.rate_classes
            ],
            "zones": [
                {
                    "candidates": [list(c) for c in z.candidates],
                    "area_fraction": z.area_fraction,
                    "arrival_rate": z.arrival_rate,
                }
                for z in self.zones
            ],
            "neighbor_pairs": [list(p) for p in self.neighbor_pairs],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "Topology":
        return cls(
            num_cells=int(data["num_cells"]),
            rate_classes=tuple(
                RateClass(int(rc["index"]), float(rc["rate_mbps"]))
                for rc in data["rate_classes"]
            ),
            zones=tuple(
                Zone(
                    candidates=tuple(
                        (int(c[0]), int(c[1])) for c in z["candidates"]
                    ),
                    area_fraction=float(z["area_fraction"]),
                    arrival_rate=float(z["arrival_rate"]),
                )
                for z in data["zones"]
            ),
            neighbor_pairs=tuple(
                (int(p[0]), int(p[1])) for p in data["neighbor_pairs"]
            ),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text() + "\n")

    @classmethod
    def load(cls, path) -> "Topology":
        with open(path) as fh:
            return cls.from_text(fh.read())


# Axial-coordinate machinery for the hexagonal torus. A hexagonal cluster of
# radius R has 3R^2+3R+1 cells and tiles the plane when translated by the
# lattice generated by u=(R+1, R) and its 60-degree rotation, which is what
# makes the wrap-around exact.

_AXIAL_DIRS = ((1, 0), (-1, 0), (1, -1), (-1, 1), (0, -1), (0, 1))


def _hex_cluster(rings: int) -> List[Tuple[int, int]]:
    return sorted(
        (q, r)
        for q in range(-rings, rings + 1)
        for r in range(-rings, rings + 1)
        if max(abs(q), abs(r), abs(q + r)) <= rings
    )


def _rot60(q: int, r: int) -> Tuple[int, int]:
    return (-r, q + r)


def hex_wraparound_neighbors(rings: int) -> List[List[int]]:
    """Neighbor table of the hexagonal torus with the given number of rings.

    Returns, for each cell index, its six neighbor indices in a fixed
    direction order. Raises ValueError if the wrapped map is inconsistent.
    """
    if rings < 1:
        raise ValueError("rings must be >= 1")
    cells = _hex_cluster(rings)
    index = {c: i for i, c in enumerate(cells)}
    u = (rings + 1, rings)
    v = _rot60(*u)
    table: List[List[int]] = []
    for q, r in cells:
        row = []
        for dq, dr in _AXIAL_DIRS:
            tq, tr = q + dq, r + dr
            hits = {
                index[(tq - m * u[0] - n * v[0], tr - m * u[1] - n * v[1])]
                for m, n in itertools.product(range(-2, 3), repeat=2)
                if (tq - m * u[0] - n * v[0], tr - m * u[1] - n * v[1]) in index
            }
            if len(hits) != 1:
                raise ValueError(
                    f"wrap-around map inconsistent at rings={rings}: cell "
                    f"{(q, r)} direction {(dq, dr)} has {len(hits)} images"
                )
            row.append(hits.pop())
        table.append(row)

    for s, row in enumerate(table):
        if len(set(row)) != 6 or s in row:
            raise ValueError(
                f"wrap-around map inconsistent at rings={rings}: cell {s} "
                f"does not have 6 distinct neighbors"
            )
        for t in row:
            if s not in table[t]:
                raise ValueError(
                    f"wrap-around map not symmetric at rings={rings}"
                )
    return table


def build_hex_wraparound(
    rings: int,
    central_rate_mbps: float,
    edge_rate_mbps: float,
    total_traffic_mbps: float,
    mean_file_size_mb: float,
) -> Topology:
    """Build the hexagonal wrap-around layout used by the experiments.

    Every cell gets one exclusive central zone (half the cell area, served at
    ``central_rate_mbps``) and shares, with each of its six neighbors, one
    two-candidate edge zone of one sixth of a cell area served at
    ``edge_rate_mbps`` by either side. Arrival rates are uniform per unit
    area and sum to ``total_traffic_mbps / mean_file_size_mb`` per second.
    """
    if central_rate_mbps <= 0 or edge_rate_mbps <= 0:
        raise ValueError("rates must be positive")
    if total_traffic_mbps <= 0:
        raise ValueError("total traffic must be positive")
    if mean_file_size_mb <= 0:
        raise ValueError("mean file size must be positive")

    neighbor_table = hex_wraparound_neighbors(rings)
    num_cells = len(neighbor_table)
    pairs = sorted(
        {(min(s, t), max(s, t)) for s, row in enumerate(neighbor_table) for t in row}
    )

    rates = sorted({central_rate_mbps, edge_rate_mbps})
    rate_classes = tuple(
        RateClass(index=i + 1, rate_mbps=r) for i, r in enumerate(rates)
    )
    class_of = {r: i + 1 for i, r in enumerate(rates)}
    central_cls = class_of[central_rate_mbps]
    edge_cls = class_of[edge_rate_mbps]

    lam_tot = total_traffic_mbps / mean_file_size_mb
    total_area = float(num_cells)  # unit area per cell
    central_area = 0.5
    pair_area = 1.0 / 6.0

    zones: List[Zone] = []
    for s in range(num_cells):
        zones.append(
            Zone(
                candidates=((s, central_cls),),
                area_fraction=central_area,
                arrival_rate=lam_tot * central_area / total_area,
            )
        )
    for s, t in pairs:
        zones.append(
            Zone(
                candidates=((s, edge_cls), (t, edge_cls)),
                area_fraction=pair_area,
                arrival_rate=lam_tot * pair_area / total_area,
            )
        )

    return Topology(
        num_cells=num_cells,
        rate_classes=rate_classes,
        zones=tuple(zones),
        neighbor_pairs=tuple(pairs),
    )


def validate(topology: Topology) -> List[str]:
    """Check all topology invariants; returns one message per violation."""
    bad: List[str] = []

    last = 0.0
    for pos, rc in enumerate(topology.rate_classes):
        if rc.index != pos + 1:
            bad.append(f"rate class at position {pos} has index {rc.index}")
        if rc.rate_mbps <= last:
            bad.append(
                f"rate class {rc.index}: rate {rc.rate_mbps} not strictly "
                f"increasing"
            )
        last = rc.rate_mbps

    num_classes = len(topology.rate_classes)
    for zi, z in enumerate(topology.zones):
        if len(z.candidates) == 0:
            bad.append(f"zone {zi}: no candidates")
        for cell, cls in z.candidates:
            if not 0 <= cell < topology.num_cells:
                bad.append(f"zone {zi}: candidate cell {cell} out of range")
            if not 1 <= cls <= num_classes:
                bad.append(f"zone {zi}: candidate class {cls} invalid")
        if z.is_shared and len(z.candidates) < 2:
            bad.append(f"zone {zi}: shared zone with < 2 candidates")
        if len(set(c for c, _ in z.candidates)) != len(z.candidates):
            bad.append(f"zone {zi}: repeated candidate cell")
        if z.arrival_rate < 0:
            bad.append(f"zone {zi}: negative arrival rate {z.arrival_rate}")
        if z.area_fraction < 0:
            bad.append(f"zone {zi}: negative area fraction {z.area_fraction}")

    for s, area in enumerate(topology.cell_area_fractions()):
        if abs(area - 1.0) > 1e-9:
            bad.append(f"cell {s}: area fractions sum to {area}, expected 1")

    pair_set = set(topology.neighbor_pairs)
    for zi, z in enumerate(topology.zones):
        if z.is_shared and len(z.candidates) == 2:
            cells = tuple(sorted(c for c, _ in z.candidates))
            if pair_set and cells not in pair_set:
                bad.append(f"zone {zi}: candidates {cells} not a neighbor pair")

    return bad
