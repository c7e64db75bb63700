"""Probe-vehicle observations, held column-wise."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

COLUMNS = ("vehicle_id", "t", "x_km", "y_km", "heading_deg", "speed_kmh")


def vehicle_name(i) -> np.ndarray | str:
    if np.ndim(i) == 0:
        return f"v{int(i):06d}"
    return np.char.add("v", np.char.zfill(np.asarray(i).astype(str), 6))


@dataclass(frozen=True)
class PvdRecord:
    vehicle_id: str
    t: int
    x: float
    y: float
    heading: float
    speed: float


class ProbeRecords:
    """A sequence of :class:`PvdRecord` stored as parallel numpy columns.

    Iterating or indexing with an int yields ``PvdRecord`` objects; indexing
    with a mask or index array yields another ``ProbeRecords``.
    """

    def __init__(self, vehicle_id, t, x, y, heading, speed):
        self.vehicle_id = np.asarray(vehicle_id, dtype=str)
        self.t = np.asarray(t, dtype=np.int64)
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.heading = np.asarray(heading, dtype=np.float64)
        self.speed = np.asarray(speed, dtype=np.float64)
        n = len(self.t)
        for name in ("vehicle_id", "x", "y", "heading", "speed"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def empty(cls) -> "ProbeRecords":
        return cls(np.array([], dtype=str), [], [], [], [], [])

    @classmethod
    def from_records(cls, records: Iterable[PvdRecord]) -> "ProbeRecords":
        if isinstance(records, ProbeRecords):
            return records
        rs = list(records)
        if not rs:
            return cls.empty()
        return cls(
            [r.vehicle_id for r in rs], [r.t for r in rs], [r.x for r in rs],
            [r.y for r in rs], [r.heading for r in rs], [r.speed for r in rs],
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return PvdRecord(
                str(self.vehicle_id[idx]), int(self.t[idx]), float(self.x[idx]),
                float(self.y[idx]), float(self.heading[idx]), float(self.speed[idx]),
            )
        return ProbeRecords(
            self.vehicle_id[idx], self.t[idx], self.x[idx], self.y[idx],
            self.heading[idx], self.speed[idx],
        )

    def __iter__(self) -> Iterator[PvdRecord]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbeRecords):
            return NotImplemented
        return len(self) == len(other) and all(
            np.array_equal(getattr(self, c), getattr(other, c))
            for c in ("vehicle_id", "t", "x", "y", "heading", "speed")
        )

    def __repr__(self) -> str:
        return f"ProbeRecords(n={len(self)}, vehicles={len(np.unique(self.vehicle_id))})"

    def validate(self, T: int | None = None) -> None:
        """Raise ``ValueError`` naming the first offending column."""
        checks = [
            ("t", self.t >= 0),
            ("x_km", np.isfinite(self.x)),
            ("y_km", np.isfinite(self.y)),
            ("heading_deg", (self.heading >= 0) & (self.heading < 360)),
            ("speed_kmh", np.isfinite(self.speed) & (self.speed >= 0)),
        ]
        if T is not None:
            checks.append(("t", self.t < T))
        for name, ok in checks:
            if not np.all(ok):
                i = int(np.argmin(ok))
                raise ValueError(f"record {i}: invalid {name}")

    def concat(self, other: "ProbeRecords") -> "ProbeRecords":
        return ProbeRecords(
            np.concatenate([self.vehicle_id, other.vehicle_id]),
            np.concatenate([self.t, other.t]),
            np.concatenate([self.x, other.x]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.heading, other.heading]),
            np.concatenate([self.speed, other.speed]),
        )
