"""Spatial discretisations: a uniform grid of cells or a lattice street graph.

Coordinates are planar kilometres with the origin at the south-west corner.
Headings are compass bearings in degrees: 0 = +y (north), 90 = +x (east).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path


def bearing(dx, dy):
    """Compass bearing of a displacement, in [0, 360)."""
    return np.mod(np.degrees(np.arctan2(dx, dy)), 360.0)


class _MapBase:
    kind: str

    def describe(self) -> dict:
        raise NotImplementedError

    @property
    def digest(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def adjacency(self) -> sp.csr_matrix:
        raise NotImplementedError

    def hop_distances(self, source: int) -> np.ndarray:
        """Unweighted graph distance from ``source`` to every region (inf if unreachable)."""
        if not 0 <= source < self.R:
            raise IndexError(f"region {source} outside [0, {self.R})")
        return shortest_path(self.adjacency(), unweighted=True, indices=source)


@dataclass(frozen=True)
class GridMap(_MapBase):
    """H x W cells of side ``cell_size`` km; region index = row * W + col."""

    H: int
    W: int
    cell_size: float
    kind: str = field(default="grid", init=False)

    @property
    def R(self) -> int:
        return self.H * self.W

    @property
    def width_km(self) -> float:
        return self.W * self.cell_size

    @property
    def height_km(self) -> float:
        return self.H * self.cell_size

    def describe(self) -> dict:
        return {"kind": "grid", "H": self.H, "W": self.W, "cell_size": self.cell_size}

    def region_of(self, x, y):
        """Region index for each point, -1 where the point lies outside the map."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        col = np.floor(x / self.cell_size)
        row = np.floor(y / self.cell_size)
        inside = (col >= 0) & (col < self.W) & (row >= 0) & (row < self.H)
        idx = np.where(inside, row * self.W + col, -1)
        return idx.astype(np.int64)

    def cell_center(self, region: int) -> tuple[float, float]:
        row, col = divmod(region, self.W)
        return ((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def hop_distances(self, source: int) -> np.ndarray:
        if not 0 <= source < self.R:
            raise IndexError(f"region {source} outside [0, {self.R})")
        r0, c0 = divmod(source, self.W)
        rows, cols = np.divmod(np.arange(self.R), self.W)
        return (np.abs(rows - r0) + np.abs(cols - c0)).astype(np.float64)

    @cached_property
    def _adjacency(self) -> sp.csr_matrix:
        idx = np.arange(self.R).reshape(self.H, self.W)
        right = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
        down = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
        e = np.concatenate([right, down], axis=1)
        a = sp.coo_matrix((np.ones(e.shape[1]), (e[0], e[1])), shape=(self.R, self.R))
        return (a + a.T).tocsr()

    def adjacency(self) -> sp.csr_matrix:
        return self._adjacency


@dataclass(frozen=True, eq=False)
class GraphMap(_MapBase):
    """Street lattice: intersections on a rows x cols grid, one segment per lattice edge.

    Segments are the regions. Horizontal segments come first (row by row,
    west to east), then vertical ones (south to north). Two segments are
    adjacent iff they share an intersection.
    """

    rows: int
    cols: int
    block_km: float
    nodes: np.ndarray          # (n_nodes, 2) intersection coordinates
    seg_nodes: np.ndarray      # (R, 2) intersection index of each endpoint
    kind: str = field(default="graph", init=False)

    @property
    def R(self) -> int:
        return len(self.seg_nodes)

    @property
    def starts(self) -> np.ndarray:
        return self.nodes[self.seg_nodes[:, 0]]

    @property
    def ends(self) -> np.ndarray:
        return self.nodes[self.seg_nodes[:, 1]]

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.ends - self.starts, axis=1)

    @cached_property
    def bearings(self) -> np.ndarray:
        d = self.ends - self.starts
        return bearing(d[:, 0], d[:, 1])

    @property
    def width_km(self) -> float:
        return (self.cols - 1) * self.block_km

    @property
    def height_km(self) -> float:
        return (self.rows - 1) * self.block_km

    def describe(self) -> dict:
        return {"kind": "graph", "rows": self.rows, "cols": self.cols, "block_km": self.block_km}

    @cached_property
    def incident(self) -> np.ndarray:
        """(n_nodes, max_degree) segment indices meeting at each intersection, -1 padded."""
        n = len(self.nodes)
        lists = [[] for _ in range(n)]
        for s, (a, b) in enumerate(self.seg_nodes):
            lists[a].append(s)
            lists[b].append(s)
        width = max(len(x) for x in lists)
        out = np.full((n, width), -1, dtype=np.int64)
        for i, x in enumerate(lists):
            out[i, :len(x)] = x
        return out

    @cached_property
    def _adjacency(self) -> sp.csr_matrix:
        inc = sp.coo_matrix(
            (np.ones(2 * self.R), (np.repeat(np.arange(self.R), 2), self.seg_nodes.ravel())),
            shape=(self.R, len(self.nodes)),
        ).tocsr()
        a = (inc @ inc.T).tolil()
        a.setdiag(0)
        a = a.tocsr()
        a.eliminate_zeros()
        a.data[:] = 1.0
        return a

    def adjacency(self) -> sp.csr_matrix:
        return self._adjacency

    def neighbours(self, seg: int) -> list[int]:
        a = self.adjacency()
        return sorted(a.indices[a.indptr[seg]:a.indptr[seg + 1]].tolist())


RoadMap = GridMap | GraphMap


def build_grid_map(H: int, W: int, cell_size: float) -> GridMap:
    if int(H) != H or int(W) != W or H < 1 or W < 1:
        raise ValueError(f"grid dimensions must be positive integers, got {H}x{W}")
    if not cell_size > 0:
        raise ValueError(f"cell_size must be > 0, got {cell_size}")
    return GridMap(int(H), int(W), float(cell_size))


def build_graph_map(rows: int, cols: int, block_km: float) -> GraphMap:
    if int(rows) != rows or int(cols) != cols or rows < 2 or cols < 2:
        raise ValueError(f"lattice needs rows, cols >= 2, got {rows}x{cols}")
    if not block_km > 0:
        raise ValueError(f"block_km must be > 0, got {block_km}")
    rows, cols = int(rows), int(cols)
    jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
    nodes = np.stack([jj.ravel() * block_km, ii.ravel() * block_km], axis=1).astype(np.float64)
    nid = np.arange(rows * cols).reshape(rows, cols)
    horiz = np.stack([nid[:, :-1].ravel(), nid[:, 1:].ravel()], axis=1)
    vert = np.stack([nid[:-1, :].ravel(), nid[1:, :].ravel()], axis=1)
    seg_nodes = np.concatenate([horiz, vert]).astype(np.int64)
    return GraphMap(rows, cols, float(block_km), nodes, seg_nodes)


def map_from_description(desc: dict) -> RoadMap:
    kind = desc.get("kind")
    if kind == "grid":
        return build_grid_map(desc["H"], desc["W"], desc["cell_size"])
    if kind == "graph":
        return build_graph_map(desc["rows"], desc["cols"], desc["block_km"])
    raise ValueError(f"unknown map kind {kind!r}")
