"""Intersection grids, rasterized movement paths, and the corridor network.

Space inside an intersection is discretized into square cells. Each approach
carries one or more unidirectional lanes, one cell wide, that extend a fixed
number of cells upstream of the central conflict box. Vehicle paths through
an intersection are rasterized onto those cells: through movements run
straight across, turns are axis-monotone L-shaped cell sequences that enter
on the movement's approach lane and leave on the geometrically correct
receiving lane.

Everything here is immutable after construction and a pure function of its
configuration, so grids and networks can be shared read-only across parallel
episode runs and serialized byte-identically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple


class Approach(Enum):
    """Entry side of an intersection. N-approach traffic heads south, etc."""

    N = "N"
    E = "E"
    S = "S"
    W = "W"


class Turn(Enum):
    LEFT = "left"
    THROUGH = "through"
    RIGHT = "right"


# Heading unit vectors in (row, col) cell coordinates. Rows grow southward.
HEADINGS: Dict[Approach, Tuple[int, int]] = {
    Approach.N: (1, 0),   # southbound
    Approach.E: (0, -1),  # westbound
    Approach.S: (-1, 0),  # northbound
    Approach.W: (0, 1),   # eastbound
}
APPROACH_FOR_HEADING = {h: a for a, h in HEADINGS.items()}


def turn_heading(heading: Tuple[int, int], turn: Turn) -> Tuple[int, int]:
    dr, dc = heading
    if turn is Turn.THROUGH:
        return heading
    if turn is Turn.LEFT:
        return (-dc, dr)
    return (dc, -dr)


@dataclass(frozen=True, order=True)
class CellIndex:
    """One grid cell. The field order gives the global deterministic ordering
    used for tie-breaking."""

    intersection_id: int
    row: int
    col: int


@dataclass(frozen=True)
class Movement:
    approach: Approach
    lane: int
    turn: Turn

    def key(self) -> Tuple[str, int, str]:
        return (self.approach.value, self.lane, self.turn.value)


@dataclass(frozen=True)
class GridConfig:
    intersection_id: int = 0
    cell_size: float = 2.5
    lanes_per_approach: int = 3
    extension_cells: int = 5


def allowed_turns(lanes_per_approach: int, lane: int) -> Tuple[Turn, ...]:
    """Lane channelization. With 3+ lanes the outer lanes are dedicated left
    and right turn lanes; a single lane carries everything."""
    last = lanes_per_approach - 1
    if lanes_per_approach == 1:
        return (Turn.LEFT, Turn.THROUGH, Turn.RIGHT)
    if lanes_per_approach == 2:
        return (Turn.LEFT, Turn.THROUGH) if lane == 0 else (Turn.THROUGH, Turn.RIGHT)
    if lane == 0:
        return (Turn.LEFT,)
    if lane == last:
        return (Turn.RIGHT,)
    return (Turn.THROUGH,)


def lane_for_turn(lanes_per_approach: int, turn: Turn) -> int:
    """Default approach lane used by routing for a given turn."""
    if turn is Turn.LEFT:
        return 0
    if turn is Turn.RIGHT:
        return lanes_per_approach - 1
    return lanes_per_approach // 2


@dataclass(frozen=True)
class RoutePath:
    """A movement rasterized onto grid cells.

    Cell k covers the arc interval [k*cell_size, (k+1)*cell_size) measured
    from the route origin at the upstream edge of the grid. Waypoints pair
    each cell with its entry arc length, strictly increasing along the path.
    """

    movement: Movement
    cells: Tuple[CellIndex, ...]
    cell_size: float
    box_entry_index: int
    box_exit_index: int  # index one past the last conflict-box cell

    @property
    def total_length(self) -> float:
        return len(self.cells) * self.cell_size

    @property
    def waypoints(self) -> Tuple[Tuple[float, CellIndex], ...]:
        return tuple((i * self.cell_size, c) for i, c in enumerate(self.cells))

    @property
    def box_entry_arc(self) -> float:
        return self.box_entry_index * self.cell_size

    @property
    def box_exit_arc(self) -> float:
        return self.box_exit_index * self.cell_size

    def index_span(self, lo: float, hi: float) -> Tuple[int, int]:
        """Inclusive cell index range intersected by the closed interval
        [lo, hi], clipped to the route."""
        n = len(self.cells)
        cs = self.cell_size
        k_lo = int(math.floor((lo + 1e-9) / cs))
        k_hi = int(math.floor(hi / cs))
        if k_lo < 0:
            k_lo = 0
        if k_hi > n - 1:
            k_hi = n - 1
        return k_lo, k_hi

    def cells_between(self, lo: float, hi: float) -> Tuple[CellIndex, ...]:
        if hi < lo:
            return ()
        k_lo, k_hi = self.index_span(lo, hi)
        if k_hi < k_lo:
            return ()
        return self.cells[k_lo : k_hi + 1]


@dataclass(frozen=True)
class IntersectionGrid:
    id: int
    cell_size: float
    lanes_per_approach: int
    extension_cells: int
    n_rows: int
    n_cols: int
    routes: Dict[Movement, RoutePath] = field(compare=False, repr=False)

    @property
    def box_span(self) -> int:
        return 2 * self.lanes_per_approach

    @property
    def extension_length(self) -> float:
        return self.extension_cells * self.cell_size

    def box_range(self) -> Tuple[int, int]:
        """Half-open [lo, hi) row/col index range of the central conflict box."""
        return self.extension_cells, self.extension_cells + self.box_span

    def in_box(self, cell: CellIndex) -> bool:
        lo, hi = self.box_range()
        return lo <= cell.row < hi and lo <= cell.col < hi

    def movements(self) -> Tuple[Movement, ...]:
        out = []
        for approach in Approach:
            for lane in range(self.lanes_per_approach):
                for turn in allowed_turns(self.lanes_per_approach, lane):
                    out.append(Movement(approach, lane, turn))
        return tuple(out)

    def lane_fixed_coord(self, approach: Approach, lane: int) -> Tuple[str, int]:
        """The constant row or col of an approach lane, lane 0 innermost."""
        ext, lanes = self.extension_cells, self.lanes_per_approach
        if approach is Approach.N:
            return ("col", ext + lanes - 1 - lane)
        if approach is Approach.S:
            return ("col", ext + lanes + lane)
        if approach is Approach.W:
            return ("row", ext + lanes + lane)
        return ("row", ext + lanes - 1 - lane)

    def serialize(self) -> str:
        doc = {
            "format": "intersim-grid/1",
            "id": self.id,
            "cell_size": self.cell_size,
            "lanes_per_approach": self.lanes_per_approach,
            "extension_cells": self.extension_cells,
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "routes": {
                "/".join(map(str, m.key())): [[c.row, c.col] for c in p.cells]
                for m, p in sorted(self.routes.items(), key=lambda kv: kv[0].key())
            },
        }
        return json.dumps(doc, sort_keys=True)


def build_grid(config: GridConfig) -> IntersectionGrid:
    """Build one intersection grid with all movement paths rasterized.

    Deterministic: the same config always produces a byte-identical
    serialized grid.
    """
    if config.cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if config.lanes_per_approach < 1:
        raise ValueError("lanes_per_approach must be >= 1")
    if config.extension_cells < 0:
        raise ValueError("extension_cells must be >= 0")
    n = 2 * config.lanes_per_approach + 2 * config.extension_cells
    grid = IntersectionGrid(
        id=config.intersection_id,
        cell_size=config.cell_size,
        lanes_per_approach=config.lanes_per_approach,
        extension_cells=config.extension_cells,
        n_rows=n,
        n_cols=n,
        routes={},
    )
    for movement in grid.movements():
        grid.routes[movement] = movement_path(grid, movement)
    return grid


def _edge_start(grid: IntersectionGrid, approach: Approach, fixed: Tuple[str, int]) -> Tuple[int, int]:
    axis, value = fixed
    if approach is Approach.N:
        return (0, value)
    if approach is Approach.S:
        return (grid.n_rows - 1, value)
    if approach is Approach.W:
        return (value, 0)
    return (value, grid.n_cols - 1)


def movement_path(grid: IntersectionGrid, movement: Movement) -> RoutePath:
    """Rasterize one movement onto grid cells.

    Through paths are straight traverses. Turns march along the approach
    lane until they reach the receiving lane's row/col, then march out along
    it: an L-shaped, axis-monotone cell sequence that over-approximates the
    swept area of a curved turn.
    """
    lanes = grid.lanes_per_approach
    if not (0 <= movement.lane < lanes):
        raise ValueError(f"lane {movement.lane} out of range for {lanes} lanes")
    if movement.turn not in allowed_turns(lanes, movement.lane):
        raise ValueError(
            f"turn {movement.turn.value} not permitted from lane {movement.lane} "
            f"with {lanes} lanes per approach"
        )

    heading = HEADINGS[movement.approach]
    fixed = grid.lane_fixed_coord(movement.approach, movement.lane)
    r, c = _edge_start(grid, movement.approach, fixed)
    cells: List[Tuple[int, int]] = []

    if movement.turn is Turn.THROUGH:
        while 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
            cells.append((r, c))
            r, c = r + heading[0], c + heading[1]
    else:
        out_heading = turn_heading(heading, movement.turn)
        out_approach = APPROACH_FOR_HEADING[out_heading]
        out_lane = 0 if movement.turn is Turn.LEFT else lanes - 1
        out_axis, out_value = grid.lane_fixed_coord(out_approach, out_lane)
        while 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
            cells.append((r, c))
            varying = r if out_axis == "row" else c
            if varying == out_value:
                break
            r, c = r + heading[0], c + heading[1]
        else:
            raise ValueError("turn never reached its receiving lane")
        r, c = r + out_heading[0], c + out_heading[1]
        while 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
            cells.append((r, c))
            r, c = r + out_heading[0], c + out_heading[1]

    box_lo, box_hi = grid.box_range()
    in_box = [box_lo <= rr < box_hi and box_lo <= cc < box_hi for rr, cc in cells]
    if not any(in_box):
        raise ValueError("path never crosses the conflict box")
    box_entry = in_box.index(True)
    box_exit = len(in_box) - 1 - in_box[::-1].index(True) + 1
    return RoutePath(
        movement=movement,
        cells=tuple(CellIndex(grid.id, rr, cc) for rr, cc in cells),
        cell_size=grid.cell_size,
        box_entry_index=box_entry,
        box_exit_index=box_exit,
    )


def cells_occupied(position: float, vehicle_length: float, path: RoutePath) -> Tuple[CellIndex, ...]:
    """Cells intersected by the vehicle body [position - length, position],
    clipped to the route. Position is the nose arc along the path.

    Cells are half-open intervals, so a rear bumper exactly on a cell
    boundary does not occupy the cell behind it; a degenerate interval at
    the route origin still occupies one cell.
    """
    total = path.total_length
    if position < -1e-9 or position > total + 1e-9:
        raise ValueError(f"position {position} outside route [0, {total}]")
    hi = min(max(position, 0.0), total)
    lo = max(hi - vehicle_length, 0.0)
    return path.cells_between(lo, hi)


@dataclass(frozen=True)
class CorridorConfig:
    n_intersections: int = 4
    grid: GridConfig = field(default_factory=GridConfig)
    link_length: float = 300.0
    leg_length: float = 300.0
    intersection_ids: Optional[Tuple[int, ...]] = None
    links: Optional[Tuple[Tuple[int, int, float], ...]] = None


@dataclass(frozen=True)
class CorridorNetwork:
    """A west-to-east arterial of intersections joined by links, with minor
    cross streets at every intersection. Reservations never span
    intersections: each grid arbitrates its own cells."""

    grids: Tuple[IntersectionGrid, ...]
    links: Tuple[Tuple[int, int, float], ...]
    leg_length: float

    @property
    def order(self) -> Tuple[int, ...]:
        return tuple(g.id for g in self.grids)

    def grid_by_id(self, intersection_id: int) -> IntersectionGrid:
        for g in self.grids:
            if g.id == intersection_id:
                return g
        raise KeyError(intersection_id)

    def position_of(self, intersection_id: int) -> int:
        return self.order.index(intersection_id)

    def link_length_between(self, a: int, b: int) -> float:
        for u, v, length in self.links:
            if (u, v) == (a, b) or (v, u) == (a, b):
                return length
        raise KeyError((a, b))

    def entry_points(self) -> Tuple[Tuple[int, Approach], ...]:
        """Boundary entry legs: minor street N/S at every intersection plus
        the two arterial ends."""
        pts: List[Tuple[int, Approach]] = [(self.order[0], Approach.W)]
        if len(self.order) > 1:
            pts.append((self.order[-1], Approach.E))
        else:
            pts.append((self.order[0], Approach.E))
        for k in self.order:
            pts.append((k, Approach.N))
            pts.append((k, Approach.S))
        return tuple(pts)

    def serialize(self) -> str:
        doc = {
            "format": "intersim-network/1",
            "grids": [json.loads(g.serialize()) for g in self.grids],
            "links": [list(l) for l in self.links],
            "leg_length": self.leg_length,
        }
        return json.dumps(doc, sort_keys=True)


def build_corridor(config: CorridorConfig) -> CorridorNetwork:
    """Build the evaluation network: n intersections in a row joined by
    arterial links. A single intersection with no links is the training
    topology."""
    if config.n_intersections < 1:
        raise ValueError("need at least one intersection")
    ids = config.intersection_ids or tuple(range(config.n_intersections))
    if len(ids) != config.n_intersections:
        raise ValueError("intersection_ids length mismatch")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate intersection ids")
    if config.link_length <= 0:
        raise ValueError("link_length must be positive")
    if config.leg_length <= 0:
        raise ValueError("leg_length must be positive")

    grids = tuple(
        build_grid(
            GridConfig(
                intersection_id=k,
                cell_size=config.grid.cell_size,
                lanes_per_approach=config.grid.lanes_per_approach,
                extension_cells=config.grid.extension_cells,
            )
        )
        for k in ids
    )
    if config.links is not None:
        links = config.links
        for u, v, length in links:
            if u not in ids or v not in ids:
                raise ValueError(f"link endpoint {u}-{v} not an intersection id")
            if length <= 0:
                raise ValueError("link lengths must be positive")
        # connectivity check over the explicit link graph
        adj: Dict[int, List[int]] = {k: [] for k in ids}
        for u, v, _ in links:
            adj[u].append(v)
            adj[v].append(u)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(ids):
            raise ValueError("disconnected topology")
    else:
        links = tuple(
            (ids[i], ids[i + 1], config.link_length) for i in range(len(ids) - 1)
        )
    return CorridorNetwork(grids=grids, links=links, leg_length=config.leg_length)
