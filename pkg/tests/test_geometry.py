import json

import pytest
from hypothesis import given, settings, strategies as st

from intersim.geometry import (
    Approach,
    CellIndex,
    CorridorConfig,
    GridConfig,
    Movement,
    Turn,
    build_corridor,
    build_grid,
    cells_occupied,
    movement_path,
)


def default_grid(**kw):
    return build_grid(GridConfig(**kw))


class TestBuildGrid:
    def test_default_extension_spans_12_5_m(self):
        grid = default_grid()
        assert grid.extension_length == pytest.approx(12.5)
        assert grid.extension_length >= 11.17  # one-step survey envelope
        assert grid.n_rows == grid.n_cols == 2 * 3 + 2 * 5

    def test_degenerate_single_lane_no_extension(self):
        grid = default_grid(lanes_per_approach=1, extension_cells=0)
        assert grid.n_rows == grid.n_cols == 2
        assert grid.extension_length == 0.0

    def test_same_config_builds_identical_grids(self):
        a = default_grid().serialize()
        b = default_grid().serialize()
        assert a.encode() == b.encode()

    def test_rejects_nonpositive_dimensions(self):
        with pytest.raises(ValueError):
            build_grid(GridConfig(cell_size=0.0))
        with pytest.raises(ValueError):
            build_grid(GridConfig(lanes_per_approach=0))


class TestMovementPath:
    def test_through_traverse_cell_count(self):
        # independent oracle: a straight traverse covers one cell per grid
        # row, and the grid is box span + both extensions across
        grid = default_grid(lanes_per_approach=6, extension_cells=5)
        assert grid.box_span == 12
        path = movement_path(grid, Movement(Approach.N, 6 // 2, Turn.THROUGH))
        assert len(path.cells) == 12 + 2 * 5
        cols = {c.col for c in path.cells}
        assert len(cols) == 1  # straight line
        assert [c.row for c in path.cells] == list(range(grid.n_rows))

    @pytest.mark.parametrize("approach", list(Approach))
    def test_right_turn_stays_in_corner_quadrant(self, approach):
        grid = default_grid()
        lo, hi = grid.box_range()
        mid = (lo + hi) // 2
        path = movement_path(grid, Movement(approach, 2, Turn.RIGHT))
        box_cells = [c for c in path.cells if grid.in_box(c)]
        assert box_cells
        # geometric containment: the entry corner quadrant for each approach
        quadrants = {
            Approach.N: (range(lo, mid), range(lo, mid)),
            Approach.E: (range(lo, mid), range(mid, hi)),
            Approach.S: (range(mid, hi), range(mid, hi)),
            Approach.W: (range(mid, hi), range(lo, mid)),
        }
        rows, cols = quadrants[approach]
        assert all(c.row in rows and c.col in cols for c in box_cells)

    def test_same_movement_twice_is_identical(self):
        grid = default_grid()
        m = Movement(Approach.W, 1, Turn.THROUGH)
        assert movement_path(grid, m) == movement_path(grid, m)

    def test_invalid_channelization_rejected(self):
        grid = default_grid()
        with pytest.raises(ValueError):
            movement_path(grid, Movement(Approach.N, 1, Turn.LEFT))
        with pytest.raises(ValueError):
            movement_path(grid, Movement(Approach.N, 0, Turn.RIGHT))
        with pytest.raises(ValueError):
            movement_path(grid, Movement(Approach.N, 3, Turn.THROUGH))

    def test_consecutive_cells_adjacent_all_movements(self):
        grid = default_grid()
        for movement in grid.movements():
            path = grid.routes[movement]
            arcs = [a for a, _ in path.waypoints]
            assert arcs == sorted(arcs) and len(set(arcs)) == len(arcs)
            for a, b in zip(path.cells, path.cells[1:]):
                assert max(abs(a.row - b.row), abs(a.col - b.col)) == 1

    def test_left_turn_enters_receiving_left_lane(self):
        grid = default_grid()
        path = movement_path(grid, Movement(Approach.N, 0, Turn.LEFT))
        # southbound turning left exits eastbound on the innermost lane
        axis, value = grid.lane_fixed_coord(Approach.W, 0)
        assert axis == "row"
        assert path.cells[-1].row == value
        assert path.cells[-1].col == grid.n_cols - 1


class TestCellsOccupied:
    def straight(self):
        grid = default_grid()
        return grid.routes[Movement(Approach.N, 1, Turn.THROUGH)]

    def test_rear_bumper_on_boundary_two_cells(self):
        path = self.straight()
        occ = cells_occupied(5.0 + 4.90, 4.90, path)
        assert len(occ) == 2

    def test_straddling_two_boundaries_three_cells(self):
        path = self.straight()
        occ = cells_occupied(8.0, 4.90, path)
        assert len(occ) == 3

    def test_clipped_at_route_start_one_cell(self):
        path = self.straight()
        assert len(cells_occupied(0.0, 4.90, path)) == 1

    def test_position_outside_route_rejected(self):
        path = self.straight()
        with pytest.raises(ValueError):
            cells_occupied(-1.0, 4.9, path)
        with pytest.raises(ValueError):
            cells_occupied(path.total_length + 1.0, 4.9, path)

    @given(st.floats(min_value=4.90, max_value=40.0))
    def test_body_covers_two_or_three_cells(self, position):
        occ = cells_occupied(position, 4.90, self.straight())
        assert len(occ) in (2, 3)

    @settings(max_examples=200)
    @given(
        st.floats(min_value=0.0, max_value=37.0),
        st.floats(min_value=0.01, max_value=2.49),
    )
    def test_monotone_advance(self, position, step):
        path = self.straight()
        before = set(cells_occupied(position, 4.90, path))
        after = set(cells_occupied(position + step, 4.90, path))
        assert len(after - before) <= 1
        assert len(before - after) <= 1


class TestCorridor:
    def test_four_intersections_three_links(self):
        net = build_corridor(CorridorConfig(n_intersections=4, link_length=300.0))
        assert len(net.grids) == 4
        assert len(net.links) == 3
        assert all(length == 300.0 for _, _, length in net.links)
        assert net.serialize() == build_corridor(
            CorridorConfig(n_intersections=4, link_length=300.0)
        ).serialize()

    def test_single_intersection_training_topology(self):
        net = build_corridor(CorridorConfig(n_intersections=1, leg_length=2000.0))
        assert len(net.grids) == 1
        assert net.links == ()
        assert net.leg_length == 2000.0
        assert len(net.entry_points()) == 4

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            build_corridor(CorridorConfig(n_intersections=2, intersection_ids=(1, 1)))

    def test_disconnected_topology_rejected(self):
        with pytest.raises(ValueError):
            build_corridor(
                CorridorConfig(
                    n_intersections=3,
                    intersection_ids=(0, 1, 2),
                    links=((0, 1, 100.0),),
                )
            )

    def test_entry_points_cover_boundaries(self):
        net = build_corridor(CorridorConfig(n_intersections=4))
        pts = net.entry_points()
        assert (0, Approach.W) in pts and (3, Approach.E) in pts
        assert sum(1 for _, a in pts if a in (Approach.N, Approach.S)) == 8
