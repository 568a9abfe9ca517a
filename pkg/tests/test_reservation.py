import math

import pytest
from hypothesis import given, settings, strategies as st

from intersim.geometry import (
    Approach,
    CellIndex,
    GridConfig,
    Movement,
    Turn,
    build_grid,
)
from intersim.kinematics import Action, KinematicsParams, VehicleState
from intersim.reservation import (
    ClaimRequest,
    CoordinationGroup,
    DesiredCellSet,
    SafetyViolation,
    TransitionType,
    arbitrate,
    classify_transition,
    desired_cell_count,
    desired_cells,
    detect_conflicts,
)

K1 = KinematicsParams(dt=1.0)


def cell(r, c, k=0):
    return CellIndex(k, r, c)


class TestDesiredCells:
    @pytest.mark.parametrize("speed,expected", [(11.17, 5), (0.0, 1), (5.0, 3)])
    def test_cell_count_oracle(self, speed, expected):
        assert desired_cell_count(speed, K1, 2.5) == expected

    def test_survey_dominates_at_rest(self):
        # 0.5*3.5*1 = 1.75 m -> 1 cell
        assert desired_cell_count(0.0, K1, 2.5) == 1

    def test_cells_consecutive_from_current(self):
        from intersim.geometry import cells_occupied

        grid = build_grid(GridConfig())
        path = grid.routes[Movement(Approach.N, 1, Turn.THROUGH)]
        v = VehicleState(id=3, route=path, position=6.0, speed=5.0)
        ds = desired_cells(v, K1)
        assert ds.ds_cells == 3
        rows = [c.row for c in ds.cells]
        assert rows == list(range(rows[0], rows[0] + len(rows)))
        current = cells_occupied(v.position, v.length, path)
        assert ds.cells[: len(current)] == current
        assert len(ds.cells) == len(current) + 3

    def test_clipped_at_route_end(self):
        grid = build_grid(GridConfig())
        path = grid.routes[Movement(Approach.N, 1, Turn.THROUGH)]
        v = VehicleState(id=3, route=path, position=path.total_length - 0.5, speed=11.17)
        ds = desired_cells(v, K1)
        assert ds.ds_cells == 5
        assert len(ds.cells) < 5 + 3  # ran out of route

    def test_off_route_rejected(self):
        grid = build_grid(GridConfig())
        path = grid.routes[Movement(Approach.N, 1, Turn.THROUGH)]
        v = VehicleState(id=3, route=path, position=path.total_length + 2.0, speed=1.0)
        with pytest.raises(ValueError):
            desired_cells(v, K1)

    @settings(max_examples=200)
    @given(st.floats(min_value=0.0, max_value=11.17))
    def test_smaller_dt_never_needs_more_cells(self, speed):
        k_half = KinematicsParams(dt=0.5)
        assert desired_cell_count(speed, k_half, 2.5) <= desired_cell_count(speed, K1, 2.5)


class TestDetectConflicts:
    def d(self, vid, cells):
        return DesiredCellSet(vid, 0, tuple(cells), len(cells))

    def test_crossing_pair_coordinates(self):
        groups = detect_conflicts(
            [self.d(1, [cell(5, 6), cell(6, 6)]), self.d(2, [cell(6, 6), cell(6, 7)])]
        )
        assert len(groups) == 1
        assert groups[0].members == (1, 2)
        assert cell(6, 6) in groups[0].shared_cells
        assert groups[0].coordinated

    def test_disjoint_vehicles_independent(self):
        groups = detect_conflicts(
            [self.d(1, [cell(0, 0)]), self.d(2, [cell(9, 9)])]
        )
        assert [g.members for g in groups] == [(1,), (2,)]
        assert not any(g.coordinated for g in groups)

    def test_transitive_closure(self):
        groups = detect_conflicts(
            [
                self.d(1, [cell(0, 0), cell(0, 1)]),
                self.d(2, [cell(0, 1), cell(0, 2)]),
                self.d(3, [cell(0, 2), cell(0, 3)]),
            ]
        )
        assert len(groups) == 1
        assert groups[0].members == (1, 2, 3)

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            detect_conflicts([self.d(1, [cell(0, 0)]), self.d(1, [cell(1, 1)])])

    @settings(max_examples=100)
    @given(
        st.dictionaries(
            st.integers(min_value=0, max_value=15),
            st.sets(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=4),
            min_size=1,
            max_size=10,
        )
    )
    def test_groups_partition_vehicles(self, claims):
        desired = [
            self.d(vid, sorted(cell(r, c) for r, c in cells))
            for vid, cells in sorted(claims.items())
        ]
        groups = detect_conflicts(desired)
        seen = [m for g in groups for m in g.members]
        assert sorted(seen) == sorted(claims)
        assert len(seen) == len(set(seen))


class TestClassifyTransition:
    def g(self, gid, members):
        return CoordinationGroup(gid, tuple(members), ())

    def test_same_kind(self):
        prev = [self.g(0, [1]), self.g(1, [2])]
        assert classify_transition(prev, prev, 1) is TransitionType.SAME_KIND

    def test_coordinated_to_independent(self):
        prev = [self.g(0, [1, 2])]
        new = [self.g(0, [1]), self.g(1, [2])]
        assert (
            classify_transition(prev, new, 1)
            is TransitionType.COORDINATED_TO_INDEPENDENT
        )

    def test_independent_to_coordinated(self):
        prev = [self.g(0, [1]), self.g(1, [2]), self.g(2, [3])]
        new = [self.g(0, [1, 2, 3])]
        assert (
            classify_transition(prev, new, 1)
            is TransitionType.INDEPENDENT_TO_COORDINATED
        )
        assert len(new[0].members) == 3

    def test_missing_vehicle_rejected(self):
        with pytest.raises(ValueError):
            classify_transition([self.g(0, [1])], [self.g(0, [1])], 99)


def request(vid, entry, proposal, envelopes, prelock, line_blocked=None):
    return ClaimRequest(
        vehicle_id=vid,
        priority=(entry, (0, 0, 0), vid),
        proposal=proposal,
        prelock=tuple(prelock),
        envelopes={a: tuple(cells) for a, cells in envelopes.items()},
        line_blocked=line_blocked,
    )


class TestArbitrate:
    def test_single_vehicle_keeps_proposal(self):
        req = request(
            1,
            0.0,
            Action.ACCELERATE,
            {
                Action.ACCELERATE: [cell(0, 0), cell(1, 0), cell(2, 0)],
                Action.MAINTAIN: [cell(0, 0), cell(1, 0)],
                Action.DECELERATE: [cell(0, 0)],
            },
            [cell(0, 0)],
        )
        actions, table = arbitrate([req])
        assert actions[1] is Action.ACCELERATE
        assert set(table.grants.values()) == {1}

    def test_contender_downgraded_to_max_feasible(self):
        contested = cell(5, 5)
        a = request(
            1,
            0.0,
            Action.ACCELERATE,
            {
                Action.ACCELERATE: [cell(5, 4), contested],
                Action.MAINTAIN: [cell(5, 4)],
                Action.DECELERATE: [cell(5, 4)],
            },
            [cell(5, 4)],
        )
        b = request(
            2,
            1.0,
            Action.ACCELERATE,
            {
                Action.ACCELERATE: [cell(4, 5), contested],
                Action.MAINTAIN: [cell(4, 5), contested],
                Action.DECELERATE: [cell(4, 5)],
            },
            [cell(4, 5)],
        )
        actions, table = arbitrate([a, b])
        assert actions[1] is Action.ACCELERATE
        # independent check: enumerate B's actions, highest whose cells
        # avoid the contested grant is Decelerate
        assert actions[2] is Action.DECELERATE
        assert table.grants[contested] == 1

    def test_braking_vehicle_always_granted(self):
        shared = cell(3, 3)
        first = request(
            1, 0.0, Action.MAINTAIN,
            {Action.MAINTAIN: [shared], Action.DECELERATE: [shared]},
            [shared],
        )
        second = request(
            2, 1.0, Action.DECELERATE,
            {Action.DECELERATE: [cell(2, 3)]},
            [cell(2, 3)],
        )
        actions, _ = arbitrate([first, second])
        assert actions[2] is Action.DECELERATE

    def test_priority_monotone_when_adding_noncontender(self):
        contested = cell(5, 5)
        a = request(1, 0.0, Action.ACCELERATE,
                    {Action.ACCELERATE: [contested], Action.MAINTAIN: [cell(5, 4)],
                     Action.DECELERATE: [cell(5, 4)]}, [cell(5, 4)])
        b = request(2, 1.0, Action.ACCELERATE,
                    {Action.ACCELERATE: [contested], Action.MAINTAIN: [cell(4, 5)],
                     Action.DECELERATE: [cell(4, 5)]}, [cell(4, 5)])
        c = request(3, 2.0, Action.MAINTAIN,
                    {Action.MAINTAIN: [cell(9, 9)], Action.DECELERATE: [cell(9, 9)]},
                    [cell(9, 9)])
        base, _ = arbitrate([a, b])
        extended, _ = arbitrate([a, b, c])
        assert base == {k: v for k, v in extended.items() if k != 3}

    def test_overlapping_prelocks_raise(self):
        shared = cell(1, 1)
        a = request(1, 0.0, Action.DECELERATE, {Action.DECELERATE: [shared]}, [shared])
        b = request(2, 1.0, Action.DECELERATE, {Action.DECELERATE: [shared]}, [shared])
        with pytest.raises(SafetyViolation):
            arbitrate([a, b])

    def test_stop_line_blocks_until_decelerate(self):
        box = cell(5, 5)
        req = request(
            1, 0.0, Action.ACCELERATE,
            {Action.ACCELERATE: [cell(4, 5), box],
             Action.MAINTAIN: [cell(4, 5), box],
             Action.DECELERATE: [cell(4, 5)]},
            [cell(4, 5)],
            line_blocked={Action.ACCELERATE: True, Action.MAINTAIN: True,
                          Action.DECELERATE: False},
        )
        actions, table = arbitrate([req])
        assert actions[1] is Action.DECELERATE
        assert box not in table.grants
