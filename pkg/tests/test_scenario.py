from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrv2x.scenario import (
    CLUSTER_SIZE,
    VEHICLE_TYPES,
    Fleet,
    Vehicle,
    advance_mobility,
    drop_vehicles,
    highway_layout,
    same_street,
    urban_layout,
)


def _lane_gaps(layout, vehicles, lane: int) -> np.ndarray:
    """Bumper-to-bumper gaps along one lane, ring closure included."""
    vs = sorted((v for v in vehicles if v.lane == lane), key=lambda v: v.s)
    if len(vs) < 2:
        return np.array([])
    ring = layout.lanes[lane].ring_m
    gaps = []
    for a, b in zip(vs, vs[1:] + vs[:1]):
        d = (b.s - a.s) % ring
        gaps.append(d - a.dims.length / 2 - b.dims.length / 2)
    return np.array(gaps)


def test_option_a_mean_spacing_follows_headway() -> None:
    # A long ring makes the one truncated closing gap per lane negligible.
    layout = highway_layout(100_000.0, "A", 140.0)
    vehicles = drop_vehicles(layout, "A", np.random.default_rng(5))
    gaps = np.concatenate([_lane_gaps(layout, vehicles, lane) for lane in range(6)])
    # max(Exp(77.78), 2) has mean 2 + 77.78 * exp(-2 / 77.78)
    expected = 2 + 38.889 * 2 * np.exp(-2 / (38.889 * 2))
    assert layout.lanes[0].speed_mps * 2 == pytest.approx(77.78, abs=0.01)
    assert np.mean(gaps) == pytest.approx(expected, abs=3.0)


def test_option_c_clusters() -> None:
    layout = highway_layout(2000.0, "C")
    vehicles = drop_vehicles(layout, "C", np.random.default_rng(2))
    assert all(v.speed == pytest.approx(140 / 3.6) for v in vehicles)
    found = 0
    for lane in range(6):
        vs = sorted((v for v in vehicles if v.lane == lane), key=lambda v: v.s)
        types = [v.vtype for v in vs]
        k = 0
        while k < len(vs):
            if types[k] != 3:
                k += 1
                continue
            run = vs[k:k + CLUSTER_SIZE]
            assert [v.vtype for v in run] == [3] * CLUSTER_SIZE
            for a, b in zip(run, run[1:]):
                assert b.s - a.s - VEHICLE_TYPES[3].length == pytest.approx(2.0)
            found += 1
            k += CLUSTER_SIZE
    assert found > 0


def test_option_c_with_vehicle_count() -> None:
    layout = highway_layout(2000.0, "C")
    vehicles = drop_vehicles(layout, "C", np.random.default_rng(4), num_vehicles=40)
    assert len(vehicles) == 40


def test_zero_length_road_is_empty() -> None:
    assert drop_vehicles(highway_layout(0.0, "A"), "A", np.random.default_rng(0)) == []


@pytest.mark.parametrize("start, end", [(2000.0, 0.038889), (1999.99, 0.028889), (1999.0, 1999.038889)])
def test_highway_wrap(start: float, end: float) -> None:
    layout = highway_layout(2000.0, "A")
    lane = 3  # west to east
    fleet = Fleet.from_vehicles(layout, [Vehicle(0, 2, lane, start, 38.889, 0.0)])
    out = advance_mobility(fleet, layout, 1e-3, np.random.default_rng(0))
    assert out.s[0] == pytest.approx(end, abs=1e-9)
    assert out.odometer[0] == pytest.approx(0.038889)


def test_westbound_wraps_below_zero() -> None:
    layout = highway_layout(2000.0, "A")
    fleet = Fleet.from_vehicles(layout, [Vehicle(0, 2, 0, 0.01, 38.889, np.pi)])
    out = advance_mobility(fleet, layout, 1e-3, np.random.default_rng(0))
    assert out.s[0] == pytest.approx(2000.0 - 0.028889, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), option=st.sampled_from(["A", "B", "C"]),
       count=st.one_of(st.none(), st.integers(1, 120)))
def test_gap_invariant_at_drop(seed: int, option: str, count) -> None:
    layout = highway_layout(2000.0, option)
    vehicles = drop_vehicles(layout, option, np.random.default_rng(seed), num_vehicles=count)
    for lane in range(len(layout.lanes)):
        g = _lane_gaps(layout, vehicles, lane)
        assert (g >= 2.0 - 1e-9).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_urban_gap_invariant(seed: int) -> None:
    layout = urban_layout("A")
    vehicles = drop_vehicles(layout, "A", np.random.default_rng(seed))
    for lane in range(len(layout.lanes)):
        g = _lane_gaps(layout, vehicles, lane)
        assert (g >= 2.0 - 1e-9).all()


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), option=st.sampled_from(["A", "B"]))
def test_wrap_conserves_lane_counts(seed: int, option: str) -> None:
    layout = highway_layout(2000.0, option)
    rng = np.random.default_rng(seed)
    fleet = Fleet.from_vehicles(layout, drop_vehicles(layout, option, rng))
    before = np.bincount(fleet.lane, minlength=6)
    for _ in range(200):
        fleet = advance_mobility(fleet, layout, 0.1, rng)
        assert ((fleet.s >= 0) & (fleet.s < 2000.0)).all()
    assert (np.bincount(fleet.lane, minlength=6) == before).all()


def test_same_seed_same_trajectories() -> None:
    layout = urban_layout("A")

    def trajectory(seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        fleet = Fleet.from_vehicles(layout, drop_vehicles(layout, "A", rng))
        for _ in range(100):
            fleet = advance_mobility(fleet, layout, 0.1, rng)
        return np.concatenate(fleet.positions(layout))

    assert np.array_equal(trajectory(9), trajectory(9))


def test_option_b_urban_keeps_heading() -> None:
    layout = urban_layout("B")
    rng = np.random.default_rng(1)
    fleet = Fleet.from_vehicles(layout, drop_vehicles(layout, "B", rng))
    axis, direction = fleet.axis.copy(), fleet.direction.copy()
    for _ in range(300):
        fleet = advance_mobility(fleet, layout, 0.1, rng)
    assert (fleet.axis == axis).all() and (fleet.direction == direction).all()
    # north-south lanes are parked in option B
    assert (fleet.speed[fleet.axis == 1] == 0).all()


def test_turn_frequencies_at_intersections() -> None:
    layout = urban_layout("A")
    lane = layout.lane_index(0, 1, 1, 0)  # eastbound on the second x street
    n = 100_000
    speed = layout.lanes[lane].speed_mps
    vehicles = [Vehicle(i, 2, lane, layout.block_x_m - 0.5, speed, 0.0) for i in range(n)]
    fleet = advance_mobility(Fleet.from_vehicles(layout, vehicles), layout, 0.1, np.random.default_rng(3))
    straight = np.mean(fleet.axis == 0)
    left = np.mean((fleet.axis == 1) & (fleet.direction == 1))  # eastbound turning left heads north
    right = np.mean((fleet.axis == 1) & (fleet.direction == -1))
    assert straight == pytest.approx(0.5, abs=0.01)
    assert left == pytest.approx(0.25, abs=0.01)
    assert right == pytest.approx(0.25, abs=0.01)


def test_same_street_predicate() -> None:
    layout = urban_layout("A")
    # both on the x street at y = 250
    assert same_street(layout, 10.0, 251.0, 300.0, 248.0)
    # perpendicular streets away from the shared intersection
    assert not same_street(layout, 100.0, 250.0, 433.0, 100.0)
    # intersection belongs to both crossing streets
    assert same_street(layout, 433.0, 250.0, 433.0, 100.0)
    assert same_street(layout, 433.0, 250.0, 100.0, 250.0)
