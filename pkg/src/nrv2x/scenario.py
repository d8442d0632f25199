"""Road layouts, vehicle dropping and constant-speed mobility.

Two layouts exist.  The highway is a straight ring of six lanes, three per
direction, wrapped around at ``length_m``.  The urban grid is a torus of
``blocks_x`` by ``blocks_y`` blocks; every street is a ring with two lanes per
direction.

Coordinates: x runs along the highway and along east-west streets, y along
north-south streets.  Distances use the minimum-image convention on the
wrapped axes.

Same-street predicate (used by the channel for urban NLOS): each street owns
the rectangle ``|c - c_street| <= half_road_m`` across its full length, where
``c`` is the cross coordinate.  Two vehicles share a street when some street
rectangle contains both of them.  Rectangles run through intersections, so a
vehicle inside an intersection belongs to both crossing streets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

KMH = 1.0 / 3.6


@dataclass(frozen=True)
class VehicleType:
    length: float
    width: float
    height: float
    antenna_height: float


VEHICLE_TYPES = {
    1: VehicleType(5.0, 2.0, 1.6, 0.75),
    2: VehicleType(5.0, 2.0, 1.6, 1.6),
    3: VehicleType(13.0, 2.6, 3.0, 3.0),
}

TYPE_MIX = {"A": (0.0, 1.0, 0.0), "B": (0.2, 0.6, 0.2), "C": (0.0, 0.67, 0.33)}
CLUSTER_SIZE = 6
CLUSTER_GAP_M = 2.0
MIN_GAP_M = 2.0
HEADWAY_S = 2.0
TURN_PROBS = (0.5, 0.25, 0.25)  # straight, left, right

HIGHWAY_SPEEDS_B_KMH = (80, 100, 140, 40, 30, 20)
URBAN_SPEEDS_B_KMH = (60, 50, 25, 15)  # EW left, EW right, WE left, WE right


@dataclass(frozen=True)
class Lane:
    axis: int  # 0: travels along x, 1: along y
    street: int  # street index on this axis (always 0 on the highway)
    direction: int  # +1 or -1 along the axis
    slot: int  # lane position within its direction, 0 = innermost
    speed_mps: float
    ring_m: float  # lane length before wrapping
    lateral_m: float  # cross coordinate of the lane centre


@dataclass(frozen=True)
class RoadLayout:
    kind: str  # "highway" | "urban_grid"
    lanes: tuple[Lane, ...]
    lane_width_m: float
    length_m: float = 0.0  # highway
    block_x_m: float = 0.0  # urban
    block_y_m: float = 0.0
    blocks_x: int = 0
    blocks_y: int = 0
    option: str = "A"

    @property
    def extent(self) -> tuple[float, float]:
        """Periodic extent on x and y (0 means not wrapped)."""
        if self.kind == "highway":
            return self.length_m, 0.0
        return self.blocks_x * self.block_x_m, self.blocks_y * self.block_y_m

    @property
    def half_road_m(self) -> float:
        return 2 * self.lane_width_m

    def lane_index(self, axis: int, street: int, direction: int, slot: int) -> int:
        return self._lane_lookup[(axis, street, direction, slot)]

    @property
    def _lane_lookup(self) -> dict:
        cache = self.__dict__.get("_lookup")
        if cache is None:
            cache = {(ln.axis, ln.street, ln.direction, ln.slot): i for i, ln in enumerate(self.lanes)}
            object.__setattr__(self, "_lookup", cache)
        return cache

    def street_coord(self, axis: int, street: int) -> float:
        # Streets along x sit at y = j * block_y; streets along y at x = i * block_x.
        return street * (self.block_y_m if axis == 0 else self.block_x_m)


def highway_layout(length_m: float = 2000.0, option: str = "A", speed_kmh: float = 140.0,
                   lane_width_m: float = 4.0) -> RoadLayout:
    if option not in ("A", "B", "C"):
        raise ValueError(f"unknown dropping option {option!r}")
    if option == "B":
        speeds = HIGHWAY_SPEEDS_B_KMH
    elif option == "C":
        speeds = (140,) * 6
    else:
        if speed_kmh not in (140, 70):
            raise ValueError("option A highway speed must be 140 or 70 km/h")
        speeds = (speed_kmh,) * 6
    lanes = []
    for i, v in enumerate(speeds):
        # Lanes 1-3 run east to west, lanes 4-6 west to east.
        direction = -1 if i < 3 else 1
        slot = (2 - i) if i < 3 else (i - 3)
        lanes.append(Lane(0, 0, direction, slot, v * KMH, length_m, (i + 0.5) * lane_width_m))
    return RoadLayout("highway", tuple(lanes), lane_width_m, length_m=length_m, option=option)


def urban_layout(option: str = "A", block_x_m: float = 433.0, block_y_m: float = 250.0,
                 blocks_x: int = 3, blocks_y: int = 3, lane_width_m: float = 3.5) -> RoadLayout:
    if option == "C":
        raise ValueError("dropping option C is defined for the highway only")
    if option not in ("A", "B"):
        raise ValueError(f"unknown dropping option {option!r}")
    if blocks_x < 3 or blocks_y < 3:
        raise ValueError("urban grid needs at least 3 x 3 blocks")
    width, height = blocks_x * block_x_m, blocks_y * block_y_m
    lanes = []
    for axis, n_streets, ring in ((0, blocks_y, width), (1, blocks_x, height)):
        for street in range(n_streets):
            c = street * (block_y_m if axis == 0 else block_x_m)
            for direction in (-1, 1):
                for slot in (0, 1):
                    if option == "A":
                        v = 60.0
                    elif axis == 0:
                        # Lanes 1/2 run east to west, lanes 3/4 west to east.
                        v = URBAN_SPEEDS_B_KMH[(0 if direction == -1 else 2) + slot]
                    else:
                        v = 0.0
                    lateral = c + _lateral_sign(axis, direction) * (slot + 0.5) * lane_width_m
                    lanes.append(Lane(axis, street, direction, slot, v * KMH, ring, lateral))
    return RoadLayout("urban_grid", tuple(lanes), lane_width_m, block_x_m=block_x_m,
                      block_y_m=block_y_m, blocks_x=blocks_x, blocks_y=blocks_y, option=option)


def _lateral_sign(axis: int, direction: int) -> int:
    # Right-hand traffic seen from above with y pointing north.
    return -direction if axis == 0 else direction


@dataclass
class Vehicle:
    id: int
    vtype: int
    lane: int
    s: float  # longitudinal coordinate of the vehicle centre along its lane
    speed: float  # m/s
    heading: float  # radians, 0 = +x

    @property
    def dims(self) -> VehicleType:
        return VEHICLE_TYPES[self.vtype]


def _heading(axis: int, direction: int) -> float:
    base = 0.0 if axis == 0 else math.pi / 2
    return base if direction > 0 else base + math.pi


def _intersection_boxes(layout: RoadLayout, lane: Lane) -> list[tuple[float, float]]:
    if layout.kind != "urban_grid":
        return []
    step = layout.block_x_m if lane.axis == 0 else layout.block_y_m
    n = layout.blocks_x if lane.axis == 0 else layout.blocks_y
    h = layout.half_road_m
    return [(k * step - h, k * step + h) for k in range(n + 1)]


def _draw_unit(option: str, mix: tuple[float, float, float], rng: np.random.Generator) -> list[int]:
    if option == "C":
        # A cluster is drawn with probability p so that the vehicle-level
        # type-3 share equals mix[2]:  6p / (6p + 1 - p) = share.
        share = mix[2]
        p_cluster = share / (CLUSTER_SIZE - share * (CLUSTER_SIZE - 1))
        return [3] * CLUSTER_SIZE if rng.random() < p_cluster else [2]
    return [int(rng.choice(3, p=mix)) + 1]


def _unit_length(types: list[int]) -> float:
    return sum(VEHICLE_TYPES[t].length for t in types) + CLUSTER_GAP_M * (len(types) - 1)


def _blocked(start: float, stop: float, boxes: list[tuple[float, float]], ring: float) -> Optional[float]:
    """End of the first exclusion box overlapped by [start, stop), if any."""
    for lo, hi in boxes:
        for shift in (-ring, 0.0, ring):
            if start < hi + shift and lo + shift < stop:
                return hi + shift
    return None


def _place_units(units: list[list[int]], starts: list[float]) -> list[tuple[int, float]]:
    out = []
    for types, rear in zip(units, starts):
        cursor = rear
        for t in types:
            length = VEHICLE_TYPES[t].length
            out.append((t, cursor + length / 2))
            cursor += length + CLUSTER_GAP_M
    return out


def _drop_lane_exponential(layout: RoadLayout, lane: Lane, rng: np.random.Generator) -> list[tuple[int, float]]:
    ring = lane.ring_m
    mix = TYPE_MIX[layout.option]
    mean = lane.speed_mps * HEADWAY_S
    boxes = _intersection_boxes(layout, lane) if (layout.option == "B" and lane.axis == 1) else []
    units: list[list[int]] = []
    starts: list[float] = []
    cursor = rng.uniform(0.0, max(mean, MIN_GAP_M))  # rear bumper of the first unit
    first_rear = None
    prev_front = None
    while True:
        types = _draw_unit(layout.option, mix, rng)
        length = _unit_length(types)
        if prev_front is not None:
            spacing = rng.exponential(mean) if mean > 0 else 0.0
            cursor = prev_front + max(spacing, MIN_GAP_M)
        while True:
            end = _blocked(cursor, cursor + length, boxes, ring)
            if end is None:
                break
            cursor = end
        if first_rear is None:
            first_rear = cursor
        # The ring closes when the last front bumper keeps 2 m to the first rear bumper.
        if cursor + length + MIN_GAP_M > first_rear + ring:
            break
        units.append(types)
        starts.append(cursor)
        prev_front = cursor + length
    return _place_units(units, starts)


def _drop_lane_count(layout: RoadLayout, lane: Lane, count: int, rng: np.random.Generator) -> list[tuple[int, float]]:
    """Exactly ``count`` vehicles per lane, spread as uniform order statistics above the 2 m floor.

    A cluster that would overshoot the count is replaced by a single vehicle.
    """
    mix = TYPE_MIX[layout.option]
    units: list[list[int]] = []
    left = count
    while left > 0:
        unit = _draw_unit(layout.option, mix, rng)
        if len(unit) > left:
            unit = [2]
        units.append(unit)
        left -= len(unit)
    if not units:
        return []
    lengths = [_unit_length(u) for u in units]
    free = lane.ring_m - sum(lengths) - MIN_GAP_M * len(units)
    if free < 0:
        raise ValueError(f"{count} vehicles do not fit in a {lane.ring_m:.0f} m lane")
    u = np.sort(rng.uniform(0.0, free, size=len(units)))
    phase = rng.uniform(0.0, lane.ring_m)
    starts, used = [], 0.0
    for k, length in enumerate(lengths):
        starts.append(phase + u[k] + used)
        used += length + MIN_GAP_M
    return _place_units(units, starts)


def drop_vehicles(layout: RoadLayout, option: str, rng: np.random.Generator,
                  num_vehicles: Optional[int] = None) -> list[Vehicle]:
    """Drop vehicles lane by lane.

    Without ``num_vehicles`` spacings are exponential with a mean of the lane
    speed times 2 s.  With it, the count is split evenly across the moving
    lanes and positions are uniform order statistics above the 2 m gap floor.
    """
    if option != layout.option:
        raise ValueError(f"layout was built for option {layout.option}, not {option}")
    if option == "C" and layout.kind != "highway":
        raise ValueError("dropping option C is defined for the highway only")
    out: list[Vehicle] = []
    if layout.extent[0] <= 0:
        return out
    if num_vehicles is not None:
        lanes = [i for i, ln in enumerate(layout.lanes) if ln.speed_mps > 0] or list(range(len(layout.lanes)))
        base, extra = divmod(num_vehicles, len(lanes))
        per_lane = {i: base + (1 if k < extra else 0) for k, i in enumerate(lanes)}
    for li, lane in enumerate(layout.lanes):
        if num_vehicles is None:
            placed = _drop_lane_exponential(layout, lane, rng)
        else:
            placed = _drop_lane_count(layout, lane, per_lane.get(li, 0), rng)
        for vtype, s in placed:
            out.append(Vehicle(len(out), vtype, li, s % lane.ring_m, lane.speed_mps,
                               _heading(lane.axis, lane.direction)))
    return out


@dataclass
class Fleet:
    """Struct-of-arrays view of all vehicles, used by the engine each slot."""

    lane: np.ndarray
    axis: np.ndarray
    street: np.ndarray
    direction: np.ndarray
    slot: np.ndarray
    s: np.ndarray
    speed: np.ndarray
    vtype: np.ndarray
    length: np.ndarray
    width: np.ndarray
    height: np.ndarray
    antenna: np.ndarray
    odometer: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.odometer is None:
            self.odometer = np.zeros(len(self.s))

    def __len__(self) -> int:
        return len(self.s)

    @classmethod
    def from_vehicles(cls, layout: RoadLayout, vehicles: list[Vehicle]) -> "Fleet":
        lanes = [layout.lanes[v.lane] for v in vehicles]
        dims = [VEHICLE_TYPES[v.vtype] for v in vehicles]
        return cls(
            lane=np.array([v.lane for v in vehicles], dtype=int),
            axis=np.array([ln.axis for ln in lanes], dtype=int),
            street=np.array([ln.street for ln in lanes], dtype=int),
            direction=np.array([ln.direction for ln in lanes], dtype=int),
            slot=np.array([ln.slot for ln in lanes], dtype=int),
            s=np.array([v.s for v in vehicles], dtype=float),
            speed=np.array([v.speed for v in vehicles], dtype=float),
            vtype=np.array([v.vtype for v in vehicles], dtype=int),
            length=np.array([d.length for d in dims], dtype=float),
            width=np.array([d.width for d in dims], dtype=float),
            height=np.array([d.height for d in dims], dtype=float),
            antenna=np.array([d.antenna_height for d in dims], dtype=float),
        )

    def copy(self) -> "Fleet":
        return replace(self, **{k: getattr(self, k).copy() for k in self.__dataclass_fields__})

    def to_vehicles(self) -> list[Vehicle]:
        return [
            Vehicle(i, int(self.vtype[i]), int(self.lane[i]), float(self.s[i]), float(self.speed[i]),
                    _heading(int(self.axis[i]), int(self.direction[i])))
            for i in range(len(self))
        ]

    def positions(self, layout: RoadLayout) -> tuple[np.ndarray, np.ndarray]:
        lateral = np.array([ln.lateral_m for ln in layout.lanes])[self.lane]
        along_x = self.axis == 0
        x = np.where(along_x, self.s, lateral)
        y = np.where(along_x, lateral, self.s)
        return x, y

    def velocities(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.speed * self.direction
        return np.where(self.axis == 0, v, 0.0), np.where(self.axis == 1, v, 0.0)


def advance_mobility(fleet: Fleet, layout: RoadLayout, dt: float, rng: np.random.Generator) -> Fleet:
    """Return a new fleet advanced by ``dt`` seconds at fixed lane speeds."""
    out = fleet.copy()
    step = out.speed * dt
    s_old = out.s
    s_new = s_old + out.direction * step
    out.odometer += step
    if layout.kind == "urban_grid" and layout.option == "A":
        _turn_at_intersections(out, layout, s_old, s_new, rng)
    else:
        out.s = s_new
    rings = np.where(out.axis == 0, layout.extent[0], layout.extent[1])
    out.s = np.mod(out.s, rings)
    return out


def _turn_at_intersections(fleet: Fleet, layout: RoadLayout, s_old: np.ndarray, s_new: np.ndarray,
                           rng: np.random.Generator) -> None:
    block = np.where(fleet.axis == 0, layout.block_x_m, layout.block_y_m)
    forward = fleet.direction > 0
    k_old = np.where(forward, np.floor(s_old / block), np.ceil(s_old / block))
    k_new = np.where(forward, np.floor(s_new / block), np.ceil(s_new / block))
    crossed = np.flatnonzero(k_old != k_new)
    fleet.s = s_new
    if crossed.size == 0:
        return
    choice = rng.choice(3, size=crossed.size, p=TURN_PROBS)
    n_x, n_y = layout.blocks_x, layout.blocks_y
    for idx, c in zip(crossed, choice):
        if c == 0:
            continue
        axis, d = int(fleet.axis[idx]), int(fleet.direction[idx])
        k = int(k_new[idx])
        cross_point = k * block[idx]
        overshoot = abs(s_new[idx] - cross_point)
        hx, hy = (d, 0) if axis == 0 else (0, d)
        nx, ny = (-hy, hx) if c == 1 else (hy, -hx)  # left or right quarter turn
        new_axis = 0 if nx != 0 else 1
        new_dir = nx if nx != 0 else ny
        # Crossing street index and our old street's coordinate become the new lane and position.
        new_street = k % (n_x if axis == 0 else n_y)
        entry = layout.street_coord(axis, int(fleet.street[idx]))
        lane = layout.lane_index(new_axis, new_street, new_dir, int(fleet.slot[idx]))
        fleet.lane[idx] = lane
        fleet.axis[idx] = new_axis
        fleet.street[idx] = new_street
        fleet.direction[idx] = new_dir
        fleet.speed[idx] = layout.lanes[lane].speed_mps
        fleet.s[idx] = entry + new_dir * overshoot


def min_image(delta: np.ndarray, period: float) -> np.ndarray:
    if period <= 0:
        return delta
    return delta - period * np.round(delta / period)


def displacement(layout: RoadLayout, x0, y0, x1, y1) -> tuple[np.ndarray, np.ndarray]:
    """Vector from point 0 to point 1 under the layout's wrap-around."""
    ex, ey = layout.extent
    return min_image(np.asarray(x1) - x0, ex), min_image(np.asarray(y1) - y0, ey)


def street_membership(layout: RoadLayout, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the x-running and y-running street containing each point, or -1."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if layout.kind == "highway":
        return np.zeros(x.shape, dtype=int), np.full(x.shape, -1)
    h = layout.half_road_m
    jy = np.round(y / layout.block_y_m)
    on_h = np.abs(min_image(y - jy * layout.block_y_m, layout.extent[1])) <= h
    ix = np.round(x / layout.block_x_m)
    on_v = np.abs(min_image(x - ix * layout.block_x_m, layout.extent[0])) <= h
    hs = np.where(on_h, np.mod(jy, layout.blocks_y), -1).astype(int)
    vs = np.where(on_v, np.mod(ix, layout.blocks_x), -1).astype(int)
    return hs, vs


def same_street(layout: RoadLayout, x0, y0, x1, y1) -> np.ndarray:
    h0, v0 = street_membership(layout, x0, y0)
    h1, v1 = street_membership(layout, x1, y1)
    return ((h0 >= 0) & (h0 == h1)) | ((v0 >= 0) & (v0 == v1))
