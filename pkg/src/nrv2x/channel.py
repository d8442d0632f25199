"""Large-scale V2V channel: link state, pathloss, vehicle blockage, shadowing, Doppler.

Distances are in metres, carrier frequency in GHz, losses in dB.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .scenario import Fleet, RoadLayout, displacement, same_street

SPEED_OF_LIGHT = 299_792_458.0


class LinkState(IntEnum):
    LOS = 0
    NLOSV = 1
    NLOS = 2


SHADOW_SIGMA_DB = {LinkState.LOS: 3.0, LinkState.NLOSV: 3.0, LinkState.NLOS: 4.0}

# Vehicle blockage loss (mean dB at short range, sigma dB).  Both antennas
# below the blocker is the harsher case; one below is the milder one.
# The mean grows by max(0, 15 log10(d) - 41) with distance.
BLOCKAGE_BOTH_BELOW = (9.0, 4.5)
BLOCKAGE_ONE_BELOW = (5.0, 4.0)


def los_probability(d, scenario: str):
    d = np.asarray(d, dtype=float)
    if scenario == "highway":
        near = np.minimum(1.0, 2.1013e-6 * d**2 - 0.002 * d + 1.01093)
        far = np.maximum(0.0, 0.54 - 0.001 * (d - 475.0))
        p = np.where(d <= 475.0, near, far)
    elif scenario == "urban_grid":
        p = np.minimum(1.0, 1.05 * np.exp(-0.0114 * d))
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    p = np.clip(p, 0.0, 1.0)
    return float(p) if p.ndim == 0 else p


def sample_link_states(d: np.ndarray, same: np.ndarray, scenario: str, rng: np.random.Generator) -> np.ndarray:
    """Vectorised state draw: cross-street urban pairs are NLOS, others LOS or NLOSv."""
    d = np.asarray(d, dtype=float)
    u = rng.random(d.shape)
    state = np.where(u < los_probability(d, scenario), LinkState.LOS, LinkState.NLOSV)
    if scenario == "urban_grid":
        state = np.where(np.asarray(same, dtype=bool), state, LinkState.NLOS)
    return state.astype(np.int8)


def sample_link_state(tx: int, rx: int, fleet: Fleet, layout: RoadLayout, rng: np.random.Generator) -> LinkState:
    x, y = fleet.positions(layout)
    dx, dy = displacement(layout, x[tx], y[tx], x[rx], y[rx])
    d = float(np.hypot(dx, dy))
    same = bool(same_street(layout, x[tx], y[tx], x[rx], y[rx]))
    return LinkState(int(sample_link_states(np.array([d]), np.array([same]), layout.kind, rng)[0]))


def pathloss_db(state, d3d, fc_ghz: float, scenario: str):
    """Distance-law pathloss; ``state`` and ``d3d`` may be arrays."""
    d = np.asarray(d3d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("pathloss needs a positive distance")
    if scenario not in ("highway", "urban_grid"):
        raise ValueError(f"unknown scenario {scenario!r}")
    state = np.asarray(state)
    log_d, log_f = np.log10(d), math.log10(fc_ghz)
    if scenario == "highway":
        clear = 32.4 + 20.0 * log_d + 20.0 * log_f
    else:
        clear = 38.77 + 16.7 * log_d + 18.2 * log_f
    nlos = 36.85 + 30.0 * log_d + 18.9 * log_f
    pl = np.where(state == LinkState.NLOS, nlos, clear)
    return float(pl) if pl.ndim == 0 else pl


def blockage_params(tx_h, rx_h, blocker_h, d):
    """(mean, sigma) arrays of the blockage normal; sigma 0 means no loss."""
    tx_h, rx_h, blocker_h, d = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (tx_h, rx_h, blocker_h, d)))
    extra = np.maximum(0.0, 15.0 * np.log10(np.maximum(d, 1e-9)) - 41.0)
    clear = np.minimum(tx_h, rx_h) > blocker_h
    both = np.maximum(tx_h, rx_h) < blocker_h
    mean = np.where(clear, 0.0, np.where(both, BLOCKAGE_BOTH_BELOW[0], BLOCKAGE_ONE_BELOW[0]) + extra)
    sigma = np.where(clear, 0.0, np.where(both, BLOCKAGE_BOTH_BELOW[1], BLOCKAGE_ONE_BELOW[1]))
    return mean, sigma


def blockage_loss_db(tx_h, rx_h, blocker_h, d, rng: np.random.Generator):
    mean, sigma = blockage_params(tx_h, rx_h, blocker_h, d)
    loss = np.where(sigma > 0, mean + sigma * rng.standard_normal(mean.shape), 0.0)
    return float(loss) if loss.ndim == 0 else loss


class ShadowHistory:
    """Unit-variance AR(1) process per ordered link, advanced by travelled distance.

    The stored value is dimensionless; the caller scales it by the sigma of
    the current link state, so one process survives state changes.
    """

    def __init__(self, decorrelation_m: float) -> None:
        if decorrelation_m <= 0:
            raise ValueError("decorrelation distance must be positive")
        self.decorrelation_m = decorrelation_m
        self._z: dict[tuple[int, int], float] = {}

    def step(self, link: tuple[int, int], displacement_m: float, rng: np.random.Generator) -> float:
        z = self._z.get(link)
        if z is None:
            z = float(rng.standard_normal())
        elif displacement_m > 0:
            rho = math.exp(-displacement_m / self.decorrelation_m)
            z = rho * z + math.sqrt(1.0 - rho * rho) * float(rng.standard_normal())
        self._z[link] = z
        return z


def shadow_fading_db(history: ShadowHistory, link: tuple[int, int], displacement_m: float,
                     state: LinkState, rng: np.random.Generator) -> float:
    return SHADOW_SIGMA_DB[LinkState(state)] * history.step(link, displacement_m, rng)


@dataclass(frozen=True)
class LinkRealization:
    state: LinkState
    pathloss_db: float
    blockage_db: float
    shadow_db: float
    distance_m: float
    fading_margin_db: float = 0.0

    @property
    def total_loss_db(self) -> float:
        return self.pathloss_db + self.blockage_db + self.shadow_db + self.fading_margin_db


# Doppler ---------------------------------------------------------------------

def unit_vector(azimuth: float, elevation: float) -> np.ndarray:
    return np.array([
        math.sin(elevation) * math.cos(azimuth),
        math.sin(elevation) * math.sin(azimuth),
        math.cos(elevation),
    ])


@dataclass(frozen=True)
class DopplerGeometry:
    tx_speed: float
    tx_azimuth: float
    rx_speed: float
    rx_azimuth: float
    aoa: float
    zoa: float
    aod: float
    zod: float
    wavelength_m: float
    tx_elevation: float = math.pi / 2
    rx_elevation: float = math.pi / 2
    alpha: float = 0.0  # fraction of the ray's scattering that moves
    scatterer_speed: float = 0.0  # D, drawn from [-v_scatt, v_scatt]

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def doppler_hz(geom: DopplerGeometry, path: str = "los") -> float:
    v_tx = geom.tx_speed * unit_vector(geom.tx_azimuth, geom.tx_elevation)
    v_rx = geom.rx_speed * unit_vector(geom.rx_azimuth, geom.rx_elevation)
    r_rx = unit_vector(geom.aoa, geom.zoa)
    r_tx = unit_vector(geom.aod, geom.zod)
    num = float(r_rx @ v_rx + r_tx @ v_tx)
    if path == "scattered":
        num += 2.0 * geom.alpha * geom.scatterer_speed
    elif path != "los":
        raise ValueError(f"unknown path kind {path!r}")
    return num / geom.wavelength_m


def wavelength_m(fc_ghz: float) -> float:
    return SPEED_OF_LIGHT / (fc_ghz * 1e9)


# Engine-side bank of per-link state ------------------------------------------

@dataclass(frozen=True)
class ChannelParams:
    scenario: str
    carrier_ghz: float
    blocker_mode: str = "probabilistic"  # or "geometric"
    default_blocker_height_m: float = 1.6
    decorrelation_m: float = 25.0
    fading_margin_db: float = 0.0
    min_distance_m: float = 1.0


def segment_hits_boxes(x0, y0, x1, y1, cx, cy, hx, hy) -> np.ndarray:
    """Does segment (x0,y0)->(x1,y1) cross axis-aligned boxes centred (cx,cy), half sizes (hx,hy)?

    Segments broadcast along axis 0, boxes along axis 1 (slab test).
    """
    dx = (x1 - x0)[:, None]
    dy = (y1 - y0)[:, None]
    t_lo = np.zeros(np.broadcast_shapes(dx.shape, np.shape(cx)))
    t_hi = np.ones_like(t_lo)
    for d, p0, c, h in ((dx, x0[:, None], cx, hx), (dy, y0[:, None], cy, hy)):
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (c - h - p0) / d
            tb = (c + h - p0) / d
        parallel = d == 0
        inside = (p0 >= c - h) & (p0 <= c + h)
        lo = np.where(parallel, np.where(inside, 0.0, np.inf), np.minimum(ta, tb))
        hi = np.where(parallel, np.where(inside, 1.0, -np.inf), np.maximum(ta, tb))
        t_lo = np.maximum(t_lo, lo)
        t_hi = np.minimum(t_hi, hi)
    return t_lo <= t_hi


class LinkBank:
    """Holds per ordered pair the held link state, blockage draw and shadow process."""

    def __init__(self, n: int, params: ChannelParams) -> None:
        self.n = n
        self.params = params
        self.bin = np.full((n, n), -1, dtype=np.int64)
        self.state = np.zeros((n, n), dtype=np.int8)
        self.blockage = np.zeros((n, n))
        self.z = np.zeros((n, n))
        self.z_ref = np.full((n, n), np.nan)  # odometer sum at last shadow update

    def _blocker_heights(self, tx: int, rx: np.ndarray, fleet: Fleet, layout: RoadLayout,
                         x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Tallest third vehicle crossing each TX-RX segment (0 where none)."""
        if rx.size == 0:
            return np.zeros(0)
        # Work in coordinates relative to the TX so that wrap-around is handled once.
        rdx, rdy = displacement(layout, x[tx], y[tx], x[rx], y[rx])
        vdx, vdy = displacement(layout, x[tx], y[tx], x, y)
        along_x = fleet.axis == 0
        hx = np.where(along_x, fleet.length, fleet.width) / 2
        hy = np.where(along_x, fleet.width, fleet.length) / 2
        zeros = np.zeros(rx.size)
        hits = segment_hits_boxes(zeros, zeros, rdx, rdy, vdx[None, :], vdy[None, :], hx[None, :], hy[None, :])
        hits[:, tx] = False
        hits[np.arange(rx.size), rx] = False
        return np.where(hits, fleet.height[None, :], 0.0).max(axis=1)

    def realize_row(self, tx: int, fleet: Fleet, layout: RoadLayout, rng: np.random.Generator,
                    x: Optional[np.ndarray] = None, y: Optional[np.ndarray] = None):
        """Total loss (dB) from ``tx`` to every UE plus the components, as arrays of length n.

        The entry for ``tx`` itself is +inf.
        """
        p = self.params
        if x is None or y is None:
            x, y = fleet.positions(layout)
        dx, dy = displacement(layout, x[tx], y[tx], x, y)
        d2 = np.hypot(dx, dy)
        dz = fleet.antenna - fleet.antenna[tx]
        d3 = np.maximum(np.sqrt(d2**2 + dz**2), p.min_distance_m)
        others = np.ones(self.n, dtype=bool)
        others[tx] = False
        new_bin = np.floor(d2).astype(np.int64)
        changed = np.flatnonzero(others & (new_bin != self.bin[tx]))
        if changed.size:
            self.bin[tx, changed] = new_bin[changed]
            if p.blocker_mode == "geometric":
                blocker = self._blocker_heights(tx, changed, fleet, layout, x, y)
                st = np.where(blocker > 0, LinkState.NLOSV, LinkState.LOS).astype(np.int8)
                if layout.kind == "urban_grid":
                    same = same_street(layout, x[tx], y[tx], x[changed], y[changed])
                    st = np.where(same, st, LinkState.NLOS).astype(np.int8)
            else:
                same = same_street(layout, x[tx], y[tx], x[changed], y[changed])
                st = sample_link_states(d2[changed], same, layout.kind, rng)
                blocker = np.zeros(changed.size)
                nv = np.flatnonzero(st == LinkState.NLOSV)
                if nv.size:
                    found = self._blocker_heights(tx, changed[nv], fleet, layout, x, y)
                    blocker[nv] = np.where(found > 0, found, p.default_blocker_height_m)
            self.state[tx, changed] = st
            nv = st == LinkState.NLOSV
            draw = np.zeros(changed.size)
            if nv.any():
                draw[nv] = blockage_loss_db(fleet.antenna[tx], fleet.antenna[changed[nv]], blocker[nv],
                                            d3[changed[nv]], rng)
            self.blockage[tx, changed] = draw
        # Shadowing: advance every link of this row by the distance both ends travelled.
        odo = fleet.odometer[tx] + fleet.odometer
        ref = self.z_ref[tx]
        fresh = others & np.isnan(ref)
        moved = others & ~fresh & (odo > ref)
        noise = rng.standard_normal(self.n)
        z = self.z[tx]
        z[fresh] = noise[fresh]
        if moved.any():
            rho = np.exp(-(odo[moved] - ref[moved]) / p.decorrelation_m)
            z[moved] = rho * z[moved] + np.sqrt(1.0 - rho**2) * noise[moved]
        ref[others] = odo[others]
        state = self.state[tx]
        sigma = np.where(state == LinkState.NLOS, SHADOW_SIGMA_DB[LinkState.NLOS], SHADOW_SIGMA_DB[LinkState.LOS])
        shadow = sigma * z
        pl = pathloss_db(state, d3, p.carrier_ghz, layout.kind)
        blockage = np.where(state == LinkState.NLOSV, self.blockage[tx], 0.0)
        total = pl + blockage + shadow + p.fading_margin_db
        total[tx] = np.inf
        return total, state.copy(), d2, pl, blockage, shadow
