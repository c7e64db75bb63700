"""Synthetic traffic worlds: dense ground-truth speed fields and probe traces."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import ndtr

from . import container
from .records import ProbeRecords, vehicle_name
from .roadmap import GraphMap, GridMap, RoadMap, bearing

V_MAX = 120.0
NOISE_POLE = 0.9


@dataclass(frozen=True)
class DiurnalProfile:
    """Morning and evening dips, as step indices from the start of the day."""

    a_am: float = 0.4
    a_pm: float = 0.4
    t_am: float = 60.0
    t_pm: float = 630.0
    width: float = 60.0
    floor: float = 0.1

    @classmethod
    def from_clock(cls, start: str = "07:30", step_minutes: float = 1.0,
                   am: str = "08:30", pm: str = "18:00", **kw) -> "DiurnalProfile":
        def minutes(hhmm):
            h, m = hhmm.split(":")
            return int(h) * 60 + int(m)

        t0 = minutes(start)
        return cls(t_am=(minutes(am) - t0) / step_minutes, t_pm=(minutes(pm) - t0) / step_minutes, **kw)


def _bump(t, centre, width):
    return np.exp(-0.5 * ((t - centre) / width) ** 2)


def diurnal_factor(t, profile: DiurnalProfile = DiurnalProfile()):
    """Speed multiplier in (0, 1] for step ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=np.float64)
    f = 1.0 - profile.a_am * _bump(t, profile.t_am, profile.width) - profile.a_pm * _bump(t, profile.t_pm, profile.width)
    f = np.maximum(f, profile.floor)
    return float(f) if f.ndim == 0 else f


@dataclass(frozen=True)
class CongestionEvent:
    """A jam that ramps up linearly, peaks at ``onset + rise``, then clears linearly."""

    epicenter: int
    onset: int
    rise: int
    decay: int
    peak_drop: float
    radius: int = 4

    def __post_init__(self):
        if self.peak_drop < 0:
            raise ValueError("peak_drop must be >= 0")
        if self.rise < 1 or self.decay < 1:
            raise ValueError("rise and decay durations must be >= 1 step")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")

    @property
    def peak(self) -> int:
        return self.onset + self.rise

    def intensity(self, t):
        """Speed drop at the epicentre for step(s) ``t``."""
        t = np.asarray(t, dtype=np.float64)
        up = (t - self.onset) / self.rise
        down = 1.0 - (t - self.peak) / self.decay
        shape = np.where(t <= self.peak, up, down)
        return self.peak_drop * np.clip(shape, 0.0, 1.0)


@dataclass
class SpeedField:
    """Dense speeds (km/h), ``values[t, r]`` for T steps and R regions."""

    map: RoadMap
    values: np.ndarray
    step_minutes: float = 1.0

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def R(self) -> int:
        return self.values.shape[1]


def free_flow_speeds(road_map: RoadMap, seed, lo: float = 40.0, hi: float = 90.0, smoothing: int = 8) -> np.ndarray:
    """Per-region free-flow speed, marginally Uniform(lo, hi), spatially correlated.

    A white Gaussian field is smoothed by ``smoothing`` rounds of neighbour
    averaging, rescaled to exactly unit variance per region and pushed
    through the normal CDF.
    """
    rng = np.random.default_rng(seed)
    a = road_map.adjacency() + sp.identity(road_map.R, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    step = sp.diags(1.0 / deg) @ a
    op = sp.identity(road_map.R, format="csr")
    for _ in range(smoothing):
        op = (step @ op).tocsr()
    z = op @ rng.standard_normal(road_map.R)
    scale = np.sqrt(np.asarray(op.multiply(op).sum(axis=1)).ravel())
    return lo + (hi - lo) * ndtr(z / scale)


def random_events(road_map: RoadMap, T: int, n_events: int, seed,
                  rise=(5, 20), decay=(20, 60), drop=(20.0, 40.0), radius: int = 4) -> list[CongestionEvent]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_events):
        out.append(CongestionEvent(
            epicenter=int(rng.integers(road_map.R)),
            onset=int(rng.integers(T)),
            rise=int(rng.integers(rise[0], rise[1] + 1)),
            decay=int(rng.integers(decay[0], decay[1] + 1)),
            peak_drop=float(rng.uniform(*drop)),
            radius=radius,
        ))
    return out


def event_drop(road_map: RoadMap, T: int, events, rho: float = 0.5) -> np.ndarray:
    """Total congestion speed drop, (T, R)."""
    total = np.zeros((T, road_map.R))
    t = np.arange(T)
    for ev in events:
        if not 0 <= ev.epicenter < road_map.R:
            raise ValueError(f"event epicenter {ev.epicenter} outside [0, {road_map.R})")
        hops = road_map.hop_distances(ev.epicenter)
        spatial = np.where(hops <= ev.radius, rho ** np.minimum(hops, ev.radius), 0.0)
        total += np.outer(ev.intensity(t), spatial)
    return total


def gen_ideal_field(road_map: RoadMap, T: int, events=(), noise_sigma: float = 2.0, seed=0, *,
                    profile: DiurnalProfile = DiurnalProfile(), rho: float = 0.5,
                    v_max: float = V_MAX, v_free: np.ndarray | None = None,
                    step_minutes: float = 1.0) -> SpeedField:
    """Ground-truth speeds: free flow x diurnal factor - congestion + AR(1) noise, clamped.

    ``v_free`` defaults to :func:`free_flow_speeds` drawn from ``seed``; pass
    it explicitly to keep one baseline across several days. Values are
    stored as float32.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    if v_free is None:
        v_free = free_flow_speeds(road_map, rng)
    v_free = np.asarray(v_free, dtype=np.float64)
    if v_free.shape != (road_map.R,):
        raise ValueError(f"v_free has shape {v_free.shape}, expected ({road_map.R},)")
    base = np.outer(diurnal_factor(np.arange(T), profile), v_free)
    base -= event_drop(road_map, T, events, rho)
    if noise_sigma > 0:
        innov = np.sqrt(1.0 - NOISE_POLE ** 2) * noise_sigma
        eta = noise_sigma * rng.standard_normal(road_map.R)
        xi = rng.standard_normal((T, road_map.R))
        for t in range(T):
            if t:
                eta = NOISE_POLE * eta + innov * xi[t]
            base[t] += eta
    values = np.clip(base, 0.0, v_max).astype(np.float32)
    return SpeedField(road_map, values, step_minutes)


def _fold(pos, length):
    """Reflect positions into [0, length); returns (pos, flipped-parity)."""
    k = np.floor(pos / length)
    y = pos - k * length
    odd = (k.astype(np.int64) % 2) == 1
    y = np.where(odd, length - y, y)
    y = np.clip(y, 0.0, np.nextafter(length, 0.0))
    return y, odd


def simulate_probes(road_map: RoadMap, field: SpeedField, n_vehicles: int, obs_sigma: float = 8.0,
                    seed=0, heading_jitter: float = 20.0) -> ProbeRecords:
    """Random-walk probe fleet; one record per vehicle per step, time-major order.

    Grid vehicles travel straight at the local speed, bounce off the map
    edge and wobble their heading by ``heading_jitter`` degrees (std) per
    step. Graph vehicles follow their segment and turn at random at each
    intersection (never straight back).
    """
    if n_vehicles < 0:
        raise ValueError("n_vehicles must be >= 0")
    if field.R != road_map.R:
        raise ValueError(f"field has {field.R} regions, map has {road_map.R}")
    T, n = field.T, int(n_vehicles)
    if n == 0:
        return ProbeRecords.empty()
    rng = np.random.default_rng(seed)
    dt_h = field.step_minutes / 60.0
    xs = np.empty((T, n))
    ys = np.empty((T, n))
    hs = np.empty((T, n))
    vs = np.empty((T, n))

    if isinstance(road_map, GridMap):
        wk, hk = road_map.width_km, road_map.height_km
        x = rng.uniform(0, wk, n)
        y = rng.uniform(0, hk, n)
        hd = rng.uniform(0, 360, n)
        for t in range(T):
            v = field.values[t, road_map.region_of(x, y)].astype(np.float64)
            xs[t], ys[t], hs[t] = x, y, hd
            vs[t] = np.maximum(0.0, v + obs_sigma * rng.standard_normal(n))
            d = v * dt_h
            rad = np.radians(hd)
            x, fx = _fold(x + d * np.sin(rad), wk)
            y, fy = _fold(y + d * np.cos(rad), hk)
            hd = np.where(fx, 360.0 - hd, hd)
            hd = np.where(fy, 180.0 - hd, hd)
            hd = np.mod(hd + heading_jitter * rng.standard_normal(n), 360.0)
            hd = np.where(hd >= 360.0, 0.0, hd)
    elif isinstance(road_map, GraphMap):
        lengths = road_map.lengths
        seg_nodes = road_map.seg_nodes
        incident = road_map.incident
        seg = rng.integers(road_map.R, size=n)
        fwd = rng.random(n) < 0.5
        off = rng.random(n) * lengths[seg]
        for t in range(T):
            a = np.where(fwd[:, None], road_map.starts[seg], road_map.ends[seg])
            b = np.where(fwd[:, None], road_map.ends[seg], road_map.starts[seg])
            frac = (off / lengths[seg])[:, None]
            p = a + (b - a) * frac
            v = field.values[t, seg].astype(np.float64)
            xs[t], ys[t] = p[:, 0], p[:, 1]
            hs[t] = np.where(fwd, road_map.bearings[seg], np.mod(road_map.bearings[seg] + 180.0, 360.0))
            vs[t] = np.maximum(0.0, v + obs_sigma * rng.standard_normal(n))
            rem = v * dt_h
            while True:
                left = lengths[seg] - off
                go = rem >= left
                if not go.any():
                    break
                idx = np.flatnonzero(go)
                rem[idx] -= left[idx]
                node = np.where(fwd[idx], seg_nodes[seg[idx], 1], seg_nodes[seg[idx], 0])
                cand = incident[node]
                ok = (cand >= 0) & (cand != seg[idx][:, None])
                pick = np.floor(rng.random(len(idx)) * ok.sum(axis=1)).astype(np.int64)
                # position of the pick-th valid candidate in each row
                col = np.argmax(np.cumsum(ok, axis=1) > pick[:, None], axis=1)
                new = cand[np.arange(len(idx)), col]
                seg[idx] = new
                fwd[idx] = seg_nodes[new, 0] == node
                off[idx] = 0.0
            off = off + rem
    else:
        raise TypeError(f"unsupported map type {type(road_map).__name__}")

    names = vehicle_name(np.arange(n))
    return ProbeRecords(
        np.tile(names, T), np.repeat(np.arange(T), n),
        xs.ravel(), ys.ravel(), hs.ravel(), vs.ravel(),
    )


__all__ = [
    "CongestionEvent",
    "DiurnalProfile",
    "SpeedField",
    "V_MAX",
    "bearing",
    "diurnal_factor",
    "event_drop",
    "free_flow_speeds",
    "gen_ideal_field",
    "random_events",
    "read_field",
    "simulate_probes",
    "write_field",
]


def write_field(path, field: SpeedField) -> None:
    header = {"kind": "field", "T": field.T, "R": field.R,
              "step_minutes": field.step_minutes, "map_digest": field.map.digest}
    container.write_atomic(path, container.pack(header, container.f32_bytes(field.values)))


def read_field(path, road_map: RoadMap) -> SpeedField:
    header, payload = container.unpack(Path(path).read_bytes())
    if header.get("kind") != "field":
        raise container.FormatError(f"{path}: expected kind 'field', found {header.get('kind')!r}")
    if header.get("map_digest") != road_map.digest:
        raise container.FormatError(f"{path}: field was generated for a different map")
    (values,) = container.f32_planes(payload, 1, (header["T"], header["R"]))
    return SpeedField(road_map, values, float(header["step_minutes"]))
