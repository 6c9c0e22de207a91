"""Onboard scene reconstruction: GPS-to-pixel mapping and render emission.

Two surveyed reference points anchor an affine map from geodetic positions
to screen pixels (equirectangular meters about the first reference, then a
per-axis pixel ratio). Received perception messages become top-view icons;
the ego vehicle is drawn from its own simulated GPS feed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .geoloc import GeodeticPos, WGS84
from .wire import PerceptionMessage

EGO_SUPPRESS_RADIUS = 2.0  # m, roadside echo of the ego vehicle is dropped
PEDESTRIAN_MAX_FOOTPRINT = 1.2  # m
PEDESTRIAN_MAX_HEIGHT = 2.2  # m
EGO_ICON_DIMS = (1.9, 4.6)  # (w, l) m


class DegenerateMapError(ValueError):
    """Reference points coincide on some axis; no transfer ratio exists."""


class IconKind(enum.Enum):
    EGO = "ego"
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"


@dataclass
class PixelMap:
    ref_a_gps: GeodeticPos
    ref_b_gps: GeodeticPos
    ref_a_px: tuple[float, float]
    ref_b_px: tuple[float, float]
    meters_per_pixel_x: float
    meters_per_pixel_y: float
    viewport: tuple[float, float] | None = None  # (width, height) px


@dataclass
class EgoState:
    gps: GeodeticPos
    heading: float  # degrees, [0, 360)
    t: float

    def __post_init__(self):
        if not 0.0 <= self.heading < 360.0:
            raise ValueError(f"heading {self.heading} outside [0, 360)")


@dataclass
class RenderIcon:
    kind: IconKind
    px: tuple[float, float]
    heading_deg: float
    dims_m: tuple[float, float]  # (w, l)
    id: int | None = None


@dataclass
class RenderFrame:
    t: float
    icons: list[RenderIcon] = field(default_factory=list)
    size: tuple[float, float] = (800.0, 800.0)

    def __post_init__(self):
        if sum(1 for i in self.icons if i.kind is IconKind.EGO) > 1:
            raise ValueError("at most one ego icon per frame")


def local_en_offset(origin: GeodeticPos, g: GeodeticPos, radius: float = WGS84.R) -> tuple[float, float]:
    """East/north meters of g relative to origin, equirectangular about origin."""
    d_east = radius * math.cos(math.radians(origin.lat)) * math.radians(g.lon - origin.lon)
    d_north = radius * math.radians(g.lat - origin.lat)
    return d_east, d_north


def offset_geodetic(origin: GeodeticPos, east: float, north: float) -> GeodeticPos:
    """Inverse of local_en_offset for small offsets."""
    lat = origin.lat + math.degrees(north / WGS84.R)
    lon = origin.lon + math.degrees(east / (WGS84.R * math.cos(math.radians(origin.lat))))
    return GeodeticPos(lat=lat, lon=lon, alt=origin.alt)


def build_pixel_map(
    ref_a_gps: GeodeticPos,
    ref_a_px: tuple[float, float],
    ref_b_gps: GeodeticPos,
    ref_b_px: tuple[float, float],
    viewport: tuple[float, float] | None = None,
) -> PixelMap:
    """Derive the per-axis transfer ratios from two cross-referenced points."""
    if ref_a_gps.lat == ref_b_gps.lat or ref_a_gps.lon == ref_b_gps.lon:
        raise DegenerateMapError("reference points must differ in latitude and longitude")
    du = ref_b_px[0] - ref_a_px[0]
    dv = ref_b_px[1] - ref_a_px[1]
    if du == 0 or dv == 0:
        raise DegenerateMapError("reference pixels must differ on both axes")
    d_east, d_north = local_en_offset(ref_a_gps, ref_b_gps)
    return PixelMap(
        ref_a_gps=ref_a_gps,
        ref_b_gps=ref_b_gps,
        ref_a_px=tuple(ref_a_px),
        ref_b_px=tuple(ref_b_px),
        meters_per_pixel_x=d_east / du,
        meters_per_pixel_y=d_north / dv,
        viewport=viewport,
    )


def gps_to_pixel(pixel_map: PixelMap, g: GeodeticPos) -> tuple[float, float]:
    """Affine application of the transfer ratios about reference point A."""
    d_east, d_north = local_en_offset(pixel_map.ref_a_gps, g)
    u = pixel_map.ref_a_px[0] + d_east / pixel_map.meters_per_pixel_x
    v = pixel_map.ref_a_px[1] + d_north / pixel_map.meters_per_pixel_y
    return u, v


def classify_by_size(w: float, l: float, h: float) -> IconKind:
    """Pedestrian iff the footprint stays under 1.2 m and height under 2.2 m."""
    if not (w > 0 and l > 0 and h > 0):
        raise ValueError("dims must be positive")
    if max(w, l) < PEDESTRIAN_MAX_FOOTPRINT and h < PEDESTRIAN_MAX_HEIGHT:
        return IconKind.PEDESTRIAN
    return IconKind.VEHICLE


def _in_viewport(px: tuple[float, float], viewport: tuple[float, float] | None) -> bool:
    if viewport is None:
        return True
    return 0.0 <= px[0] <= viewport[0] and 0.0 <= px[1] <= viewport[1]


def reconstruct_frame(
    msgs: list[PerceptionMessage], ego: EgoState, pixel_map: PixelMap
) -> RenderFrame:
    """Build the icon list for one render tick.

    Messages within the ego-suppression radius are treated as the roadside's
    echo of the ego vehicle; icons landing outside the viewport are dropped.
    """
    icons = [
        RenderIcon(
            kind=IconKind.EGO,
            px=gps_to_pixel(pixel_map, ego.gps),
            heading_deg=ego.heading,
            dims_m=EGO_ICON_DIMS,
        )
    ]
    for m in msgs:
        pos = GeodeticPos(lat=m.lat, lon=m.lon, alt=m.alt)
        de, dn = local_en_offset(ego.gps, pos)
        if math.hypot(de, dn) <= EGO_SUPPRESS_RADIUS:
            continue
        px = gps_to_pixel(pixel_map, pos)
        if not _in_viewport(px, pixel_map.viewport):
            continue
        icons.append(
            RenderIcon(
                kind=classify_by_size(m.w, m.l, m.h),
                px=px,
                heading_deg=m.theta,
                dims_m=(m.w, m.l),
                id=m.id,
            )
        )
    size = pixel_map.viewport if pixel_map.viewport is not None else (800.0, 800.0)
    return RenderFrame(t=msgs[0].t if msgs else ego.t, icons=icons, size=size)


# ---------------------------------------------------------------------------
# Render emission: deterministic SVG, one shape element per icon.
# ---------------------------------------------------------------------------

_ICON_FILL = {
    IconKind.EGO: "#e8821e",
    IconKind.VEHICLE: "#2e6fd8",
    IconKind.PEDESTRIAN: "#3aa655",
}


def _rect_corners(px, heading_deg, dims_m, px_per_m) -> list[tuple[float, float]]:
    w, l = dims_m
    half_w = w / 2.0 * px_per_m
    half_l = l / 2.0 * px_per_m
    # Screen heading: 0 deg points up (north), clockwise positive.
    a = math.radians(heading_deg)
    fx, fy = math.sin(a), -math.cos(a)  # forward in pixel axes (v grows down)
    rx, ry = -fy, fx
    u, v = px
    return [
        (u + fx * half_l + rx * half_w, v + fy * half_l + ry * half_w),
        (u + fx * half_l - rx * half_w, v + fy * half_l - ry * half_w),
        (u - fx * half_l - rx * half_w, v - fy * half_l - ry * half_w),
        (u - fx * half_l + rx * half_w, v - fy * half_l + ry * half_w),
    ]


def render_svg(frame: RenderFrame) -> str:
    """Vector document for one frame; byte-stable for identical frames."""
    w, h = frame.size
    px_per_m = 8.0
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
        f'viewBox="0 0 {w:.0f} {h:.0f}">',
        f'<rect x="0" y="0" width="{w:.0f}" height="{h:.0f}" fill="#1b1f23"/>',
    ]
    for icon in frame.icons:
        fill = _ICON_FILL[icon.kind]
        if icon.kind is IconKind.PEDESTRIAN:
            r = max(icon.dims_m[0], icon.dims_m[1]) / 2.0 * px_per_m
            lines.append(
                f'<circle cx="{icon.px[0]:.2f}" cy="{icon.px[1]:.2f}" r="{r:.2f}" '
                f'fill="{fill}"/>'
            )
        else:
            pts = " ".join(
                f"{x:.2f},{y:.2f}"
                for x, y in _rect_corners(icon.px, icon.heading_deg, icon.dims_m, px_per_m)
            )
            lines.append(f'<polygon points="{pts}" fill="{fill}"/>')
        if icon.id is not None and icon.id >= 0:
            lines.append(
                f'<text x="{icon.px[0]:.2f}" y="{icon.px[1] - 8.0:.2f}" '
                f'fill="#e6e6e6" font-size="11" text-anchor="middle">{icon.id}</text>'
            )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def emit_render(frame: RenderFrame, path) -> None:
    """Write the frame's vector document; identical frames give identical bytes."""
    with open(path, "wb") as f:
        f.write(render_svg(frame).encode("utf-8"))


class EgoSimulator:
    """Seeded GPS feed for the ego vehicle, updated at a fixed rate.

    Each update advances along the constant heading and adds seeded Gaussian
    position noise; queries between updates return the latest value.
    """

    def __init__(
        self,
        start: GeodeticPos,
        heading: float = 0.0,
        speed: float = 0.0,
        rate_hz: float = 8.0,
        noise_std: float = 0.0,
        seed: int = 0,
    ):
        if rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        self.start = start
        self.heading = heading % 360.0
        self.speed = speed
        self.rate_hz = rate_hz
        self.noise_std = noise_std
        self.seed = seed

    def state_at(self, t: float) -> EgoState:
        tick = max(0, math.floor(t * self.rate_hz))
        t_update = tick / self.rate_hz
        a = math.radians(self.heading)
        east = self.speed * t_update * math.sin(a)
        north = self.speed * t_update * math.cos(a)
        if self.noise_std > 0:
            rng = np.random.default_rng([self.seed & 0xFFFFFFFF, 0xE60, tick])
            east += rng.normal(0.0, self.noise_std)
            north += rng.normal(0.0, self.noise_std)
        return EgoState(
            gps=offset_geodetic(self.start, east, north),
            heading=self.heading,
            t=t_update,
        )
