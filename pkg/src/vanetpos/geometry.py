"""Coordinate frames and range-based multilateration.

The local frame is a flat-earth equirectangular projection anchored at an
origin: x east-ish along the road (meters), y lateral, z up. Good to well
under a meter for the sub-kilometer road segments this toolkit targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateGeometry,
    EmptyInput,
    InsufficientAnchors,
    NoConvergence,
    PolarRegion,
)

EARTH_RADIUS_M = 6_371_000.0

# |latitude| limit for the equirectangular approximation
_MAX_LAT_DEG = 89.0

# Gauss-Newton controls
_GN_MAX_ITERS = 100
_GN_STEP_TOL = 1e-9

# anchors closer than this are treated as coincident / collinear / coplanar
_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class GlobalPosition:
    """Geographic position: latitude/longitude in degrees, altitude in meters."""

    latitude_deg: float
    longitude_deg: float
    altitude_m: float = 0.0

    def __post_init__(self) -> None:
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"latitude {self.latitude_deg} outside [-90, 90]")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError(f"longitude {self.longitude_deg} outside [-180, 180]")


@dataclass(frozen=True)
class LocalPoint:
    """Point in the road-aligned local frame, meters."""

    x_m: float
    y_m: float
    z_m: float = 0.0

    def __post_init__(self) -> None:
        for v in (self.x_m, self.y_m, self.z_m):
            if not math.isfinite(v):
                raise ValueError(f"non-finite local coordinate: {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_m, self.y_m, self.z_m], dtype=float)


@dataclass(frozen=True)
class AnchorRange:
    """A measured/estimated distance to a known anchor point."""

    anchor: LocalPoint
    range_m: float

    def __post_init__(self) -> None:
        if self.range_m < 0.0:
            raise ValueError(f"range_m must be >= 0, got {self.range_m}")


def _check_latitudes(*positions: GlobalPosition) -> None:
    for p in positions:
        if abs(p.latitude_deg) >= _MAX_LAT_DEG:
            raise PolarRegion(
                f"latitude {p.latitude_deg} too close to a pole for the "
                f"flat-earth frame (|lat| must be < {_MAX_LAT_DEG})"
            )


def to_local(g: GlobalPosition, origin: GlobalPosition) -> LocalPoint:
    """Project a global position into the local frame of `origin`.

    x grows with longitude (scaled by cos of the origin latitude), y with
    latitude, z with altitude. Exact inverse of :func:`to_global` for the
    same origin.
    """
    _check_latitudes(g, origin)
    dlat = math.radians(g.latitude_deg - origin.latitude_deg)
    dlon = math.radians(g.longitude_deg - origin.longitude_deg)
    x = EARTH_RADIUS_M * dlon * math.cos(math.radians(origin.latitude_deg))
    y = EARTH_RADIUS_M * dlat
    z = g.altitude_m - origin.altitude_m
    return LocalPoint(x, y, z)


def to_global(p: LocalPoint, origin: GlobalPosition) -> GlobalPosition:
    """Inverse of :func:`to_local` on the same origin."""
    _check_latitudes(origin)
    lat = origin.latitude_deg + math.degrees(p.y_m / EARTH_RADIUS_M)
    lon = origin.longitude_deg + math.degrees(
        p.x_m / (EARTH_RADIUS_M * math.cos(math.radians(origin.latitude_deg)))
    )
    alt = origin.altitude_m + p.z_m
    if abs(lat) >= _MAX_LAT_DEG:
        raise PolarRegion(
            f"resulting latitude {lat} too close to a pole for the flat-earth frame"
        )
    return GlobalPosition(lat, lon, alt)


def _anchor_matrix(ranges: Sequence[AnchorRange]) -> np.ndarray:
    return np.array([r.anchor.as_array() for r in ranges], dtype=float)


def _collinear(anchors: np.ndarray) -> bool:
    """True when all anchors lie on one line (always true for two)."""
    if len(anchors) <= 2:
        return True
    centered = anchors - anchors.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return bool(s[1] <= _GEOM_TOL * max(s[0], 1.0))


def _collinear_xy(anchors: np.ndarray) -> bool:
    """Collinearity of the anchors projected into the 2D solve plane."""
    return _collinear(
        np.column_stack([anchors[:, 0], anchors[:, 1], np.zeros(len(anchors))])
    )


def _coplanar(anchors: np.ndarray) -> bool:
    """True when all anchors lie in one plane (always true for three)."""
    if len(anchors) <= 3:
        return True
    centered = anchors - anchors.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    return bool(s[2] <= _GEOM_TOL * max(s[0], 1.0))


def _line_direction_xy(anchors: np.ndarray) -> np.ndarray:
    """Unit direction of the anchor line projected into the (x, y) plane."""
    centered = anchors[:, :2] - anchors[:, :2].mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    d = vt[0]
    return d / np.linalg.norm(d)


def _plane_normal(anchors: np.ndarray) -> np.ndarray:
    centered = anchors - anchors.mean(axis=0)
    _, _, vt = np.linalg.svd(centered)
    return vt[2]


def _reflect_across_line_2d(p: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Mirror a point across the anchor line, within the solve plane (x, y)."""
    base = anchors[:, :2].mean(axis=0)
    d = _line_direction_xy(anchors)
    rel = p[:2] - base
    along = rel.dot(d) * d
    mirrored = base + along - (rel - along)
    return np.array([mirrored[0], mirrored[1], p[2]])


def _reflect_across_plane(p: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    base = anchors.mean(axis=0)
    n = _plane_normal(anchors)
    rel = p - base
    return p - 2.0 * rel.dot(n) * n


def _objective(p: np.ndarray, anchors: np.ndarray, rng_m: np.ndarray) -> float:
    dists = np.linalg.norm(anchors - p, axis=1)
    return float(np.sum((dists - rng_m) ** 2))


def _linear_init(
    anchors: np.ndarray, rng_m: np.ndarray, free: np.ndarray, z_fixed: float
) -> np.ndarray:
    """Closed-form linearized solve (pairwise-difference equations).

    Subtracting the first range equation from the others cancels the
    quadratic terms, leaving a linear system in the free coordinates. Exact
    for noiseless data with non-degenerate anchors; for rank-deficient
    layouts lstsq returns the minimum-norm component (a point on the anchor
    line), which the caller nudges off before iterating.
    """
    a0 = anchors[0]
    rows = []
    rhs = []
    for a_i, r_i in zip(anchors[1:], rng_m[1:]):
        rows.append(2.0 * (a_i - a0)[free])
        fixed = ~free
        const = np.sum((z_fixed - a_i[fixed]) ** 2) - np.sum(
            (z_fixed - a0[fixed]) ** 2
        )
        rhs.append(
            rng_m[0] ** 2
            - r_i**2
            + np.sum(a_i[free] ** 2)
            - np.sum(a0[free] ** 2)
            + const
        )
    sol, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    p = np.full(3, z_fixed, dtype=float)
    p[free] = sol
    return p


def _gauss_newton(
    start: np.ndarray,
    anchors: np.ndarray,
    rng_m: np.ndarray,
    free: np.ndarray,
) -> np.ndarray:
    """Minimize sum((||p - a_i|| - r_i)^2) over the coordinates in `free`.

    `free` is a boolean mask: 2D solves fix z, 3D frees all three.
    Gauss-Newton steps with Levenberg damping: the damping handles the flat
    valley that appears when noisy ranges leave the circles disjoint and
    the minimum sits on the anchor line. Converges on step norm, on
    objective stagnation, or when no damped step can improve (numerically
    stationary). Raises NoConvergence only if none of those trigger.
    """
    p = start.astype(float).copy()
    lam = 1e-3
    prev_obj = _objective(p, anchors, rng_m)
    stagnant = 0
    n_free = int(np.sum(free))
    for _ in range(_GN_MAX_ITERS):
        diffs = p - anchors
        dists = np.linalg.norm(diffs, axis=1)
        dists = np.maximum(dists, 1e-12)
        residuals = dists - rng_m
        jac = (diffs / dists[:, None])[:, free]
        normal = jac.T @ jac
        grad = jac.T @ residuals

        trial = p
        obj = prev_obj
        improved = False
        for _ in range(40):
            try:
                step = np.linalg.solve(
                    normal + lam * np.eye(n_free), -grad
                )
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(
                    normal + lam * np.eye(n_free), -grad, rcond=None
                )
            trial = p.copy()
            trial[free] += step
            obj = _objective(trial, anchors, rng_m)
            if np.isfinite(obj) and obj <= prev_obj + 1e-18:
                improved = True
                break
            lam *= 10.0
        if not improved:
            return p  # no damped step improves: numerically stationary
        p = trial
        lam = max(lam * 0.3, 1e-12)
        if np.linalg.norm(step) < _GN_STEP_TOL:
            return p
        if prev_obj - obj <= 1e-15 * (1.0 + prev_obj):
            stagnant += 1
            if stagnant >= 3:
                return p
        else:
            stagnant = 0
        prev_obj = obj
    raise NoConvergence(
        f"multilateration did not converge in {_GN_MAX_ITERS} iterations"
    )


def multilaterate(
    ranges: Sequence[AnchorRange],
    mode: str = "2d",
    hint: Optional[LocalPoint] = None,
) -> LocalPoint:
    """Estimate a position from distances to known anchors.

    Least-squares in the range residuals, solved by Gauss-Newton. 2D mode
    fixes z to the hint's z (or 0) and solves for (x, y); 3D mode needs at
    least three anchors and solves all coordinates.

    Mirror ambiguities (anchors collinear in 2D, coplanar in 3D) resolve to
    the solution nearer the hint. Without a hint, 2D falls back to the
    road-side convention of picking the solution with y >= the anchors' mean
    y; 3D raises DegenerateGeometry since no such convention is defined.
    """
    mode = mode.lower()
    if mode not in ("2d", "3d"):
        raise ValueError(f"mode must be '2d' or '3d', got {mode!r}")
    required = 2 if mode == "2d" else 3
    if len(ranges) < required:
        raise InsufficientAnchors(
            f"{mode.upper()} multilateration needs >= {required} anchors, "
            f"got {len(ranges)}"
        )

    anchors = _anchor_matrix(ranges)
    rng_m = np.array([r.range_m for r in ranges], dtype=float)
    spread = np.linalg.norm(anchors - anchors.mean(axis=0), axis=1)
    if np.all(spread <= _GEOM_TOL):
        raise DegenerateGeometry("all anchors coincident")

    if mode == "2d":
        xy_spread = np.linalg.norm(
            anchors[:, :2] - anchors[:, :2].mean(axis=0), axis=1
        )
        if np.all(xy_spread <= _GEOM_TOL):
            raise DegenerateGeometry(
                "anchors coincident in the 2D solve plane"
            )
        z = hint.z_m if hint is not None else 0.0
        free = np.array([True, True, False])
        collinear = _collinear_xy(anchors)
        if hint is not None:
            start = np.array([hint.x_m, hint.y_m, z])
            if collinear:
                # a start on the anchor line never leaves it; nudge off
                d = _line_direction_xy(anchors)
                normal = np.array([-d[1], d[0]])
                rel = start[:2] - anchors[:, :2].mean(axis=0)
                if abs(rel.dot(normal)) < 1e-6:
                    start[:2] += normal
        else:
            start = _linear_init(anchors, rng_m, free, z)
            if collinear:
                # the linearized solve lands on the anchor line; push off on
                # the +y side so the road-side convention holds
                d = _line_direction_xy(anchors)
                normal = np.array([-d[1], d[0]])
                if normal[1] < 0:
                    normal = -normal
                start[:2] += normal

        p = _gauss_newton(start, anchors, rng_m, free)

        if collinear:
            mirror = _reflect_across_line_2d(p, anchors)
            if hint is not None:
                h = np.array([hint.x_m, hint.y_m, z])
                if np.linalg.norm(mirror - h) < np.linalg.norm(p - h):
                    p = mirror
            else:
                mean_y = anchors[:, 1].mean()
                if p[1] < mean_y and mirror[1] >= mean_y:
                    p = mirror
        return LocalPoint(p[0], p[1], p[2])

    # 3D
    free = np.array([True, True, True])
    if _collinear(anchors):
        raise DegenerateGeometry(
            "3D multilateration with collinear anchors: solutions form a "
            "circle around the anchor line"
        )
    coplanar = _coplanar(anchors)
    if coplanar and hint is None:
        raise DegenerateGeometry(
            "3D multilateration with coplanar anchors is mirror-ambiguous; "
            "provide a hint to pick a side"
        )
    if hint is not None:
        start = hint.as_array()
        if coplanar:
            base = anchors.mean(axis=0)
            n = _plane_normal(anchors)
            if abs((start - base).dot(n)) < 1e-6:
                start = start + n
    else:
        start = _linear_init(anchors, rng_m, free, 0.0)

    p = _gauss_newton(start, anchors, rng_m, free)

    if coplanar and hint is not None:
        mirror = _reflect_across_plane(p, anchors)
        h = hint.as_array()
        if np.linalg.norm(mirror - h) < np.linalg.norm(p - h):
            p = mirror
    return LocalPoint(p[0], p[1], p[2])


def fuse_fixes(points: Iterable[LocalPoint]) -> LocalPoint:
    """Component-wise mean of several position fixes."""
    pts = list(points)
    if not pts:
        raise EmptyInput("fuse_fixes needs at least one point")
    arr = np.array([p.as_array() for p in pts])
    mean = arr.mean(axis=0)
    return LocalPoint(mean[0], mean[1], mean[2])
