"""Hybrid positioning engine: DGPS when available, RSS ranging otherwise.

The RSS path follows the deployment policy: prefer the farthest RSUs heard
(weakest signal, clear of near-field chaos) on mutually non-interfering
channels, convert each RSS to a range with the calibrated quartic,
multilaterate, and average the fixes from every minimal anchor subset when
extra RSUs are available. A neural estimator can replace the
range-and-multilaterate chain with a direct street-position readout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .channel import Rsu, channels_overlap
from .errors import InsufficientAnchors, NoCoverage
from .fit import Polynomial4, evaluate_poly4
from .geometry import (
    AnchorRange,
    GlobalPosition,
    LocalPoint,
    fuse_fixes,
    multilaterate,
    to_global,
    to_local,
)
from .nn import MlpModel, forward


class FixSource(Enum):
    DGPS = "DGPS"
    RSS = "RSS"


@dataclass(frozen=True)
class GpsStatus:
    """Satellite and correction availability as reported by the receiver."""

    satellites_ok: bool
    dgps_corrections: bool
    dgps_position: Optional[GlobalPosition] = None

    def __post_init__(self) -> None:
        if self.satellites_ok and self.dgps_corrections and self.dgps_position is None:
            raise ValueError(
                "dgps_position required when satellites_ok and dgps_corrections"
            )


@dataclass(frozen=True)
class SelectionPolicy:
    """RSU selection and deployment rules."""

    min_rsu_count: int = 2
    require_distinct_channels: bool = True
    prefer_weakest_rss: bool = True
    min_rsu_spacing_m: float = 100.0
    near_field_m: float = 60.0

    def __post_init__(self) -> None:
        if self.min_rsu_count < 2:
            raise ValueError("min_rsu_count must be >= 2")


@dataclass(frozen=True)
class Beacon:
    """One beacon heard in the current window: the RSU plus measured RSS."""

    rsu: Rsu
    rss_dbm: float


@dataclass(frozen=True)
class CalibratedPoly:
    """A fitted quartic plus the RSS domain it was calibrated on."""

    poly: Polynomial4
    rss_min_dbm: float
    rss_max_dbm: float
    rmse_m: float

    def __post_init__(self) -> None:
        if self.rss_min_dbm > self.rss_max_dbm:
            raise ValueError("rss_min_dbm must be <= rss_max_dbm")


@dataclass(frozen=True)
class PolynomialRangeEstimator:
    """Per-RSU calibrated quartics (RSS in dBm to range in meters)."""

    by_rsu: Dict[str, CalibratedPoly]

    def rmse_for(self, rsu_ids: Sequence[str]) -> float:
        return max(self.by_rsu[r].rmse_m for r in rsu_ids)


@dataclass(frozen=True)
class NnPositionEstimator:
    """Direct street-position network, valid on its calibrated segment."""

    model: MlpModel
    rsu_order: Tuple[str, ...]
    segment_start_m: float
    segment_end_m: float
    lane_y_m: float
    antenna_z_m: float
    rmse_m: float
    missing_rss_dbm: float = -95.0


RangeEstimator = Union[PolynomialRangeEstimator, NnPositionEstimator]


@dataclass(frozen=True)
class PositionFix:
    """Engine output: absolute and local position with provenance."""

    global_position: GlobalPosition
    local_position: LocalPoint
    source: FixSource
    used_rsu_ids: Tuple[str, ...]
    quality_m: float

    def __post_init__(self) -> None:
        if self.source is FixSource.RSS and not self.used_rsu_ids:
            raise ValueError("RSS fixes must record the RSUs they used")


def validate_deployment(rsus: Sequence[Rsu], policy: SelectionPolicy) -> None:
    """Check the minimum spacing rule between every RSU pair."""
    for a, b in itertools.combinations(rsus, 2):
        d = float(
            sum((x - y) ** 2 for x, y in zip(a.position.as_array(), b.position.as_array()))
            ** 0.5
        )
        if d < policy.min_rsu_spacing_m:
            raise ValueError(
                f"RSUs {a.id} and {b.id} are {d:.1f} m apart; policy requires "
                f">= {policy.min_rsu_spacing_m} m"
            )


def _sorted_weakest_first(beacons: Sequence[Beacon]) -> List[Beacon]:
    return sorted(beacons, key=lambda b: (b.rss_dbm, b.rsu.id))


def _greedy_distinct(beacons: Sequence[Beacon]) -> List[Beacon]:
    """Weakest-first greedy subset with mutually non-overlapping channels."""
    picked: List[Beacon] = []
    for b in _sorted_weakest_first(beacons):
        if all(not channels_overlap(b.rsu.channel, p.rsu.channel) for p in picked):
            picked.append(b)
    return picked


def select_rsus(
    beacons: Sequence[Beacon], policy: SelectionPolicy, needed: int
) -> Tuple[List[Beacon], bool]:
    """Pick `needed` RSUs, farthest (weakest RSS) first on distinct channels.

    Returns the selection and a degraded flag: when the channel-distinct
    greedy pass cannot reach `needed`, selection falls back to plain
    weakest-RSS order and the flag is set so callers can derate the fix.
    """
    if len(beacons) < needed:
        raise InsufficientAnchors(
            f"heard {len(beacons)} RSUs, need {needed}"
        )
    ordered = _sorted_weakest_first(beacons)
    if not policy.require_distinct_channels:
        return ordered[:needed], False
    distinct = _greedy_distinct(beacons)
    if len(distinct) >= needed:
        return distinct[:needed], False
    return ordered[:needed], True


def rss_to_range(cal: CalibratedPoly, rss_dbm: float) -> Tuple[float, bool]:
    """Convert RSS to range with the calibrated quartic.

    RSS outside the calibration domain is evaluated at the nearest domain
    edge (the quartic diverges outside its fit range); negative outputs
    clamp to zero. The flag reports whether any clamp fired.
    """
    clamped = False
    r = rss_dbm
    if r < cal.rss_min_dbm:
        r, clamped = cal.rss_min_dbm, True
    elif r > cal.rss_max_dbm:
        r, clamped = cal.rss_max_dbm, True
    value = float(evaluate_poly4(cal.poly, r))
    if value < 0.0:
        value, clamped = 0.0, True
    return value, clamped


def _dedupe_strongest(beacons: Sequence[Beacon]) -> List[Beacon]:
    best: Dict[str, Beacon] = {}
    for b in beacons:
        cur = best.get(b.rsu.id)
        if cur is None or b.rss_dbm > cur.rss_dbm:
            best[b.rsu.id] = b
    return list(best.values())


def _locate_polynomial(
    beacons: List[Beacon],
    estimator: PolynomialRangeEstimator,
    policy: SelectionPolicy,
    hint: Optional[LocalPoint],
) -> Tuple[LocalPoint, Tuple[str, ...], float]:
    usable = [b for b in beacons if b.rsu.id in estimator.by_rsu]
    if len(usable) < policy.min_rsu_count:
        raise InsufficientAnchors(
            f"{len(usable)} calibrated RSUs heard, need {policy.min_rsu_count}"
        )

    estimates = {
        b.rsu.id: rss_to_range(estimator.by_rsu[b.rsu.id], b.rss_dbm)
        for b in usable
    }
    # deprioritize anchors inside the near-field chaos zone or outside
    # their calibrated RSS domain; use them only to reach the minimum count
    good = [
        b
        for b in usable
        if not estimates[b.rsu.id][1]
        and estimates[b.rsu.id][0] >= policy.near_field_m
    ]
    bad = [b for b in usable if b not in good]

    degraded = False
    if policy.require_distinct_channels:
        n_usable = len(_greedy_distinct(good))
    else:
        n_usable = len(good)
    if n_usable >= policy.min_rsu_count:
        selected, degraded = select_rsus(good, policy, n_usable)
    elif len(good) >= policy.min_rsu_count:
        selected, degraded = select_rsus(good, policy, policy.min_rsu_count)
    else:
        shortfall = policy.min_rsu_count - len(good)
        selected = list(good) + _sorted_weakest_first(bad)[:shortfall]
        degraded = True

    ranges = [
        AnchorRange(anchor=b.rsu.position, range_m=estimates[b.rsu.id][0])
        for b in selected
    ]
    any_clamped = any(estimates[b.rsu.id][1] for b in selected)

    core = policy.min_rsu_count
    if len(ranges) > core:
        fixes = [
            multilaterate(list(subset), "2d", hint=hint)
            for subset in itertools.combinations(ranges, core)
        ]
        local = fuse_fixes(fixes)
    else:
        local = multilaterate(ranges, "2d", hint=hint)

    used = tuple(b.rsu.id for b in selected)
    quality = estimator.rmse_for(used)
    if any_clamped or degraded:
        quality *= 2.0
    return local, used, quality


def _locate_nn(
    beacons: List[Beacon],
    estimator: NnPositionEstimator,
    policy: SelectionPolicy,
) -> Tuple[LocalPoint, Tuple[str, ...], float]:
    by_id = {b.rsu.id: b for b in beacons}
    heard = [r for r in estimator.rsu_order if r in by_id]
    if len(heard) < policy.min_rsu_count:
        raise InsufficientAnchors(
            f"{len(heard)} of the estimator's RSUs heard, "
            f"need {policy.min_rsu_count}"
        )
    vector = [
        by_id[r].rss_dbm if r in by_id else estimator.missing_rss_dbm
        for r in estimator.rsu_order
    ]
    x = forward(estimator.model, vector)
    clamped = False
    if x < estimator.segment_start_m:
        x, clamped = estimator.segment_start_m, True
    elif x > estimator.segment_end_m:
        x, clamped = estimator.segment_end_m, True
    local = LocalPoint(x, estimator.lane_y_m, estimator.antenna_z_m)
    quality = estimator.rmse_m * (2.0 if clamped else 1.0)
    return local, tuple(heard), quality


def locate(
    gps: GpsStatus,
    beacons: Sequence[Beacon],
    estimator: RangeEstimator,
    policy: SelectionPolicy,
    origin: GlobalPosition,
    hint: Optional[LocalPoint] = None,
) -> PositionFix:
    """Produce one position fix from the current GPS state and beacons.

    DGPS wins whenever satellites and corrections are both available;
    otherwise the RSS path selects RSUs per the policy and applies the
    estimator. Quality is the estimator's calibration RMSE, doubled when a
    domain clamp or the channel fallback degraded the fix.
    """
    if gps.satellites_ok and gps.dgps_corrections:
        return PositionFix(
            global_position=gps.dgps_position,
            local_position=to_local(gps.dgps_position, origin),
            source=FixSource.DGPS,
            used_rsu_ids=(),
            quality_m=0.0,
        )

    if not beacons:
        raise NoCoverage("no GPS and no beacons heard")
    unique = _dedupe_strongest(beacons)

    if isinstance(estimator, PolynomialRangeEstimator):
        local, used, quality = _locate_polynomial(unique, estimator, policy, hint)
    else:
        local, used, quality = _locate_nn(unique, estimator, policy)

    return PositionFix(
        global_position=to_global(local, origin),
        local_position=local,
        source=FixSource.RSS,
        used_rsu_ids=used,
        quality_m=quality,
    )
