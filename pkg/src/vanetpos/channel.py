"""Synthetic Wi-Fi propagation and RSS survey generation.

Log-distance path loss with distance-dependent Gaussian shadowing: chaotic
inside the near-field band, mild beyond it, plus extra variance for every
co-channel interferer. The survey generator drives a vehicle along a test
line past a row of roadside units and records one RSS sample per
(position, RSU) cell, mirroring a drive-by site survey.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .errors import BelowReferenceDistance, ChannelOutOfRange
from .geometry import LocalPoint

WIFI_CHANNEL_MIN = 1
WIFI_CHANNEL_MAX = 13

# channels this far apart (or more) do not interfere
_OVERLAP_SEPARATION = 5


@dataclass(frozen=True)
class Rsu:
    """A roadside unit: fixed access point broadcasting position beacons."""

    id: str
    position: LocalPoint
    channel: int
    tx_ref_rss_dbm: float = -40.0
    beacon_interval_ms: float = 100.0

    def __post_init__(self) -> None:
        if not WIFI_CHANNEL_MIN <= self.channel <= WIFI_CHANNEL_MAX:
            raise ChannelOutOfRange(
                f"RSU {self.id}: channel {self.channel} outside "
                f"[{WIFI_CHANNEL_MIN}, {WIFI_CHANNEL_MAX}]"
            )
        if self.beacon_interval_ms <= 0:
            raise ValueError(f"RSU {self.id}: beacon_interval_ms must be > 0")


@dataclass(frozen=True)
class ChannelModel:
    """Log-distance propagation law with two-zone shadowing.

    The received level at distance d is
    ``ref_rss_dbm - 10 * path_loss_exponent * log10(d / ref_distance_m)``,
    floored at the receiver sensitivity. Noise sigma is `near_sigma_db`
    below `near_field_m` (emitter-receiver interference chaos) and
    `far_sigma_db` beyond; each co-channel interferer adds
    `interference_sigma_db**2` of variance.
    """

    ref_distance_m: float = 1.0
    ref_rss_dbm: float = -40.0
    path_loss_exponent: float = 2.7
    far_sigma_db: float = 2.0
    near_sigma_db: float = 8.0
    near_field_m: float = 60.0
    interference_sigma_db: float = 6.0
    rss_floor_dbm: float = -95.0

    def __post_init__(self) -> None:
        if self.ref_distance_m <= 0:
            raise ValueError("ref_distance_m must be > 0")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be > 0")
        if min(self.far_sigma_db, self.near_sigma_db, self.interference_sigma_db) < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.near_field_m < 0:
            raise ValueError("near_field_m must be >= 0")


@dataclass(frozen=True)
class SurveyLayout:
    """Drive-by survey geometry: RSU row plus the parallel test line."""

    rsus: List[Rsu]
    start_m: float = 0.0
    end_m: float = 200.0
    step_m: float = 5.0
    lane_y_m: float = 7.0
    antenna_z_m: float = 1.10

    def __post_init__(self) -> None:
        if self.step_m <= 0:
            raise ValueError("step_m must be > 0")
        if self.end_m < self.start_m:
            raise ValueError("end_m must be >= start_m")

    def positions(self) -> np.ndarray:
        """Longitudinal sample positions, inclusive of both ends."""
        n = int(math.floor((self.end_m - self.start_m) / self.step_m + 1e-9)) + 1
        return self.start_m + self.step_m * np.arange(n)

    def vehicle_point(self, x_m: float) -> LocalPoint:
        return LocalPoint(x_m, self.lane_y_m, self.antenna_z_m)


@dataclass(frozen=True)
class RssSample:
    """One RSS reading: vehicle at x_m, heard from rsu_id."""

    x_m: float
    rsu_id: str
    rss_dbm: float
    true_distance_m: Optional[float] = None


@dataclass(frozen=True)
class SurveyDataset:
    """Complete survey grid: one sample per (position, RSU)."""

    layout: SurveyLayout
    samples: List[RssSample]
    seed: int

    def for_rsu(self, rsu_id: str) -> List[RssSample]:
        return [s for s in self.samples if s.rsu_id == rsu_id]

    def rsu_ids(self) -> List[str]:
        return sorted(r.id for r in self.layout.rsus)


def expected_rss(model: ChannelModel, distance_m: float) -> float:
    """Mean RSS at a given distance under the log-distance law."""
    if distance_m < model.ref_distance_m:
        raise BelowReferenceDistance(
            f"distance {distance_m} m closer than reference "
            f"{model.ref_distance_m} m"
        )
    rss = model.ref_rss_dbm - 10.0 * model.path_loss_exponent * math.log10(
        distance_m / model.ref_distance_m
    )
    return max(rss, model.rss_floor_dbm)


def channels_overlap(a: int, b: int) -> bool:
    """Whether two Wi-Fi channels interfere (closer than 5 channels apart)."""
    for ch in (a, b):
        if not WIFI_CHANNEL_MIN <= ch <= WIFI_CHANNEL_MAX:
            raise ChannelOutOfRange(
                f"channel {ch} outside [{WIFI_CHANNEL_MIN}, {WIFI_CHANNEL_MAX}]"
            )
    return abs(a - b) < _OVERLAP_SEPARATION


def sample_rss(
    model: ChannelModel,
    distance_m: float,
    n_cochannel_interferers: int,
    rng: np.random.Generator,
) -> float:
    """Draw one noisy RSS reading.

    Variance is the near/far base sigma squared plus
    ``n * interference_sigma_db**2``; the draw is floored at the receiver
    sensitivity. Deterministic given the generator state.
    """
    mean = expected_rss(model, distance_m)
    base = (
        model.near_sigma_db
        if distance_m < model.near_field_m
        else model.far_sigma_db
    )
    sigma = math.sqrt(
        base**2 + n_cochannel_interferers * model.interference_sigma_db**2
    )
    value = mean + sigma * rng.standard_normal() if sigma > 0 else mean
    return max(value, model.rss_floor_dbm)


def count_interferers(rsu: Rsu, others: Sequence[Rsu]) -> int:
    """How many other RSUs transmit on a channel overlapping this one."""
    return sum(
        1
        for other in others
        if other.id != rsu.id and channels_overlap(rsu.channel, other.channel)
    )


def generate_survey(
    layout: SurveyLayout, model: ChannelModel, seed: int
) -> SurveyDataset:
    """Simulate the drive-by survey: one sample per grid position per RSU.

    Iteration order (positions ascending, RSUs by id) pins the RNG stream,
    so the dataset is a pure function of (layout, model, seed).
    """
    rng = np.random.default_rng(seed)
    rsus = sorted(layout.rsus, key=lambda r: r.id)
    samples: List[RssSample] = []
    for x in layout.positions():
        vehicle = layout.vehicle_point(float(x)).as_array()
        for rsu in rsus:
            dist = float(np.linalg.norm(vehicle - rsu.position.as_array()))
            n_int = count_interferers(rsu, rsus)
            per_rsu = replace(model, ref_rss_dbm=rsu.tx_ref_rss_dbm)
            rss = sample_rss(per_rsu, dist, n_int, rng)
            samples.append(
                RssSample(
                    x_m=float(x),
                    rsu_id=rsu.id,
                    rss_dbm=rss,
                    true_distance_m=dist,
                )
            )
    return SurveyDataset(layout=layout, samples=samples, seed=seed)


# --- survey CSV interface (fixed format for byte-stable experiment files) ---

SURVEY_CSV_HEADER = "x_m,rsu_id,rss_dbm,true_distance_m,channel"


def write_survey_csv(dataset: SurveyDataset, path: Union[str, Path]) -> int:
    """Write the survey grid; returns the data row count.

    Rows ordered by x_m then rsu_id, floats at 4 decimal places so repeat
    runs are byte-identical.
    """
    channels = {r.id: r.channel for r in dataset.layout.rsus}
    rows = sorted(dataset.samples, key=lambda s: (s.x_m, s.rsu_id))
    lines = [SURVEY_CSV_HEADER]
    for s in rows:
        lines.append(
            f"{s.x_m:.4f},{s.rsu_id},{s.rss_dbm:.4f},"
            f"{s.true_distance_m:.4f},{channels[s.rsu_id]}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
    return len(rows)


def read_survey_csv(path: Union[str, Path]) -> List[RssSample]:
    """Read samples back from the survey CSV (channel column ignored)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SURVEY_CSV_HEADER:
        raise ValueError(f"{path}: not a survey CSV (bad header)")
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 columns")
        samples.append(
            RssSample(
                x_m=float(parts[0]),
                rsu_id=parts[1],
                rss_dbm=float(parts[2]),
                true_distance_m=float(parts[3]),
            )
        )
    return samples


def standard_rsu_row(
    positions_m: Sequence[float],
    channels: Sequence[int],
    antenna_z_m: float = 1.10,
    tx_ref_rss_dbm: float = -40.0,
) -> List[Rsu]:
    """RSUs on the y = 0 line at the given x positions, named ap<pos>."""
    if len(positions_m) != len(channels):
        raise ValueError("positions_m and channels must have equal length")
    return [
        Rsu(
            id=f"ap{int(round(x))}",
            position=LocalPoint(float(x), 0.0, antenna_z_m),
            channel=int(ch),
            tx_ref_rss_dbm=tx_ref_rss_dbm,
        )
        for x, ch in zip(positions_m, channels)
    ]
