"""Quartic curve-fit estimator mapping RSS (dBm) to distance (meters).

Distance = p1*R^4 + p2*R^3 + p3*R^2 + p4*R + p5. A raw Vandermonde in R is
badly conditioned (R^4 reaches ~6.6e7 at -90 dBm), so the fit runs in the
standardized variable z = (R - mean) / std and the coefficients are expanded
back to raw R for reporting. Training data is filtered to the far field
first: readings taken closer than the cutoff are near-field chaos.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple, Union

import numpy as np

from .channel import RssSample
from .errors import RankDeficient, TooFewSamples
from .metrics import FitReport, goodness_of_fit

_MIN_PAIRS = 5
_N_COEFFS = 5


@dataclass(frozen=True)
class Polynomial4:
    """Coefficients of the quartic, highest power first."""

    p1: float
    p2: float
    p3: float
    p4: float
    p5: float

    def __post_init__(self) -> None:
        for name in ("p1", "p2", "p3", "p4", "p5"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def coefficients(self) -> Tuple[float, float, float, float, float]:
        return (self.p1, self.p2, self.p3, self.p4, self.p5)


@dataclass(frozen=True)
class FitInput:
    """Far-field calibration pairs (one RSU), ready for fitting."""

    rss_dbm: Tuple[float, ...]
    distance_m: Tuple[float, ...]
    min_distance_m: float

    def __post_init__(self) -> None:
        if len(self.rss_dbm) != len(self.distance_m):
            raise ValueError("rss_dbm and distance_m must have equal length")
        if len(self.rss_dbm) < _MIN_PAIRS:
            raise TooFewSamples(
                f"need >= {_MIN_PAIRS} pairs, got {len(self.rss_dbm)}"
            )

    @property
    def n(self) -> int:
        return len(self.rss_dbm)

    @property
    def rss_min(self) -> float:
        return min(self.rss_dbm)

    @property
    def rss_max(self) -> float:
        return max(self.rss_dbm)


def filter_near_field(
    samples: Iterable[RssSample], cutoff_m: float
) -> FitInput:
    """Keep only samples at true distance >= cutoff, preserving order."""
    kept: List[RssSample] = []
    for s in samples:
        if s.true_distance_m is None:
            raise ValueError(f"sample at x={s.x_m} lacks true_distance_m")
        if s.true_distance_m >= cutoff_m:
            kept.append(s)
    if len(kept) < _MIN_PAIRS:
        raise TooFewSamples(
            f"only {len(kept)} samples at distance >= {cutoff_m} m "
            f"(need {_MIN_PAIRS})"
        )
    return FitInput(
        rss_dbm=tuple(s.rss_dbm for s in kept),
        distance_m=tuple(s.true_distance_m for s in kept),
        min_distance_m=cutoff_m,
    )


def fit_poly4(fit_input: FitInput) -> Tuple[Polynomial4, FitReport]:
    """Least-squares quartic fit of distance on RSS.

    Solved in the standardized predictor for conditioning, then expanded to
    raw-R coefficients. The goodness-of-fit report is computed from the
    expanded coefficients (the ones reported), with k = 5.
    """
    rss = np.asarray(fit_input.rss_dbm, dtype=float)
    dist = np.asarray(fit_input.distance_m, dtype=float)
    if len(np.unique(rss)) < _N_COEFFS:
        raise RankDeficient(
            f"need >= {_N_COEFFS} distinct RSS values, got {len(np.unique(rss))}"
        )

    mu = rss.mean()
    sigma = rss.std()
    z = (rss - mu) / sigma
    z_coeffs = np.polyfit(z, dist, deg=4)

    # compose with z(R) = (R - mu) / sigma to recover raw-R coefficients
    raw = np.poly1d(z_coeffs)(np.poly1d([1.0 / sigma, -mu / sigma]))
    coeffs = np.zeros(_N_COEFFS)
    coeffs[_N_COEFFS - len(raw.coeffs):] = raw.coeffs
    poly = Polynomial4(*coeffs)

    predicted = evaluate_poly4(poly, rss)
    report = goodness_of_fit(dist, predicted, k=_N_COEFFS)
    return poly, report


def evaluate_poly4(
    poly: Polynomial4, rss_dbm: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """Evaluate the quartic at an RSS value (Horner form)."""
    r = rss_dbm
    acc = poly.p1
    for c in (poly.p2, poly.p3, poly.p4, poly.p5):
        acc = acc * r + c
    if isinstance(acc, np.ndarray):
        return acc
    return float(acc)
