"""Command-line harness wiring the toolkit into reproducible experiments.

Subcommands: `survey` (generate an RSS survey CSV), `fit` (calibrate the
quartic for one RSU), `sweep` (network model-selection table), and `drive`
(simulated run along the road with DGPS outages and an error summary).
Every command is deterministic given (config, seed) and writes byte-stable
output. Exit codes: 0 ok, 1 usage, 2 data/config error, 3 insufficient
data/anchors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import channel as ch
from . import nn
from .errors import (
    ConfigError,
    InsufficientAnchors,
    NoCoverage,
    RankDeficient,
    TooFewSamples,
    VanetPosError,
)
from .fit import filter_near_field, fit_poly4
from .geometry import GlobalPosition, LocalPoint, to_global
from .positioning import (
    Beacon,
    CalibratedPoly,
    GpsStatus,
    NnPositionEstimator,
    PolynomialRangeEstimator,
    RangeEstimator,
    SelectionPolicy,
    locate,
)

SWEEP_CSV_HEADER = (
    "rank,hidden,seed,mse_test,mse_all,maxerr_test,maxerr_all,"
    "std_test,std_all,var_test,var_all,corr_test,corr_all"
)
TRACE_CSV_HEADER = (
    "t_s,x_true_m,x_est_m,y_est_m,source,used_rsus,quality_m,abs_error_m"
)

_DEFAULT_ORIGIN = GlobalPosition(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str  # "poly" | "nn"
    cutoff_m: float = 60.0
    hidden: int = 8
    train_seed: int = 0
    max_epochs: int = 1000
    learning_rate: float = 0.05
    momentum: float = 0.9
    patience: int = 50


@dataclass(frozen=True)
class ScenarioConfig:
    layout: ch.SurveyLayout
    channel: ch.ChannelModel
    seed: int
    gps_outages: Tuple[Tuple[float, float], ...]
    origin: GlobalPosition
    estimator: Optional[EstimatorSpec]
    policy: SelectionPolicy


def _check_keys(section: dict, allowed: Sequence[str], context: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {sorted(unknown)}")


def _parse_rsu(entry: dict, index: int) -> ch.Rsu:
    allowed = ("id", "x_m", "y_m", "z_m", "channel", "tx_ref_rss_dbm", "beacon_interval_ms")
    _check_keys(entry, allowed, f"layout.rsus[{index}]")
    try:
        return ch.Rsu(
            id=str(entry["id"]),
            position=LocalPoint(
                float(entry["x_m"]),
                float(entry.get("y_m", 0.0)),
                float(entry.get("z_m", 1.10)),
            ),
            channel=int(entry["channel"]),
            tx_ref_rss_dbm=float(entry.get("tx_ref_rss_dbm", -40.0)),
            beacon_interval_ms=float(entry.get("beacon_interval_ms", 100.0)),
        )
    except KeyError as e:
        raise ConfigError(f"layout.rsus[{index}] missing key {e}") from e


def _parse_layout(section: dict) -> ch.SurveyLayout:
    allowed = ("rsus", "start_m", "end_m", "step_m", "lane_y_m", "antenna_z_m")
    _check_keys(section, allowed, "layout")
    if "rsus" not in section or not section["rsus"]:
        raise ConfigError("layout.rsus must list at least one RSU")
    rsus = [_parse_rsu(e, i) for i, e in enumerate(section["rsus"])]
    return ch.SurveyLayout(
        rsus=rsus,
        start_m=float(section.get("start_m", 0.0)),
        end_m=float(section.get("end_m", 200.0)),
        step_m=float(section.get("step_m", 5.0)),
        lane_y_m=float(section.get("lane_y_m", 7.0)),
        antenna_z_m=float(section.get("antenna_z_m", 1.10)),
    )


def _parse_channel(section: dict) -> ch.ChannelModel:
    allowed = [f.name for f in fields(ch.ChannelModel)]
    _check_keys(section, allowed, "channel")
    return ch.ChannelModel(**{k: float(v) for k, v in section.items()})


def _parse_origin(section: dict) -> GlobalPosition:
    allowed = ("latitude_deg", "longitude_deg", "altitude_m")
    _check_keys(section, allowed, "scenario.origin")
    return GlobalPosition(
        latitude_deg=float(section.get("latitude_deg", 0.0)),
        longitude_deg=float(section.get("longitude_deg", 0.0)),
        altitude_m=float(section.get("altitude_m", 0.0)),
    )


def _parse_estimator(section: dict) -> EstimatorSpec:
    allowed = (
        "kind", "cutoff_m", "hidden", "train_seed", "max_epochs",
        "learning_rate", "momentum", "patience",
    )
    _check_keys(section, allowed, "estimator")
    kind = section.get("kind")
    if kind not in ("poly", "nn"):
        raise ConfigError(f"estimator.kind must be 'poly' or 'nn', got {kind!r}")
    return EstimatorSpec(
        kind=kind,
        cutoff_m=float(section.get("cutoff_m", 60.0)),
        hidden=int(section.get("hidden", 8)),
        train_seed=int(section.get("train_seed", 0)),
        max_epochs=int(section.get("max_epochs", 1000)),
        learning_rate=float(section.get("learning_rate", 0.05)),
        momentum=float(section.get("momentum", 0.9)),
        patience=int(section.get("patience", 50)),
    )


def _parse_policy(section: dict) -> SelectionPolicy:
    allowed = [f.name for f in fields(SelectionPolicy)]
    _check_keys(section, allowed, "scenario.policy")
    defaults = SelectionPolicy()
    return SelectionPolicy(
        min_rsu_count=int(section.get("min_rsu_count", defaults.min_rsu_count)),
        require_distinct_channels=bool(
            section.get("require_distinct_channels", defaults.require_distinct_channels)
        ),
        prefer_weakest_rss=bool(
            section.get("prefer_weakest_rss", defaults.prefer_weakest_rss)
        ),
        min_rsu_spacing_m=float(
            section.get("min_rsu_spacing_m", defaults.min_rsu_spacing_m)
        ),
        near_field_m=float(section.get("near_field_m", defaults.near_field_m)),
    )


def load_scenario(path: str) -> ScenarioConfig:
    """Parse and validate a scenario config JSON; unknown keys are errors."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    _check_keys(raw, ("layout", "channel", "scenario", "estimator"), "config")
    if "layout" not in raw or "channel" not in raw:
        raise ConfigError(f"{path}: layout and channel sections are required")

    layout = _parse_layout(raw["layout"])
    model = _parse_channel(raw.get("channel", {}))

    scenario = raw.get("scenario", {})
    _check_keys(
        scenario, ("seed", "gps_outages", "origin", "policy"), "scenario"
    )
    seed = int(scenario.get("seed", 0))
    outages = []
    for pair in scenario.get("gps_outages", []):
        if len(pair) != 2:
            raise ConfigError("scenario.gps_outages entries must be [start, end]")
        lo, hi = float(pair[0]), float(pair[1])
        if lo > hi or lo < layout.start_m or hi > layout.end_m:
            raise ConfigError(
                f"outage [{lo}, {hi}] outside survey range "
                f"[{layout.start_m}, {layout.end_m}]"
            )
        outages.append((lo, hi))
    origin = _parse_origin(scenario.get("origin", {}))
    policy = _parse_policy(scenario.get("policy", {}))

    est = _parse_estimator(raw["estimator"]) if "estimator" in raw else None
    return ScenarioConfig(
        layout=layout,
        channel=model,
        seed=seed,
        gps_outages=tuple(outages),
        origin=origin,
        estimator=est,
        policy=policy,
    )


def calibrate_polynomial(
    layout: ch.SurveyLayout,
    model: ch.ChannelModel,
    cutoff_m: float,
    seed: int,
) -> Tuple[PolynomialRangeEstimator, Dict[str, float]]:
    """Fit one quartic per RSU from a fresh calibration survey."""
    survey = ch.generate_survey(layout, model, seed=seed)
    by_rsu: Dict[str, CalibratedPoly] = {}
    rmse: Dict[str, float] = {}
    for rsu in sorted(layout.rsus, key=lambda r: r.id):
        kept = filter_near_field(survey.for_rsu(rsu.id), cutoff_m)
        poly, report = fit_poly4(kept)
        by_rsu[rsu.id] = CalibratedPoly(
            poly=poly,
            rss_min_dbm=kept.rss_min,
            rss_max_dbm=kept.rss_max,
            rmse_m=report.rmse,
        )
        rmse[rsu.id] = report.rmse
    return PolynomialRangeEstimator(by_rsu=by_rsu), rmse


def calibrate_nn(
    layout: ch.SurveyLayout,
    model: ch.ChannelModel,
    spec: EstimatorSpec,
    seed: int,
) -> NnPositionEstimator:
    """Train the direct position network on a fresh calibration survey."""
    survey = ch.generate_survey(layout, model, seed=seed)
    dataset = nn.dataset_from_survey(survey)
    splits = nn.split_dataset(dataset.n, spec.train_seed)
    config = nn.TrainConfig(
        max_epochs=spec.max_epochs,
        patience=spec.patience,
        learning_rate=spec.learning_rate,
        momentum=spec.momentum,
        seed=spec.train_seed,
    )
    trained, _ = nn.train(
        nn.init_mlp(dataset.inputs.shape[1], spec.hidden, spec.train_seed),
        dataset,
        splits,
        config,
    )
    pred = nn.forward_batch(trained, dataset.inputs)
    rmse = float(np.sqrt(np.mean((pred - dataset.targets) ** 2)))
    return NnPositionEstimator(
        model=trained,
        rsu_order=dataset.feature_names,
        segment_start_m=layout.start_m,
        segment_end_m=layout.end_m,
        lane_y_m=layout.lane_y_m,
        antenna_z_m=layout.antenna_z_m,
        rmse_m=rmse,
        missing_rss_dbm=model.rss_floor_dbm,
    )


def cmd_survey(config_path: str, seed: Optional[int], out_path: str) -> int:
    config = load_scenario(config_path)
    survey = ch.generate_survey(
        config.layout, config.channel, seed if seed is not None else config.seed
    )
    n = ch.write_survey_csv(survey, out_path)
    print(f"wrote {n} rows to {out_path}")
    return 0


def cmd_fit(
    in_csv: str, rsu_id: str, min_distance_m: float, report_path: str
) -> int:
    try:
        samples = ch.read_survey_csv(in_csv)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    mine = [s for s in samples if s.rsu_id == rsu_id]
    if not mine:
        print(f"error: RSU {rsu_id!r} not present in {in_csv}", file=sys.stderr)
        return 2
    try:
        kept = filter_near_field(mine, min_distance_m)
        poly, report = fit_poly4(kept)
    except (TooFewSamples, RankDeficient) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    payload = {
        "p1": poly.p1,
        "p2": poly.p2,
        "p3": poly.p3,
        "p4": poly.p4,
        "p5": poly.p5,
        "sse": report.sse,
        "r_square": report.r_square,
        "adj_r_square": report.adj_r_square,
        "rmse": report.rmse,
        "n": report.n,
    }
    Path(report_path).write_text(json.dumps(payload, indent=2) + "\n")
    print(
        f"fit {rsu_id}: n={report.n} rmse={report.rmse:.4f} "
        f"r_square={report.r_square:.6f} -> {report_path}"
    )
    return 0


def _parse_hidden_range(text: str) -> Tuple[int, ...]:
    try:
        lo_s, hi_s = text.split("..")
        lo, hi = int(lo_s), int(hi_s)
    except ValueError as e:
        raise ConfigError(f"--hidden must look like LO..HI, got {text!r}") from e
    if lo < 1 or hi < lo:
        raise ConfigError(f"--hidden range {text!r} is empty or invalid")
    return tuple(range(lo, hi + 1))


def _sweep_row_to_csv(row: nn.SweepRow) -> str:
    t, a = row.test, row.all
    vals = [
        t.mse, a.mse, t.max_abs_error, a.max_abs_error,
        t.std_dev, a.std_dev, t.variance, a.variance,
        t.correlation, a.correlation,
    ]
    joined = ",".join(f"{v:.4f}" for v in vals)
    return f"{row.rank},{row.hidden},{row.seed},{joined}"


def cmd_sweep(
    in_csv: str, hidden_range: Tuple[int, ...], n_seeds: int, out_csv: str
) -> int:
    try:
        samples = ch.read_survey_csv(in_csv)
        dataset = nn.dataset_from_columns(samples)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    config = nn.SweepConfig(
        hidden_sizes=hidden_range,
        seeds=tuple(range(n_seeds)),
        train=nn.TrainConfig(),
    )
    table = nn.sweep(dataset, config)
    lines = [SWEEP_CSV_HEADER] + [_sweep_row_to_csv(r) for r in table.rows]
    Path(out_csv).write_text("\n".join(lines) + "\n")
    print(f"swept {len(table.rows)} models -> {out_csv}")
    print(SWEEP_CSV_HEADER)
    for row in table.rows[:5]:
        print(_sweep_row_to_csv(row))
    return 0


def _in_outage(x: float, outages: Sequence[Tuple[float, float]]) -> bool:
    return any(lo <= x <= hi for lo, hi in outages)


def _build_estimator(config: ScenarioConfig) -> RangeEstimator:
    if config.estimator is None:
        raise ConfigError("drive needs an estimator section in the config")
    if config.estimator.kind == "poly":
        estimator, _ = calibrate_polynomial(
            config.layout, config.channel, config.estimator.cutoff_m, config.seed
        )
        return estimator
    return calibrate_nn(config.layout, config.channel, config.estimator, config.seed)


def cmd_drive(config_path: str, out_csv: str, seed: Optional[int]) -> int:
    config = load_scenario(config_path)
    run_seed = seed if seed is not None else config.seed
    if seed is not None:
        config = replace(config, seed=run_seed)
    estimator = _build_estimator(config)

    # beacon noise draws from a stream independent of the calibration survey
    rng = np.random.default_rng([run_seed, 1])
    rsus = sorted(config.layout.rsus, key=lambda r: r.id)

    lines = [TRACE_CSV_HEADER]
    all_errors: List[float] = []
    outage_errors: List[float] = []
    hint: Optional[LocalPoint] = None

    for step, x in enumerate(config.layout.positions()):
        x = float(x)
        truth_local = config.layout.vehicle_point(x)
        truth_global = to_global(truth_local, config.origin)
        sats_ok = not _in_outage(x, config.gps_outages)
        gps = GpsStatus(
            satellites_ok=sats_ok,
            dgps_corrections=sats_ok,
            dgps_position=truth_global if sats_ok else None,
        )

        beacons = []
        for rsu in rsus:
            dist = float(
                np.linalg.norm(
                    truth_local.as_array() - rsu.position.as_array()
                )
            )
            per_rsu = replace(config.channel, ref_rss_dbm=rsu.tx_ref_rss_dbm)
            rss = ch.sample_rss(
                per_rsu, dist, ch.count_interferers(rsu, rsus), rng
            )
            if rss <= config.channel.rss_floor_dbm + 1e-9:
                continue  # beacon lost below receiver sensitivity
            beacons.append(Beacon(rsu=rsu, rss_dbm=rss))

        try:
            fix = locate(
                gps, beacons, estimator, config.policy, config.origin, hint=hint
            )
        except (NoCoverage, InsufficientAnchors) as e:
            print(f"error at x={x}: {e}", file=sys.stderr)
            return 3
        hint = fix.local_position

        x_est = f"{fix.local_position.x_m:.4f}"
        y_est = f"{fix.local_position.y_m:.4f}"
        abs_err = f"{abs(fix.local_position.x_m - truth_local.x_m):.4f}"
        quality = f"{fix.quality_m:.4f}"
        lines.append(
            f"{step},{x:.4f},{x_est},{y_est},{fix.source.value},"
            f"{';'.join(fix.used_rsu_ids)},{quality},{abs_err}"
        )
        err_val = float(abs_err)
        all_errors.append(err_val)
        if not sats_ok:
            outage_errors.append(err_val)

    Path(out_csv).write_text("\n".join(lines) + "\n")
    print(f"wrote {len(all_errors)} trace rows to {out_csv}")
    print(
        f"overall: mean_abs_error_m={np.mean(all_errors):.9f} "
        f"max_abs_error_m={np.max(all_errors):.9f}"
    )
    if outage_errors:
        print(
            f"in_outage: rows={len(outage_errors)} "
            f"mean_abs_error_m={np.mean(outage_errors):.9f} "
            f"max_abs_error_m={np.max(outage_errors):.9f}"
        )
    else:
        print("in_outage: rows=0")
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse variant honoring the exit-code contract (1 on usage)."""

    def error(self, message: str):  # noqa: D102
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vanetpos", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_survey = sub.add_parser("survey", help="generate a synthetic RSS survey CSV")
    p_survey.add_argument("--config", required=True, help="scenario config JSON")
    p_survey.add_argument("--seed", type=int, default=None)
    p_survey.add_argument("--out", required=True, help="output CSV path")

    p_fit = sub.add_parser("fit", help="calibrate the quartic for one RSU")
    p_fit.add_argument("in_csv", help="survey CSV input")
    p_fit.add_argument("--rsu", required=True, help="RSU id to calibrate")
    p_fit.add_argument(
        "--min-distance", type=float, default=60.0,
        help="near-field cutoff in meters (default 60)",
    )
    p_fit.add_argument("--out", required=True, help="fit report JSON path")

    p_sweep = sub.add_parser("sweep", help="hidden-size x seed model selection")
    p_sweep.add_argument("in_csv", help="survey CSV input")
    p_sweep.add_argument(
        "--hidden", default="2..10", help="hidden-size range LO..HI (default 2..10)"
    )
    p_sweep.add_argument(
        "--seeds", type=int, default=20, help="number of seeds (default 20)"
    )
    p_sweep.add_argument("--out", required=True, help="ranked table CSV path")

    p_drive = sub.add_parser("drive", help="simulated drive with DGPS outages")
    p_drive.add_argument("--config", required=True, help="scenario config JSON")
    p_drive.add_argument("--seed", type=int, default=None)
    p_drive.add_argument("--out", required=True, help="trace CSV path")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "survey":
            return cmd_survey(args.config, args.seed, args.out)
        if args.command == "fit":
            return cmd_fit(args.in_csv, args.rsu, args.min_distance, args.out)
        if args.command == "sweep":
            return cmd_sweep(
                args.in_csv, _parse_hidden_range(args.hidden), args.seeds, args.out
            )
        if args.command == "drive":
            return cmd_drive(args.config, args.out, args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (TooFewSamples, InsufficientAnchors, NoCoverage) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except VanetPosError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
