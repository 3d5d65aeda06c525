"""
Monte Carlo experiment driver.

A sweep point fixes SNR, BS count (or the two-BS angle) and the resource grid
size. Every trial of a point synthesizes one echo per BS, runs the single-BS
preprocessing once and hands the same reports to each fusion mode:

    single  coarse range / radial velocity of each BS on its own
    symbol  symbol-level lattice fusion of the E / F feature vectors
    mle     Gaussian MLE over the same lattices from the coarse estimates

Errors are reduced to RMSE rows in trial-index order, so the output does not
depend on the worker count.
"""

import csv
import functools
import itertools
import logging
import math
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import config
from echo_model import OfdmConfig, Scenario, synthesize_all
from fusion_location import LatticeParams, SensingRegion, search_location
from fusion_velocity import search_velocity
from geometry import GeometryError, as_points, distances, unit_vectors
from mle_baseline import mle_fuse
from single_bs import BsReport, SearchGrid, SingleBsProcessor

logger = logging.getLogger(__name__)

METRICS = {
    'single': ('range_rmse_m', 'radial_velocity_rmse_mps'),
    'symbol': ('location_rmse_m', 'velocity_rmse_mps', 'range_rmse_m', 'radial_velocity_rmse_mps'),
    'mle': ('location_rmse_m', 'velocity_rmse_mps', 'range_rmse_m', 'radial_velocity_rmse_mps'),
}
CSV_HEADER = ['mode', 'metric', 'snr_db', 'bs_count', 'theta_deg', 'nc', 'ns', 'trials', 'failures', 'rmse']

# first spawn-key entry of each random stream
_SCENARIO_STREAM = 0
_CALIBRATION_STREAM = 1
# second entry: which study the point belongs to
_SWEEP_STUDY = 0
_GEOMETRY_STUDY = 1


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything a worker needs to run trials; built once from config."""

    snr_db: Tuple[float, ...]
    bs_counts: Tuple[int, ...]
    theta_deg: Tuple[float, ...]
    variants: Tuple[Tuple[int, int], ...]
    trials: int
    modes: Tuple[str, ...]
    master_seed: int
    ofdm: OfdmConfig
    grid: SearchGrid
    location_params: LatticeParams
    velocity_params: LatticeParams
    region: SensingRegion
    output_path: str = config.OUTPUT_CSV
    noiseless: bool = False
    workers: int = 1
    calibration_trials: int = 200
    bs_positions: Optional[Tuple[Tuple[float, float], ...]] = None  # explicit layout, else the arc
    bs_radius: float = 200.0
    zone_min: Tuple[float, float] = (0.0, 0.0)
    zone_max: Tuple[float, float] = (10.0, 10.0)
    target_speed: float = 27.0
    gain_magnitude: float = 1.0
    channel_gains: Optional[Tuple[float, ...]] = None  # per-BS |U_w|, else gain_magnitude
    target_position: Optional[Tuple[float, float]] = None  # fixed target, else drawn from the zone
    target_velocity: Optional[Tuple[float, float]] = None
    continue_on_error: bool = True
    save_weight_grids: bool = False
    weight_grid_dir: str = config.WEIGHT_GRID_DIR
    show_progress: bool = True

    def __post_init__(self):
        errors = []
        if self.trials < 1:
            errors.append(f"trials must be at least 1, got {self.trials}")
        for name in ('snr_db', 'bs_counts', 'theta_deg', 'variants', 'modes'):
            if not getattr(self, name):
                errors.append(f"sweep axis '{name}' must not be empty")
        unknown = [m for m in self.modes if m not in METRICS]
        if unknown:
            errors.append(f"unknown fusion modes {unknown}")
        if any(not math.isfinite(s) for s in self.snr_db):
            errors.append("SNR values must be finite")
        if self.bs_positions is not None and max(self.bs_counts, default=0) > len(self.bs_positions):
            errors.append(f"BS count {max(self.bs_counts)} exceeds the {len(self.bs_positions)} configured BSs")
        if self.channel_gains is not None and len(self.channel_gains) < max(self.bs_counts, default=0):
            errors.append(f"{len(self.channel_gains)} channel gains for up to {max(self.bs_counts)} BSs")
        if errors:
            raise ValueError("Invalid experiment:\n" + "\n".join(f"- {e}" for e in errors))

    @classmethod
    def from_config(cls, **overrides) -> 'ExperimentSpec':
        ofdm = OfdmConfig.from_config()
        variants = tuple(tuple(v) for v in config.NC_NS_VARIANTS) or ((ofdm.n_c, ofdm.n_s),)
        bs_positions = tuple(zip(config.BS_X, config.BS_Y)) or None
        spec = cls(
            snr_db=tuple(config.SNR_DB),
            bs_counts=tuple(config.BS_COUNTS),
            theta_deg=tuple(config.THETA_DEG),
            variants=variants,
            trials=config.TRIALS,
            modes=tuple(config.FUSION_MODES),
            master_seed=config.MASTER_SEED,
            ofdm=ofdm,
            grid=SearchGrid.from_config(),
            location_params=LatticeParams.for_location(),
            velocity_params=LatticeParams.for_velocity(),
            region=SensingRegion.from_config(),
            output_path=config.OUTPUT_CSV,
            noiseless=config.NOISELESS,
            workers=config.WORKERS,
            calibration_trials=config.MLE_CALIBRATION_TRIALS,
            bs_positions=bs_positions,
            bs_radius=config.BS_RADIUS_M,
            zone_min=tuple(config.TARGET_ZONE_MIN),
            zone_max=tuple(config.TARGET_ZONE_MAX),
            target_speed=config.TARGET_SPEED_MPS,
            gain_magnitude=config.CHANNEL_GAIN_MAGNITUDE,
            channel_gains=tuple(config.CHANNEL_GAINS) or None,
            target_position=tuple(config.TARGET_POSITION) or None,
            target_velocity=tuple(config.TARGET_VELOCITY) or None,
            continue_on_error=config.CONTINUE_ON_ERROR,
            save_weight_grids=config.SAVE_WEIGHT_GRIDS,
            weight_grid_dir=config.WEIGHT_GRID_DIR,
            show_progress=config.VERBOSE_OUTPUT,
        )
        return replace(spec, **overrides) if overrides else spec

    @property
    def zone_center(self) -> np.ndarray:
        return (np.asarray(self.zone_min) + np.asarray(self.zone_max)) / 2


@dataclass(frozen=True)
class SweepPoint:
    snr_db: float
    bs_count: int
    n_c: int
    n_s: int
    theta_deg: Optional[float] = None  # set for the two-BS geometry study
    indices: Tuple[int, ...] = ()  # axis indices the random streams are keyed on

    @property
    def label(self) -> str:
        label = f"snr{self.snr_db:g}_w{self.bs_count}_nc{self.n_c}_ns{self.n_s}"
        return label if self.theta_deg is None else f"{label}_theta{self.theta_deg:g}"


@dataclass
class EstimationResult:
    """One fusion mode's output for one trial, with errors against ground truth."""

    mode: str
    errors: Dict[str, np.ndarray] = field(default_factory=dict)
    location: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None
    ranges: Optional[np.ndarray] = None
    radial_velocities: Optional[np.ndarray] = None
    failure: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.failure is not None

    def describe(self) -> str:
        if self.failed:
            return f"[{self.mode}] failed: {self.failure}"
        lines = [f"[{self.mode}]"]
        if self.location is not None:
            lines.append(f"  location (m):    {np.round(self.location, 4).tolist()}")
            lines.append(f"  velocity (m/s):  {np.round(self.velocity, 4).tolist()}")
        lines.append(f"  ranges (m):      {np.round(self.ranges, 4).tolist()}")
        lines.append(f"  radial v (m/s):  {np.round(self.radial_velocities, 4).tolist()}")
        for metric, err in self.errors.items():
            lines.append(f"  {metric.replace('_rmse', '_error')}: {np.round(err, 4).tolist()}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ResultRow:
    mode: str
    metric: str
    snr_db: float
    bs_count: int
    theta_deg: Optional[float]
    nc: int
    ns: int
    trials: int
    failures: int
    rmse: float

    @property
    def key(self) -> tuple:
        return (self.mode, self.metric, self.snr_db, self.bs_count, self.theta_deg, self.nc, self.ns)

    def sort_key(self) -> tuple:
        theta = -1.0 if self.theta_deg is None else self.theta_deg
        return (self.mode, self.metric, self.nc, self.ns, self.bs_count, theta, self.snr_db)

    def to_csv(self) -> List[str]:
        theta = '' if self.theta_deg is None else f"{self.theta_deg:.6g}"
        return [self.mode, self.metric, f"{self.snr_db:.6g}", str(self.bs_count), theta,
                str(self.nc), str(self.ns), str(self.trials), str(self.failures), f"{self.rmse:.6g}"]


def default_bs_layout(bs_count: int, center, radius: float, theta_deg: Optional[float] = None) -> np.ndarray:
    """BSs on a circle around the target zone.

    Two BSs sit 90 degrees apart (or `theta_deg` apart); three or more are spread evenly.
    """
    if bs_count < 1:
        raise ValueError(f"Need at least one BS, got {bs_count}")
    if theta_deg is not None:
        if bs_count != 2:
            raise ValueError("The angle study places exactly two BSs")
        angles = np.radians([0.0, theta_deg])
    elif bs_count == 2:
        angles = np.radians([0.0, 90.0])
    else:
        angles = 2 * np.pi * np.arange(bs_count) / bs_count
    return np.asarray(center, dtype=float) + radius * np.column_stack([np.cos(angles), np.sin(angles)])


def bs_layout(spec: ExperimentSpec, point: SweepPoint) -> np.ndarray:
    if point.theta_deg is None and spec.bs_positions is not None:
        return as_points(spec.bs_positions[:point.bs_count])
    return default_bs_layout(point.bs_count, spec.zone_center, spec.bs_radius, point.theta_deg)


def _rng(spec: ExperimentSpec, stream: int, point: SweepPoint, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(spec.master_seed,
                                                        spawn_key=(stream, *point.indices, trial)))


def make_scenario(spec: ExperimentSpec, point: SweepPoint, trial: int, stream: int = _SCENARIO_STREAM) -> Scenario:
    """Random target state and channel of one trial, keyed on (seed, point, trial).

    A fixed target position, velocity or per-BS gain magnitude from the experiment replaces the
    drawn one; the random stream is consumed the same way either way.
    """
    rng = _rng(spec, stream, point, trial)
    position = rng.uniform(spec.zone_min, spec.zone_max)
    heading = rng.uniform(0, 2 * np.pi)
    velocity = spec.target_speed * np.array([np.cos(heading), np.sin(heading)])
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, point.bs_count))
    if spec.target_position is not None:
        position = np.asarray(spec.target_position, dtype=float)
    if spec.target_velocity is not None:
        velocity = np.asarray(spec.target_velocity, dtype=float)
    if spec.channel_gains is None:
        magnitudes = np.full(point.bs_count, spec.gain_magnitude)
    elif len(spec.channel_gains) < point.bs_count:
        raise ValueError(f"{len(spec.channel_gains)} channel gains for {point.bs_count} BSs")
    else:
        magnitudes = np.asarray(spec.channel_gains[:point.bs_count], dtype=float)
    gains = magnitudes * phases
    return Scenario(bs_layout(spec, point), position, velocity, channel_gains=gains,
                    rng_seed=int(rng.integers(2 ** 63)))


@functools.lru_cache(maxsize=8)
def _processor(grid: SearchGrid, cfg: OfdmConfig) -> SingleBsProcessor:
    return SingleBsProcessor(grid, cfg)


def _trial_reports(spec: ExperimentSpec, point: SweepPoint, trial: int,
                   stream: int = _SCENARIO_STREAM) -> Tuple[Scenario, OfdmConfig, List[BsReport]]:
    cfg = spec.ofdm.with_sizes(point.n_c, point.n_s)
    scenario = make_scenario(spec, point, trial, stream)
    echoes = synthesize_all(cfg, scenario, None if spec.noiseless else point.snr_db, spec.noiseless)
    processor = _processor(spec.grid, cfg)
    return scenario, cfg, [processor.preprocess(b) for b in echoes]


def _fused_result(mode: str, scenario: Scenario, location, velocity) -> EstimationResult:
    bs = scenario.bs_positions
    ranges = distances(bs, location)
    radial = unit_vectors(location, bs) @ velocity
    return EstimationResult(
        mode=mode,
        location=location,
        velocity=velocity,
        ranges=ranges,
        radial_velocities=radial,
        errors={
            'location_rmse_m': np.atleast_1d(np.linalg.norm(location - scenario.target_position)),
            'velocity_rmse_mps': np.atleast_1d(np.linalg.norm(velocity - scenario.target_velocity)),
            'range_rmse_m': ranges - scenario.true_ranges,
            'radial_velocity_rmse_mps': radial - scenario.true_radial_velocities,
        },
    )


def _save_weight_grids(spec: ExperimentSpec, point: SweepPoint, location_search, velocity_search) -> None:
    stem = Path(spec.weight_grid_dir) / point.label
    try:
        location_search.save_weight_grid(stem.with_name(f"{stem.name}_location"))
        velocity_search.save_weight_grid(stem.with_name(f"{stem.name}_velocity"))
    except OSError as e:
        logger.warning(f"Failed to save weight grids for {point.label}: {e}")


def _run_mode(mode: str, spec: ExperimentSpec, point: SweepPoint, trial: int, scenario: Scenario,
              cfg: OfdmConfig, reports: Sequence[BsReport], mle_variances) -> EstimationResult:
    bs = scenario.bs_positions
    if mode == 'single':
        ranges = np.array([r.r_test for r in reports])
        radial = np.array([r.v_test for r in reports])
        return EstimationResult(mode, ranges=ranges, radial_velocities=radial, errors={
            'range_rmse_m': ranges - scenario.true_ranges,
            'radial_velocity_rmse_mps': radial - scenario.true_radial_velocities,
        })
    if scenario.bs_count < 2:
        return EstimationResult(mode, failure="fusion needs at least 2 BSs")

    if mode == 'symbol':
        location_search = search_location(reports, bs, cfg, spec.location_params, region=spec.region)
        location = location_search.best_point
        velocity_search = search_velocity(reports, location, bs, cfg, spec.velocity_params)
        if spec.save_weight_grids and trial == 0:
            _save_weight_grids(spec, point, location_search, velocity_search)
        return _fused_result(mode, scenario, location, velocity_search.best_point)

    if mle_variances is None:
        raise ValueError("MLE mode needs calibrated variances")
    range_var, velocity_var = mle_variances
    location, velocity = mle_fuse(reports, bs, range_var, velocity_var, spec.location_params,
                                  spec.velocity_params, spec.region)
    return _fused_result(mode, scenario, location, velocity)


def run_trial(spec: ExperimentSpec, point: SweepPoint, trial: int,
              mle_variances: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Dict[str, EstimationResult]:
    """Echoes, preprocessing and every enabled fusion mode for one trial."""
    scenario, cfg, reports = _trial_reports(spec, point, trial)
    results = {}
    for mode in spec.modes:
        try:
            results[mode] = _run_mode(mode, spec, point, trial, scenario, cfg, reports, mle_variances)
        except GeometryError as e:
            logger.debug(f"{point.label} trial {trial}, {mode}: {e}")
            results[mode] = EstimationResult(mode, failure=str(e))
    return results


def _guarded_trial(spec: ExperimentSpec, point: SweepPoint, mle_variances, trial: int) -> Dict[str, EstimationResult]:
    try:
        return run_trial(spec, point, trial, mle_variances)
    except Exception as e:
        if not spec.continue_on_error:
            raise
        logger.error(f"{point.label} trial {trial} failed: {e}")
        return {mode: EstimationResult(mode, failure=f"unexpected error: {e}") for mode in spec.modes}


def _calibration_errors(spec: ExperimentSpec, point: SweepPoint, trial: int) -> Tuple[np.ndarray, np.ndarray]:
    scenario, _, reports = _trial_reports(spec, point, trial, stream=_CALIBRATION_STREAM)
    return (np.array([r.r_test for r in reports]) - scenario.true_ranges,
            np.array([r.v_test for r in reports]) - scenario.true_radial_velocities)


def _floored_variances(range_errors: np.ndarray, velocity_errors: np.ndarray,
                       grid: SearchGrid) -> Tuple[np.ndarray, np.ndarray]:
    # grid quantisation alone leaves step^2 / 12
    range_var = np.maximum(np.mean(range_errors ** 2, axis=0), grid.range_step ** 2 / 12)
    velocity_var = np.maximum(np.mean(velocity_errors ** 2, axis=0), grid.velocity_step ** 2 / 12)
    return range_var, velocity_var


def calibrate_mle_variances(spec: ExperimentSpec, point: SweepPoint,
                            executor: Optional[Executor] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Per-BS mean squared coarse-estimate errors from trials independent of the measured ones."""
    mapper = executor.map if executor is not None else map
    errors = list(mapper(functools.partial(_calibration_errors, spec, point), range(spec.calibration_trials)))
    range_var, velocity_var = _floored_variances(np.array([e[0] for e in errors]),
                                                 np.array([e[1] for e in errors]), spec.grid)
    logger.debug(f"{point.label} MLE variances: range={range_var.round(6).tolist()}, "
                 f"velocity={velocity_var.round(6).tolist()}")
    return range_var, velocity_var


def summarize_point(spec: ExperimentSpec, point: SweepPoint,
                    outcomes: Sequence[Dict[str, EstimationResult]]) -> List[ResultRow]:
    rows = []
    for mode in spec.modes:
        results = [o[mode] for o in outcomes]
        succeeded = [r for r in results if not r.failed]
        for metric in METRICS[mode]:
            if succeeded:
                squared = np.concatenate([r.errors[metric] for r in succeeded]) ** 2
                rmse = float(np.sqrt(np.mean(squared)))
            else:
                rmse = float('nan')
            rows.append(ResultRow(mode, metric, point.snr_db, point.bs_count, point.theta_deg,
                                  point.n_c, point.n_s, len(results), len(results) - len(succeeded), rmse))
    return rows


class SweepRunner:
    """Runs sweep points trial by trial on a worker pool and keeps the trial counters."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        self.completed_trials = 0
        self.failed_trials = 0

    def run_point(self, point: SweepPoint, executor: Optional[Executor] = None) -> List[ResultRow]:
        spec = self.spec
        logger.info(f"Running {point.label} ({spec.trials} trials)")
        variances = calibrate_mle_variances(spec, point, executor) if 'mle' in spec.modes else None

        mapper = executor.map if executor is not None else map
        trial_fn = functools.partial(_guarded_trial, spec, point, variances)
        outcomes = list(tqdm(mapper(trial_fn, range(spec.trials)), total=spec.trials,
                             desc=point.label, disable=not spec.show_progress, leave=False))

        self.completed_trials += len(outcomes)
        self.failed_trials += sum(any(r.failed for r in o.values()) for o in outcomes)
        return summarize_point(spec, point, outcomes)

    def run_points(self, points: Iterable[SweepPoint]) -> List[ResultRow]:
        points = list(points)
        rows: List[ResultRow] = []
        if self.spec.workers <= 1:
            for point in points:
                rows.extend(self.run_point(point))
            return rows
        with ProcessPoolExecutor(max_workers=self.spec.workers) as executor:
            for point in points:
                rows.extend(self.run_point(point, executor))
        return rows


def sweep_points(spec: ExperimentSpec) -> List[SweepPoint]:
    return [
        SweepPoint(snr, w, nc, ns, indices=(_SWEEP_STUDY, vi, wi, si))
        for (vi, (nc, ns)), (wi, w), (si, snr) in itertools.product(
            enumerate(spec.variants), enumerate(spec.bs_counts), enumerate(spec.snr_db))
    ]


def geometry_points(spec: ExperimentSpec) -> List[SweepPoint]:
    return [
        SweepPoint(snr, 2, nc, ns, theta_deg=theta, indices=(_GEOMETRY_STUDY, vi, ti, si))
        for (vi, (nc, ns)), (ti, theta), (si, snr) in itertools.product(
            enumerate(spec.variants), enumerate(spec.theta_deg), enumerate(spec.snr_db))
    ]


def run_sweep(spec: ExperimentSpec) -> List[ResultRow]:
    """RMSE rows over the SNR x BS-count x grid-size axes."""
    return SweepRunner(spec).run_points(sweep_points(spec))


def run_geometry_sweep(spec: ExperimentSpec) -> List[ResultRow]:
    """RMSE rows of the two-BS study over the angle between the BSs."""
    return SweepRunner(spec).run_points(geometry_points(spec))


def best_angle(rows: Sequence[ResultRow], mode: str = 'symbol', metric: str = 'location_rmse_m') -> float:
    """Angle with the lowest RMSE, averaged over the other axes."""
    by_theta: Dict[float, List[float]] = {}
    for row in rows:
        if row.mode == mode and row.metric == metric and row.theta_deg is not None and not math.isnan(row.rmse):
            by_theta.setdefault(row.theta_deg, []).append(row.rmse)
    if not by_theta:
        raise ValueError(f"No geometry rows for mode '{mode}' and metric '{metric}'")
    return min(sorted(by_theta), key=lambda theta: float(np.mean(by_theta[theta])))


def aggregate_and_emit(rows: Sequence[ResultRow], path, show_summary: bool = True) -> Path:
    """Write rows as CSV (sorted, LF line endings) and print a summary table."""
    seen = set()
    for row in rows:
        if row.key in seen:
            raise ValueError(f"Duplicate result point {row.key}")
        seen.add(row.key)
    ordered = sorted(rows, key=ResultRow.sort_key)

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        writer.writerows(row.to_csv() for row in ordered)

    if show_summary and ordered:
        print(format_summary(ordered))
    logger.info(f"Wrote {len(ordered)} result rows to {path}")
    return path


def format_summary(rows: Sequence[ResultRow]) -> str:
    lines = [f"{'mode':<7} {'metric':<25} {'snr_db':>7} {'W':>2} {'theta':>6} "
             f"{'nc x ns':>9} {'fail':>5} {'rmse':>11}"]
    for row in rows:
        theta = '' if row.theta_deg is None else f"{row.theta_deg:g}"
        lines.append(f"{row.mode:<7} {row.metric:<25} {row.snr_db:>7g} {row.bs_count:>2} {theta:>6} "
                     f"{f'{row.nc}x{row.ns}':>9} {row.failures:>5} {row.rmse:>11.6g}")
    return "\n".join(lines)
