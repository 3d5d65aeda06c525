#!/usr/bin/env python3
"""
Command-line entry point for the cooperative sensing simulator.

    python coop_sensing.py sweep      --snr -20 -10 -5 --bs-count 2 3 4 --trials 1000
    python coop_sensing.py geometry   --theta-deg 30 90 150 --snr -5
    python coop_sensing.py single-trial --snr -5 --bs-count 3 --seed 7
    python coop_sensing.py theory     --snr -5

Exit codes: 0 success, 1 configuration error, 2 I/O error.
"""

import argparse
import logging
import sys
import time
from typing import List, Optional

import numpy as np

import config
import harness
import snr_theory
from echo_model import noise_variance_from_snr

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_IO_ERROR = 2
EXIT_FAILURE = 1  # shares the code of a configuration error

logger = logging.getLogger(__name__)


def setup_logging() -> None:
    """Setup logging configuration."""
    handlers = []

    if config.SAVE_LOG_FILE:
        handlers.append(logging.FileHandler(config.LOG_FILE))

    if config.VERBOSE_OUTPUT:
        handlers.append(logging.StreamHandler())

    if not handlers:
        handlers.append(logging.NullHandler())

    logging.basicConfig(
        level=logging.DEBUG if config.DEBUG_MODE else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='coop_sensing',
        description='Multi-BS cooperative OFDM sensing: Monte Carlo sweeps and SNR predictions.',
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='flat TOML file overriding config.py defaults')
    common.add_argument('--snr', type=float, nargs='+', help='element SNR values (dB)')
    common.add_argument('--bs-count', type=int, nargs='+', help='numbers of BSs')
    common.add_argument('--theta-deg', type=float, nargs='+', help='angles between the two BSs (deg)')
    common.add_argument('--trials', type=int, help='Monte Carlo trials per sweep point')
    common.add_argument('--seed', type=int, help='master seed')
    common.add_argument('--mode', nargs='+', choices=config.VALID_MODES, help='fusion modes to run')
    common.add_argument('--noiseless', action='store_true', help='synthesize echoes without noise')
    common.add_argument('--out', help='CSV output path')
    common.add_argument('--workers', type=int, help='worker processes (1 runs inline)')

    sub = parser.add_subparsers(dest='command', required=True)
    sub.add_parser('sweep', parents=[common], help='RMSE over SNR x BS count')
    sub.add_parser('geometry', parents=[common], help='two-BS RMSE over the angle between the BSs')
    single = sub.add_parser('single-trial', parents=[common], help='run and print one trial')
    single.add_argument('--trial', type=int, default=0, help='trial index within the point')
    sub.add_parser('theory', parents=[common], help='print analytic SNR predictions')
    return parser


def apply_arguments(args: argparse.Namespace) -> None:
    """Layer config file and command-line flags over config.py, then validate."""
    if args.config:
        config.apply_config_file(args.config)

    overrides = {
        'SNR_DB': args.snr,
        'BS_COUNTS': args.bs_count,
        'THETA_DEG': args.theta_deg,
        'TRIALS': args.trials,
        'MASTER_SEED': args.seed,
        'FUSION_MODES': args.mode,
        'WORKERS': args.workers,
    }
    for name, value in overrides.items():
        if value is not None:
            setattr(config, name, value)
    if args.noiseless:
        config.NOISELESS = True
    if args.out:
        if args.command == 'geometry':
            config.GEOMETRY_OUTPUT_CSV = args.out
        else:
            config.OUTPUT_CSV = args.out

    config.validate_config()


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = harness.ExperimentSpec.from_config()
    runner = harness.SweepRunner(spec)
    start = time.time()
    rows = runner.run_points(harness.sweep_points(spec))
    path = harness.aggregate_and_emit(rows, spec.output_path)
    logger.info(f"Sweep finished in {time.time() - start:.1f} s")

    print(f"\n✅ Sweep completed successfully!")
    print(f"📄 Results saved to: {path}")
    print(f"📊 Trials run: {runner.completed_trials}")
    if runner.failed_trials:
        print(f"⚠️  Trials with a failed fusion mode: {runner.failed_trials}")
    return EXIT_OK


def cmd_geometry(args: argparse.Namespace) -> int:
    spec = harness.ExperimentSpec.from_config(output_path=config.GEOMETRY_OUTPUT_CSV)
    runner = harness.SweepRunner(spec)
    rows = runner.run_points(harness.geometry_points(spec))
    path = harness.aggregate_and_emit(rows, spec.output_path)

    print(f"\n✅ Geometry study completed successfully!")
    print(f"📄 Results saved to: {path}")
    for mode in spec.modes:
        metric = 'range_rmse_m' if mode == 'single' else 'location_rmse_m'
        print(f"📐 [{mode}] lowest {metric} at theta = {harness.best_angle(rows, mode, metric):g} deg")
    if runner.failed_trials:
        print(f"⚠️  Trials with a failed fusion mode: {runner.failed_trials}")
    return EXIT_OK


def cmd_single_trial(args: argparse.Namespace) -> int:
    spec = harness.ExperimentSpec.from_config(workers=1, show_progress=False)
    points = harness.geometry_points(spec) if args.theta_deg else harness.sweep_points(spec)
    point = points[0]

    scenario = harness.make_scenario(spec, point, args.trial)
    variances = harness.calibrate_mle_variances(spec, point) if 'mle' in spec.modes else None
    results = harness.run_trial(spec, point, args.trial, variances)

    print(f"🎯 {point.label}, trial {args.trial}{' (noiseless)' if spec.noiseless else ''}")
    print(f"  BS positions (m):  {np.round(scenario.bs_positions, 3).tolist()}")
    print(f"  target (m):        {np.round(scenario.target_position, 4).tolist()}")
    print(f"  velocity (m/s):    {np.round(scenario.target_velocity, 4).tolist()}")
    print(f"  true ranges (m):   {np.round(scenario.true_ranges, 4).tolist()}")
    print(f"  true radial (m/s): {np.round(scenario.true_radial_velocities, 4).tolist()}")
    for result in results.values():
        print(result.describe())
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    variants = [tuple(v) for v in config.NC_NS_VARIANTS] or [(config.N_C, config.N_S)]
    for n_c, n_s in variants:
        print(f"\n📐 N_c = {n_c}, N_s = {n_s}: fusion gain factor "
              f"{snr_theory.fusion_gain_factor(n_c, n_s):.4f}")
        for snr in config.SNR_DB:
            prediction = snr_theory.predict(n_c, n_s, noise_variance_from_snr(snr))
            print(f"  SNR {snr:g} dB")
            for name, value in prediction.as_rows()[2:]:
                print(f"    {name:<24} {value:.6g}")
    return EXIT_OK


COMMANDS = {
    'sweep': cmd_sweep,
    'geometry': cmd_geometry,
    'single-trial': cmd_single_trial,
    'theory': cmd_theory,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to run the simulator."""
    args = build_parser().parse_args(argv)
    try:
        apply_arguments(args)
        setup_logging()
        return COMMANDS[args.command](args)

    except ValueError as e:
        print(f"❌ Configuration error: {e}")
        print("\n📋 Setup checklist:")
        print("1. Check the values in config.py or in the file passed with --config")
        print("2. Compare your config file with config_template.toml")
        return EXIT_CONFIG_ERROR

    except OSError as e:
        print(f"❌ I/O error: {e}")
        logging.error(f"I/O error in main: {e}")
        return EXIT_IO_ERROR

    except Exception as e:
        print(f"❌ Fatal error: {e}")
        logging.error(f"Fatal error in main: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
