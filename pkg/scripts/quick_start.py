#!/usr/bin/env python3
"""
Quick start script: a small noisy sweep to check the setup.
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import config
from coop_sensing import setup_logging
from harness import ExperimentSpec, SweepRunner, aggregate_and_emit, sweep_points


def main():
    print("🚀 Quick Start Cooperative Sensing")
    print("=" * 40)

    try:
        config.validate_config()
    except ValueError as e:
        print(f"❌ {e}")
        return
    setup_logging()

    spec = ExperimentSpec.from_config(
        snr_db=(-5.0,),
        bs_counts=(3,),
        variants=((32, 64),),
        trials=20,
        calibration_trials=20,
        workers=1,
    )
    runner = SweepRunner(spec)
    rows = runner.run_points(sweep_points(spec))
    path = aggregate_and_emit(rows, config.OUTPUT_DIR / 'quick_start.csv')

    if runner.failed_trials:
        print(f"⚠️  {runner.failed_trials} trials had a failed fusion mode. Check the logs for details.")
    print(f"✅ Quick start complete! Check {path}")


if __name__ == "__main__":
    main()
