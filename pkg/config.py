import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict

# --- PROJECT STRUCTURE ---
# Base project directory
PROJECT_DIR = Path(__file__).parent
OUTPUT_DIR = PROJECT_DIR / "output"
LOGS_DIR = OUTPUT_DIR / "logs"
DEBUG_DIR = OUTPUT_DIR / "debug"
BACKUP_DIR = OUTPUT_DIR / "backups"

# Create directories if they don't exist
for directory in [OUTPUT_DIR, LOGS_DIR, DEBUG_DIR]:
    directory.mkdir(exist_ok=True)

# --- PHYSICAL CONSTANTS ---
SPEED_OF_LIGHT = 299_792_458.0  # m/s, fixed

# --- OFDM WAVEFORM ---
CARRIER_FREQUENCY_HZ = 24e9  # f_c
BANDWIDTH_HZ = 93.1e6  # B; subcarrier spacing is B / N_c
N_C = 128  # subcarriers
N_S = 256  # OFDM symbols per frame
SYMBOL_DURATION_S = 12.375e-6  # T, full symbol duration incl. cyclic prefix
FIRST_SYMBOL_TIME_S = 0.0  # T_0
INITIAL_PHASE_RAD = 0.0  # phi_0

# --- SCENE ---
# Explicit BS coordinates (meters). Leave empty to use the arc layout below.
BS_X: list = []
BS_Y: list = []
BS_RADIUS_M = 200.0  # radius of the arc the default layout puts BSs on
TARGET_ZONE_MIN = [0.0, 0.0]  # target drawn uniformly from this box (m)
TARGET_ZONE_MAX = [10.0, 10.0]
TARGET_SPEED_MPS = 27.0  # speed only; heading is uniform random
CHANNEL_GAIN_MAGNITUDE = 1.0  # |U_w|; phase is uniform random per trial
CHANNEL_GAINS: list = []  # per-BS |U_w|, one per BS; empty -> CHANNEL_GAIN_MAGNITUDE for every BS
TARGET_POSITION: list = []  # fixed [x, y] for every trial; empty -> drawn from the target zone
TARGET_VELOCITY: list = []  # fixed [vx, vy] for every trial; empty -> TARGET_SPEED_MPS, random heading

# --- SINGLE-BS SEARCH GRID ---
# The range response repeats every C / (2 * B / N_c) ~ 206 m, keep the span below that.
RANGE_MIN_M = 100.0
RANGE_MAX_M = 300.0
RANGE_SAMPLES = 401  # K, endpoints included -> 0.5 m step
VELOCITY_MIN_MPS = -40.0
VELOCITY_MAX_MPS = 40.0
VELOCITY_SAMPLES = 321  # P, endpoints included -> 0.25 m/s step

# --- FUSION LATTICES ---
LOCATION_LATTICE_HALF_EXTENT_M = 5.0
LOCATION_LATTICE_SPACING_M = 0.1
VELOCITY_LATTICE_HALF_EXTENT_MPS = 3.0
VELOCITY_LATTICE_SPACING_MPS = 0.05
SENSING_CENTER = [5.0, 5.0]  # disambiguates the two-circle fix
SENSING_RADIUS_M = 50.0

# --- EXPERIMENTS ---
SNR_DB = [-20.0, -15.0, -10.0, -5.0]  # element SNR of the echo symbols
BS_COUNTS = [2, 3, 4]
THETA_DEG = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0]  # two-BS angle study
NC_NS_VARIANTS: list = []  # e.g. [[64, 128], [128, 256]]; empty -> only N_C x N_S
TRIALS = 1000  # Monte Carlo trials per sweep point
MASTER_SEED = 20240601
FUSION_MODES = ['symbol', 'mle', 'single']
MLE_CALIBRATION_TRIALS = 200  # trials used to estimate per-BS range/velocity variance
NOISELESS = False
WORKERS = os.cpu_count() or 1  # trial worker processes; 1 runs inline
OUTPUT_CSV = str(OUTPUT_DIR / 'results.csv')
GEOMETRY_OUTPUT_CSV = str(OUTPUT_DIR / 'geometry.csv')  # two-BS angle study

# --- GENERAL DEBUGGING AND LOGGING ---
DEBUG_MODE = False  # Set to True for verbose logging
VERBOSE_OUTPUT = True  # Progress bars and log lines on the console
SAVE_LOG_FILE = True  # Also write the log to LOG_FILE
LOG_FILE = str(LOGS_DIR / 'coop_sensing.log')
CONTINUE_ON_ERROR = True  # Count unexpected trial errors as failures instead of aborting
SAVE_WEIGHT_GRIDS = False  # Dump lattice weights of the first trial of each point
WEIGHT_GRID_DIR = str(DEBUG_DIR)

# Config-file keys are the lower-case names of the constants above.
_FILE_KEYS = [
    'CARRIER_FREQUENCY_HZ', 'BANDWIDTH_HZ', 'N_C', 'N_S', 'SYMBOL_DURATION_S',
    'FIRST_SYMBOL_TIME_S', 'INITIAL_PHASE_RAD',
    'BS_X', 'BS_Y', 'BS_RADIUS_M', 'TARGET_ZONE_MIN', 'TARGET_ZONE_MAX',
    'TARGET_SPEED_MPS', 'CHANNEL_GAIN_MAGNITUDE', 'CHANNEL_GAINS', 'TARGET_POSITION', 'TARGET_VELOCITY',
    'RANGE_MIN_M', 'RANGE_MAX_M', 'RANGE_SAMPLES',
    'VELOCITY_MIN_MPS', 'VELOCITY_MAX_MPS', 'VELOCITY_SAMPLES',
    'LOCATION_LATTICE_HALF_EXTENT_M', 'LOCATION_LATTICE_SPACING_M',
    'VELOCITY_LATTICE_HALF_EXTENT_MPS', 'VELOCITY_LATTICE_SPACING_MPS',
    'SENSING_CENTER', 'SENSING_RADIUS_M',
    'SNR_DB', 'BS_COUNTS', 'THETA_DEG', 'NC_NS_VARIANTS', 'TRIALS', 'MASTER_SEED',
    'FUSION_MODES', 'MLE_CALIBRATION_TRIALS', 'NOISELESS', 'WORKERS', 'OUTPUT_CSV', 'GEOMETRY_OUTPUT_CSV',
    'DEBUG_MODE', 'VERBOSE_OUTPUT', 'SAVE_LOG_FILE', 'LOG_FILE', 'CONTINUE_ON_ERROR',
    'SAVE_WEIGHT_GRIDS', 'WEIGHT_GRID_DIR',
]

VALID_MODES = ('symbol', 'mle', 'single')

# Config-file paths are relative to the project directory, not the working directory.
_PATH_KEYS = ['OUTPUT_CSV', 'GEOMETRY_OUTPUT_CSV', 'LOG_FILE', 'WEIGHT_GRID_DIR']


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a flat TOML config file and return UPPER_CASE overrides."""
    try:
        with open(path, 'rb') as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ValueError(f"Config file '{path}' is not valid TOML: {e}") from e

    overrides = {}
    errors = []
    for key, value in raw.items():
        name = key.upper()
        if isinstance(value, dict):
            errors.append(f"'{key}' is a table; the config file must be flat key = value")
        elif name not in _FILE_KEYS:
            errors.append(f"unknown key '{key}'")
        else:
            current = globals()[name]
            if isinstance(current, bool) != isinstance(value, bool):
                errors.append(f"'{key}' must be {type(current).__name__}")
            elif isinstance(current, list) and not isinstance(value, list):
                errors.append(f"'{key}' must be an array")
            elif isinstance(current, int) and not isinstance(current, bool) \
                    and not isinstance(value, int):
                errors.append(f"'{key}' must be an integer")
            elif isinstance(current, float) and not isinstance(value, (int, float)):
                errors.append(f"'{key}' must be a number")
            elif isinstance(current, str) and not isinstance(value, str):
                errors.append(f"'{key}' must be a string")
            else:
                overrides[name] = float(value) if isinstance(current, float) else value

    if errors:
        raise ValueError("Configuration errors found:\n" + "\n".join(f"- {e}" for e in errors))
    return overrides


def apply_config_file(path: str) -> Dict[str, Any]:
    """Load a config file into this module and validate the result."""
    overrides = load_config_file(path)
    for name in _PATH_KEYS:
        if name in overrides:
            overrides[name] = str(PROJECT_DIR / overrides[name])
    globals().update(overrides)
    validate_config()
    return overrides


# --- VALIDATION ---
def validate_config():
    """Validate configuration settings and provide helpful error messages."""
    errors = []

    for name in ['CARRIER_FREQUENCY_HZ', 'BANDWIDTH_HZ', 'SYMBOL_DURATION_S']:
        if not globals()[name] > 0:
            errors.append(f"{name} must be positive.")
    if FIRST_SYMBOL_TIME_S < 0:
        errors.append("FIRST_SYMBOL_TIME_S must not be negative.")
    if N_C < 2 or N_S < 2:
        errors.append("N_C and N_S must be at least 2.")
    elif BANDWIDTH_HZ > 0 and SYMBOL_DURATION_S < N_C / BANDWIDTH_HZ:
        errors.append("SYMBOL_DURATION_S is shorter than the elementary symbol 1 / subcarrier spacing.")

    if len(BS_X) != len(BS_Y):
        errors.append("BS_X and BS_Y must have the same length.")
    if len(TARGET_ZONE_MIN) != 2 or len(TARGET_ZONE_MAX) != 2:
        errors.append("TARGET_ZONE_MIN / TARGET_ZONE_MAX must be [x, y] pairs.")
    elif any(lo > hi for lo, hi in zip(TARGET_ZONE_MIN, TARGET_ZONE_MAX)):
        errors.append("TARGET_ZONE_MIN must not exceed TARGET_ZONE_MAX.")
    if CHANNEL_GAINS:
        # explicit layouts need an exact match; the arc layout needs enough for the largest BS count
        needed = len(BS_X) if BS_X else max([*BS_COUNTS, 2])
        if len(CHANNEL_GAINS) < needed or (BS_X and len(CHANNEL_GAINS) != needed):
            errors.append(f"CHANNEL_GAINS needs one value per BS ({needed}), got {len(CHANNEL_GAINS)}.")
        if any(not g > 0 for g in CHANNEL_GAINS):
            errors.append("CHANNEL_GAINS values must be positive.")
    for name in ['TARGET_POSITION', 'TARGET_VELOCITY']:
        if globals()[name] and len(globals()[name]) != 2:
            errors.append(f"{name} must be empty or an [x, y] pair.")

    if not RANGE_MAX_M > RANGE_MIN_M >= 0:
        errors.append("Range grid needs RANGE_MAX_M > RANGE_MIN_M >= 0.")
    if not VELOCITY_MAX_MPS > VELOCITY_MIN_MPS:
        errors.append("Velocity grid needs VELOCITY_MAX_MPS > VELOCITY_MIN_MPS.")
    if RANGE_SAMPLES < 2 or VELOCITY_SAMPLES < 2:
        errors.append("RANGE_SAMPLES and VELOCITY_SAMPLES must be at least 2.")

    for extent, spacing in [
        (LOCATION_LATTICE_HALF_EXTENT_M, LOCATION_LATTICE_SPACING_M),
        (VELOCITY_LATTICE_HALF_EXTENT_MPS, VELOCITY_LATTICE_SPACING_MPS),
    ]:
        if not spacing > 0 or extent < spacing:
            errors.append(f"Lattice needs spacing > 0 and half extent >= spacing (got {extent}, {spacing}).")
    if len(SENSING_CENTER) != 2 or not SENSING_RADIUS_M > 0:
        errors.append("SENSING_CENTER must be [x, y] and SENSING_RADIUS_M positive.")

    for name in ['SNR_DB', 'BS_COUNTS', 'THETA_DEG', 'FUSION_MODES']:
        if not globals()[name]:
            errors.append(f"{name} must not be empty.")
    if any(not math.isfinite(s) for s in SNR_DB):
        errors.append("SNR_DB values must be finite.")
    if any(w < 1 for w in BS_COUNTS):
        errors.append("BS_COUNTS values must be at least 1.")
    if any(not 0 < t < 180 for t in THETA_DEG):
        errors.append("THETA_DEG values must lie strictly between 0 and 180.")
    for variant in NC_NS_VARIANTS:
        if len(variant) != 2 or min(variant) < 2:
            errors.append(f"NC_NS_VARIANTS entry {variant} must be [N_c, N_s] with both >= 2.")
    unknown_modes = [m for m in FUSION_MODES if m not in VALID_MODES]
    if unknown_modes:
        errors.append(f"FUSION_MODES contains unknown modes {unknown_modes}; use {list(VALID_MODES)}.")
    if TRIALS < 1 or MLE_CALIBRATION_TRIALS < 1:
        errors.append("TRIALS and MLE_CALIBRATION_TRIALS must be at least 1.")
    if WORKERS < 1:
        errors.append("WORKERS must be at least 1.")

    if errors:
        error_msg = "Configuration errors found:\n" + "\n".join(f"- {error}" for error in errors)
        raise ValueError(error_msg)
