"""
Echo model in the demodulation-symbol domain.

Each BS sees its own echo as an N_c x N_s grid of demodulation symbols. After
dividing out the known transmit symbols only the channel structure is left:

    B[m, n] = U * exp(-j 2pi m df 2R / C) * exp(+j 2pi f_c 2v n T / C) + noise

with m the subcarrier index, n the symbol index (both from 0) and v the radial
velocity, positive when the target closes on the BS. The common phases of the
carrier, phi_0 and T_0 are folded into the complex gain U.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

import config
from geometry import DegenerateGeometryError, as_point, as_points, unit_vectors

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = config.SPEED_OF_LIGHT


@dataclass(frozen=True)
class OfdmConfig:
    """Carrier, subcarrier and symbol parameters of the ISAC waveform."""

    carrier_frequency: float  # f_c (Hz)
    n_c: int  # subcarriers
    n_s: int  # OFDM symbols
    bandwidth: float  # B (Hz)
    symbol_duration: float  # T, incl. cyclic prefix (s)
    first_symbol_time: float = 0.0  # T_0 (s)
    initial_phase: float = 0.0  # phi_0 (rad)

    def __post_init__(self):
        if self.n_c < 2 or self.n_s < 2:
            raise ValueError(f"N_c and N_s must be >= 2, got N_c={self.n_c}, N_s={self.n_s}")
        for name in ('carrier_frequency', 'bandwidth', 'symbol_duration'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value}")
        if self.first_symbol_time < 0:
            raise ValueError(f"first_symbol_time must be >= 0, got {self.first_symbol_time}")
        # small slack for decimal round-off in T vs 1/df
        if self.symbol_duration < self.elementary_duration * (1 - 1e-12):
            raise ValueError(
                f"symbol_duration {self.symbol_duration} is shorter than 1/df = {self.elementary_duration}"
            )

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.n_c

    @property
    def elementary_duration(self) -> float:
        """T_s, the symbol duration without cyclic prefix."""
        return 1.0 / self.subcarrier_spacing

    @classmethod
    def from_config(cls, n_c: Optional[int] = None, n_s: Optional[int] = None) -> 'OfdmConfig':
        return cls(
            carrier_frequency=config.CARRIER_FREQUENCY_HZ,
            n_c=n_c or config.N_C,
            n_s=n_s or config.N_S,
            bandwidth=config.BANDWIDTH_HZ,
            symbol_duration=config.SYMBOL_DURATION_S,
            first_symbol_time=config.FIRST_SYMBOL_TIME_S,
            initial_phase=config.INITIAL_PHASE_RAD,
        )

    def with_sizes(self, n_c: int, n_s: int) -> 'OfdmConfig':
        """Same subcarrier spacing and symbol timing on another resource grid; B scales with N_c."""
        return OfdmConfig(self.carrier_frequency, n_c, n_s, self.subcarrier_spacing * n_c, self.symbol_duration,
                          self.first_symbol_time, self.initial_phase)


def range_resolution(cfg: OfdmConfig) -> float:
    return SPEED_OF_LIGHT / (2 * cfg.bandwidth)


def velocity_resolution(cfg: OfdmConfig) -> float:
    return SPEED_OF_LIGHT / (2 * cfg.carrier_frequency * cfg.n_s * cfg.symbol_duration)


def max_unambiguous_range(cfg: OfdmConfig) -> float:
    """Range period of the subcarrier phase ramp."""
    return SPEED_OF_LIGHT / (2 * cfg.subcarrier_spacing)


def max_unambiguous_velocity(cfg: OfdmConfig) -> float:
    """Width of the radial-velocity interval before the symbol phase ramp wraps."""
    return SPEED_OF_LIGHT / (2 * cfg.carrier_frequency * cfg.symbol_duration)


@dataclass
class Scenario:
    """BS layout, target state and per-BS channel of one trial."""

    bs_positions: np.ndarray
    target_position: np.ndarray
    target_velocity: np.ndarray
    channel_gains: Optional[np.ndarray] = None  # U_w, default all 1
    noise_variance: Optional[np.ndarray] = None  # sigma_w^2, used when no SNR is given
    rng_seed: int = 0
    true_ranges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.bs_positions = as_points(self.bs_positions)
        self.target_position = as_point(self.target_position)
        self.target_velocity = as_point(self.target_velocity)
        w = len(self.bs_positions)
        if w < 1:
            raise ValueError("Scenario needs at least one BS")
        if len(np.unique(self.bs_positions, axis=0)) != w:
            raise ValueError("BS positions must be pairwise distinct")

        if self.channel_gains is None:
            self.channel_gains = np.ones(w, dtype=complex)
        self.channel_gains = np.asarray(self.channel_gains, dtype=complex)
        if self.channel_gains.shape != (w,):
            raise ValueError(f"Need one channel gain per BS ({w}), got {self.channel_gains.shape}")
        if self.noise_variance is not None:
            self.noise_variance = np.asarray(self.noise_variance, dtype=float)
            if self.noise_variance.shape != (w,) or np.any(self.noise_variance < 0):
                raise ValueError("noise_variance must hold one non-negative value per BS")

        self.true_ranges = np.linalg.norm(self.bs_positions - self.target_position, axis=1)
        if np.any(self.true_ranges == 0):
            raise DegenerateGeometryError("Target coincides with a BS")

    @property
    def bs_count(self) -> int:
        return len(self.bs_positions)

    @property
    def true_radial_velocities(self) -> np.ndarray:
        return unit_vectors(self.target_position, self.bs_positions) @ self.target_velocity


@dataclass
class EchoSymbolMatrix:
    """Communication-stripped demodulation symbols B_w (N_c rows x N_s columns)."""

    entries: np.ndarray
    bs_index: int

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        if self.entries.ndim != 2:
            raise ValueError(f"Echo matrix must be 2-D, got shape {self.entries.shape}")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.entries.shape


def true_radial_velocity(scenario: Scenario, bs_index: int) -> float:
    """Projection of the target velocity on the direction from target to BS (closing > 0)."""
    _check_bs_index(scenario, bs_index)
    direction = unit_vectors(scenario.target_position, scenario.bs_positions[bs_index:bs_index + 1])[0]
    return float(direction @ scenario.target_velocity)


def noise_variance_from_snr(snr_db: float, gain=1.0) -> float:
    """sigma^2 giving the requested per-element SNR for a signal of modulus |gain|."""
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    return float(abs(gain) ** 2 * 10.0 ** (-snr_db / 10.0))


def range_phasor(cfg: OfdmConfig, distance: float, sign: float = -1.0) -> np.ndarray:
    """exp(sign * j 2pi m df 2R / C) for m = 0..N_c-1."""
    m = np.arange(cfg.n_c)
    return np.exp(sign * 2j * np.pi * m * cfg.subcarrier_spacing * 2 * distance / SPEED_OF_LIGHT)


def doppler_phasor(cfg: OfdmConfig, radial_velocity: float, sign: float = 1.0) -> np.ndarray:
    """exp(sign * j 2pi f_c 2v n T / C) for n = 0..N_s-1."""
    n = np.arange(cfg.n_s)
    return np.exp(sign * 2j * np.pi * cfg.carrier_frequency * 2 * radial_velocity * n
                  * cfg.symbol_duration / SPEED_OF_LIGHT)


def noiseless_echo(cfg: OfdmConfig, distance: float, radial_velocity: float, gain=1.0) -> np.ndarray:
    """Signal part of B_w for a target at `distance` closing at `radial_velocity`."""
    return gain * np.outer(range_phasor(cfg, distance), doppler_phasor(cfg, radial_velocity))


def qpsk_symbols(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    """Unit-modulus QPSK payload."""
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * rng.integers(0, 4, size=shape)))


def echo_rng(scenario: Scenario, bs_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(scenario.rng_seed, spawn_key=(bs_index,)))


def synthesize_demodulation_symbols(cfg: OfdmConfig, scenario: Scenario, bs_index: int,
                                    snr_db: Optional[float] = None, noiseless: bool = False,
                                    ) -> Tuple[np.ndarray, np.ndarray]:
    """Received demodulation symbols and the transmit payload that produced them."""
    _check_bs_index(scenario, bs_index)
    rng = echo_rng(scenario, bs_index)
    gain = scenario.channel_gains[bs_index]

    signal = noiseless_echo(cfg, scenario.true_ranges[bs_index],
                            true_radial_velocity(scenario, bs_index), gain)
    tx = qpsk_symbols(rng, signal.shape)
    rx = tx * signal

    if not noiseless:
        if snr_db is not None:
            sigma2 = noise_variance_from_snr(snr_db, gain)
        elif scenario.noise_variance is not None:
            sigma2 = float(scenario.noise_variance[bs_index])
        else:
            raise ValueError("Either snr_db or scenario.noise_variance is required for a noisy echo")
        noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
        rx = rx + math.sqrt(sigma2 / 2) * noise
    return rx, tx


def strip_communication(rx: np.ndarray, tx: np.ndarray) -> np.ndarray:
    """Divide out the transmit symbols, leaving only channel phase structure."""
    if rx.shape != tx.shape:
        raise ValueError(f"Symbol grids differ in shape: {rx.shape} vs {tx.shape}")
    return rx / tx


def synthesize_echo(cfg: OfdmConfig, scenario: Scenario, bs_index: int,
                    snr_db: Optional[float] = None, noiseless: bool = False) -> EchoSymbolMatrix:
    """Noisy (or clean) echo symbol matrix B_w of BS `bs_index`."""
    rx, tx = synthesize_demodulation_symbols(cfg, scenario, bs_index, snr_db, noiseless)
    return EchoSymbolMatrix(strip_communication(rx, tx), bs_index)


def synthesize_all(cfg: OfdmConfig, scenario: Scenario, snr_db: Optional[float] = None,
                   noiseless: bool = False) -> Sequence[EchoSymbolMatrix]:
    return [synthesize_echo(cfg, scenario, w, snr_db, noiseless) for w in range(scenario.bs_count)]


def _check_bs_index(scenario: Scenario, bs_index: int) -> None:
    if not 0 <= bs_index < scenario.bs_count:
        raise ValueError(f"bs_index {bs_index} out of range for {scenario.bs_count} BSs")
