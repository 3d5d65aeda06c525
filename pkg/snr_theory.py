"""
Closed-form SNR predictions for the search and reconstruction steps, with the
Monte Carlo measurements they are checked against.

Signal modulus per echo element is taken as 1; for another |U| every SNR
scales by |U|^2.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from echo_model import OfdmConfig, doppler_phasor, noiseless_echo, range_phasor
from fusion_location import conjugate_lag_products

DEFAULT_NOISE_FLOOR = 100.0  # sigma^2 at -20 dB element SNR


def _check_positive(sigma2: float) -> None:
    if not sigma2 > 0:
        raise ValueError(f"Noise variance must be positive, got {sigma2}")


@dataclass(frozen=True)
class SnrPrediction:
    n_c: int
    n_s: int
    sigma2: float
    snr_2dfft: float
    snr_g_sum: float
    snr_gz_lower_bound: float
    harmonic_sum: float

    def as_rows(self):
        return [
            ('N_c', self.n_c),
            ('N_s', self.n_s),
            ('sigma^2', self.sigma2),
            ('2D search peak SNR', self.snr_2dfft),
            ('G-sum SNR', self.snr_g_sum),
            ('G-sum SNR lower bound', self.snr_gz_lower_bound),
            ('harmonic sum', self.harmonic_sum),
        ]


def predict_2dfft_snr(n_c: int, n_s: int, sigma2: float) -> float:
    """Peak SNR of the joint range/velocity search: coherent gain N_c * N_s."""
    _check_positive(sigma2)
    return n_c * n_s / sigma2


def harmonic_sum(n_c: int) -> float:
    """sum_{k=1}^{N_c-1} 1 / (N_c - k)."""
    return float(np.sum(1.0 / np.arange(1, n_c))) if n_c > 1 else 0.0


def harmonic_bound(n_c: int) -> float:
    return 1.0 + math.log(n_c - 1) if n_c > 1 else 1.0


def predict_G_sum_snr(n_c: int, n_s: int, sigma2: float) -> float:
    """SNR of the phase-aligned sum of the lag vector G, with the exact harmonic sum."""
    _check_positive(sigma2)
    if n_c < 2:
        raise ValueError(f"Lag vector needs N_c >= 2, got {n_c}")
    return (n_c - 1) ** 2 * n_s ** 2 / (sigma2 * (n_s + sigma2 / 2) * harmonic_sum(n_c))


def predict_G_sum_snr_bound(n_c: int, n_s: int, sigma2: float) -> float:
    """Lower bound on the G-sum SNR, replacing the harmonic sum by 1 + ln(N_c - 1)."""
    _check_positive(sigma2)
    if n_c < 2:
        raise ValueError(f"Lag vector needs N_c >= 2, got {n_c}")
    return (n_c - 1) ** 2 * n_s ** 2 / (sigma2 * (n_s + sigma2 / 2) * harmonic_bound(n_c))


def fusion_gain_factor(n_c: int, n_s: int, noise_floor: float = DEFAULT_NOISE_FLOOR) -> float:
    """Lower bound of (G-sum bound) / (2D search SNR) for sigma^2 <= noise_floor."""
    return (n_c - 2) * n_s / ((n_s + noise_floor / 2) * harmonic_bound(n_c))


def predict(n_c: int, n_s: int, sigma2: float) -> SnrPrediction:
    return SnrPrediction(
        n_c=n_c,
        n_s=n_s,
        sigma2=sigma2,
        snr_2dfft=predict_2dfft_snr(n_c, n_s, sigma2),
        snr_g_sum=predict_G_sum_snr(n_c, n_s, sigma2),
        snr_gz_lower_bound=predict_G_sum_snr_bound(n_c, n_s, sigma2),
        harmonic_sum=harmonic_sum(n_c),
    )


def gaussian_product_moments(means: Sequence[float], variances: Sequence[float]) -> Tuple[float, float]:
    """Fold the two-variable product rule over all inputs, left to right."""
    if len(means) != len(variances) or not means:
        raise ValueError("Need matching, non-empty means and variances")
    if any(not v > 0 for v in variances):
        raise ValueError(f"Variances must be positive, got {list(variances)}")
    mean, var = float(means[0]), float(variances[0])
    for u, d2 in zip(means[1:], variances[1:]):
        mean = (u * var + mean * d2) / (var + d2)
        var = var * d2 / (var + d2)
    return mean, var


def entry_snr(samples: np.ndarray) -> np.ndarray:
    """|mean|^2 / variance along the first axis (one row per noise draw)."""
    samples = np.asarray(samples)
    mean = samples.mean(axis=0)
    var = np.mean(np.abs(samples - mean) ** 2, axis=0)
    return np.abs(mean) ** 2 / var


def _noisy_echoes(cfg: OfdmConfig, sigma2: float, draws: int, seed: int, distance: float,
                  radial_velocity: float):
    rng = np.random.default_rng(seed)
    signal = noiseless_echo(cfg, distance, radial_velocity)
    scale = math.sqrt(sigma2 / 2)
    for _ in range(draws):
        noise = rng.standard_normal(signal.shape) + 1j * rng.standard_normal(signal.shape)
        yield signal + scale * noise


def empirical_peak_snr(cfg: OfdmConfig, sigma2: float, draws: int = 10_000, seed: int = 0,
                       distance: float = 200.0, radial_velocity: float = 10.0) -> float:
    """Measured SNR of the search output at the true range/velocity node."""
    _check_positive(sigma2)
    a = range_phasor(cfg, distance, sign=1.0)
    c = doppler_phasor(cfg, radial_velocity, sign=-1.0)
    peaks = np.array([a @ b @ c for b in _noisy_echoes(cfg, sigma2, draws, seed, distance, radial_velocity)])
    return float(entry_snr(peaks))


def empirical_g_sum_snr(cfg: OfdmConfig, sigma2: float, draws: int = 10_000, seed: int = 0,
                        distance: float = 200.0, radial_velocity: float = 10.0) -> float:
    """Measured SNR of sum_k G(k) after removing the known lag phase."""
    _check_positive(sigma2)
    c = doppler_phasor(cfg, radial_velocity, sign=-1.0)
    derotate = range_phasor(cfg, distance, sign=-1.0)[1:]
    sums = np.array([conjugate_lag_products(b @ c) @ derotate
                     for b in _noisy_echoes(cfg, sigma2, draws, seed, distance, radial_velocity)])
    return float(entry_snr(sums))
