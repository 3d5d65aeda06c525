"""
Single-BS preprocessing: coarse range/velocity search over compensation
matrices, then compression of B_w into the distance feature vector E and the
velocity feature vector F that the BS uploads to the fusion center.
"""

import logging
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

import config
from echo_model import (SPEED_OF_LIGHT, EchoSymbolMatrix, OfdmConfig, doppler_phasor,
                        max_unambiguous_range, max_unambiguous_velocity, range_phasor)

logger = logging.getLogger(__name__)

REPORT_MAGIC = b'BSRP'
REPORT_VERSION = 1
_REPORT_HEADER = struct.Struct('<4sIIIIdd')


@dataclass(frozen=True)
class SearchGrid:
    """Range / radial-velocity samples, endpoints included."""

    r_min: float
    r_max: float
    k: int
    v_min: float
    v_max: float
    p: int

    def __post_init__(self):
        if not self.r_max > self.r_min >= 0:
            raise ValueError(f"Range grid needs r_max > r_min >= 0, got [{self.r_min}, {self.r_max}]")
        if not self.v_max > self.v_min:
            raise ValueError(f"Velocity grid needs v_max > v_min, got [{self.v_min}, {self.v_max}]")
        if self.k < 2 or self.p < 2:
            raise ValueError(f"Grid needs K, P >= 2, got K={self.k}, P={self.p}")

    @classmethod
    def from_config(cls) -> 'SearchGrid':
        return cls(config.RANGE_MIN_M, config.RANGE_MAX_M, config.RANGE_SAMPLES,
                   config.VELOCITY_MIN_MPS, config.VELOCITY_MAX_MPS, config.VELOCITY_SAMPLES)

    @property
    def ranges(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.k)

    @property
    def velocities(self) -> np.ndarray:
        return np.linspace(self.v_min, self.v_max, self.p)

    @property
    def delta_r(self) -> float:
        return (self.r_max - self.r_min) / self.k

    @property
    def delta_v(self) -> float:
        return (self.v_max - self.v_min) / self.p

    @property
    def range_step(self) -> float:
        return (self.r_max - self.r_min) / (self.k - 1)

    @property
    def velocity_step(self) -> float:
        return (self.v_max - self.v_min) / (self.p - 1)

    def check_unambiguous(self, cfg: OfdmConfig) -> bool:
        """Warn when the grid spans more than one period of the range or Doppler response."""
        ok = True
        if self.r_max - self.r_min >= max_unambiguous_range(cfg):
            logger.warning(f"Range grid [{self.r_min}, {self.r_max}] m spans more than the "
                           f"{max_unambiguous_range(cfg):.1f} m range period; the search has aliased peaks")
            ok = False
        if self.v_max - self.v_min >= max_unambiguous_velocity(cfg):
            logger.warning(f"Velocity grid [{self.v_min}, {self.v_max}] m/s spans more than the "
                           f"{max_unambiguous_velocity(cfg):.1f} m/s Doppler period")
            ok = False
        return ok


@dataclass
class BsReport:
    """What one BS uploads: coarse estimates plus the two feature vectors."""

    bs_index: int
    r_test: float
    v_test: float
    e: np.ndarray  # distance feature vector, length N_c
    f: np.ndarray  # velocity feature vector, length N_s

    def to_bytes(self) -> bytes:
        """Little-endian record: header, then E and F as complex128."""
        header = _REPORT_HEADER.pack(REPORT_MAGIC, REPORT_VERSION, self.bs_index,
                                     len(self.e), len(self.f), self.r_test, self.v_test)
        return header + np.asarray(self.e, dtype='<c16').tobytes() + np.asarray(self.f, dtype='<c16').tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> 'BsReport':
        if len(data) < _REPORT_HEADER.size:
            raise ValueError("Truncated BS report header")
        magic, version, bs_index, n_c, n_s, r_test, v_test = _REPORT_HEADER.unpack_from(data)
        if magic != REPORT_MAGIC or version != REPORT_VERSION:
            raise ValueError(f"Not a BS report record (magic={magic!r}, version={version})")
        expected = _REPORT_HEADER.size + 16 * (n_c + n_s)
        if len(data) != expected:
            raise ValueError(f"BS report has {len(data)} bytes, expected {expected}")
        body = np.frombuffer(data, dtype='<c16', offset=_REPORT_HEADER.size)
        return cls(bs_index, r_test, v_test, body[:n_c].astype(complex), body[n_c:].astype(complex))

    def to_text(self) -> str:
        lines = [
            f"bs_index: {self.bs_index}",
            f"r_test_m: {self.r_test:.6f}",
            f"v_test_mps: {self.v_test:.6f}",
            f"E ({len(self.e)}):",
        ]
        lines += [f"  {i:4d} {z.real: .9e} {z.imag: .9e}" for i, z in enumerate(self.e)]
        lines.append(f"F ({len(self.f)}):")
        lines += [f"  {i:4d} {z.real: .9e} {z.imag: .9e}" for i, z in enumerate(self.f)]
        return "\n".join(lines) + "\n"


def build_distance_compensation(grid: SearchGrid, cfg: OfdmConfig) -> np.ndarray:
    """A (K x N_c): row k = exp(+j 2pi m df 2R'_k / C)."""
    m = np.arange(cfg.n_c)
    return np.exp(2j * np.pi * np.outer(grid.ranges, m) * cfg.subcarrier_spacing * 2 / SPEED_OF_LIGHT)


def build_velocity_compensation(grid: SearchGrid, cfg: OfdmConfig) -> np.ndarray:
    """C (N_s x P): column p = exp(-j 2pi f_c 2v'_p n T / C)."""
    n = np.arange(cfg.n_s)
    return np.exp(-2j * np.pi * cfg.carrier_frequency * 2 * np.outer(n, grid.velocities)
                  * cfg.symbol_duration / SPEED_OF_LIGHT)


def _check_shape(b: EchoSymbolMatrix, cfg: OfdmConfig) -> None:
    if b.shape != (cfg.n_c, cfg.n_s):
        raise ValueError(f"Echo matrix is {b.shape}, config expects {(cfg.n_c, cfg.n_s)}")


def estimation_matrix(b: EchoSymbolMatrix, grid: SearchGrid, cfg: OfdmConfig,
                      a: Optional[np.ndarray] = None, c: Optional[np.ndarray] = None) -> np.ndarray:
    """Complex A . B . C; its modulus is the estimation matrix D."""
    _check_shape(b, cfg)
    if a is None:
        a = build_distance_compensation(grid, cfg)
    if c is None:
        c = build_velocity_compensation(grid, cfg)
    return a @ b.entries @ c


def coarse_estimate(b: EchoSymbolMatrix, grid: SearchGrid, cfg: OfdmConfig,
                    a: Optional[np.ndarray] = None, c: Optional[np.ndarray] = None,
                    ) -> Tuple[float, float, np.ndarray]:
    """Joint coarse range and radial velocity at the peak of |A B C|."""
    d = np.abs(estimation_matrix(b, grid, cfg, a, c))
    # np.argmax keeps the first maximum, i.e. the lowest (k, p)
    k, p = np.unravel_index(np.argmax(d), d.shape)
    return float(grid.ranges[k]), float(grid.velocities[p]), d


def compress_to_E(b: EchoSymbolMatrix, v_test: float, cfg: OfdmConfig) -> np.ndarray:
    """Doppler-compensate at v_test and sum over symbols."""
    _check_shape(b, cfg)
    return b.entries @ doppler_phasor(cfg, v_test, sign=-1.0)


def compress_to_F(b: EchoSymbolMatrix, r_test: float, cfg: OfdmConfig) -> np.ndarray:
    """Range-compensate at r_test and sum over subcarriers."""
    _check_shape(b, cfg)
    return range_phasor(cfg, r_test, sign=1.0) @ b.entries


class SingleBsProcessor:
    """Preprocessing chain of one BS with the compensation matrices built once."""

    def __init__(self, grid: SearchGrid, cfg: OfdmConfig):
        self.grid = grid
        self.cfg = cfg
        grid.check_unambiguous(cfg)
        self.a = build_distance_compensation(grid, cfg)
        self.c = build_velocity_compensation(grid, cfg)

    def coarse_estimate(self, b: EchoSymbolMatrix) -> Tuple[float, float, np.ndarray]:
        return coarse_estimate(b, self.grid, self.cfg, self.a, self.c)

    def preprocess(self, b: EchoSymbolMatrix) -> BsReport:
        r_test, v_test, _ = self.coarse_estimate(b)
        logger.debug(f"BS {b.bs_index}: R_test={r_test:.3f} m, v_test={v_test:.3f} m/s")
        return BsReport(b.bs_index, r_test, v_test,
                        compress_to_E(b, v_test, self.cfg), compress_to_F(b, r_test, self.cfg))


def preprocess(b: EchoSymbolMatrix, grid: SearchGrid, cfg: OfdmConfig) -> BsReport:
    return SingleBsProcessor(grid, cfg).preprocess(b)
