"""
Fusion-center location estimation.

Step 1 fixes a rough location from the coarse ranges R_test of all BSs (two
circle intersection for two BSs, linearised least squares otherwise). Step 2
lays a square lattice around the rough fix and scores every node z with

    H(z) = sum_k prod_w Re(G_w(k) * exp(-j 2pi k df 2 R_{z,w} / C))

where G_w is the lag-domain reconstruction of the distance feature vector E_w.
The node with the largest weight is the estimate.

The lattice and search machinery here is shared with the velocity fusion and
the MLE baseline.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from PIL import Image

import config
from echo_model import SPEED_OF_LIGHT, OfdmConfig
from geometry import (IllConditionedGeometryError, InfeasibleGeometryError, as_point, as_points,
                      distances)
from single_bs import BsReport

logger = logging.getLogger(__name__)

WEIGHT_CHUNK_NODES = 2048  # lattice nodes scored per vectorised block
_TANGENT_TOLERANCE = 1e-9  # discriminant slack treated as touching circles
_TIE_TOLERANCE = 1e-12  # relative weight difference counted as a tie


@dataclass(frozen=True)
class LatticeParams:
    """Size of a square refinement lattice; the center comes from the rough fix."""

    half_extent: float
    spacing: float

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"Lattice spacing must be positive, got {self.spacing}")
        if self.half_extent < self.spacing:
            raise ValueError(f"Lattice half extent {self.half_extent} is below the spacing {self.spacing}")

    @classmethod
    def for_location(cls) -> 'LatticeParams':
        return cls(config.LOCATION_LATTICE_HALF_EXTENT_M, config.LOCATION_LATTICE_SPACING_M)

    @classmethod
    def for_velocity(cls) -> 'LatticeParams':
        return cls(config.VELOCITY_LATTICE_HALF_EXTENT_MPS, config.VELOCITY_LATTICE_SPACING_MPS)

    def around(self, center) -> 'Lattice':
        return Lattice(as_point(center), self.half_extent, self.spacing)

    def enlarged(self, factor: float = 2.0) -> 'LatticeParams':
        return LatticeParams(self.half_extent * factor, self.spacing)


@dataclass
class Lattice:
    """Square lattice with an odd node count per axis so the center is a node.

    Nodes are enumerated row-major with the x index major:
    points[i * n + j] = (cx + offsets[i], cy + offsets[j]).
    """

    center: np.ndarray
    half_extent: float
    spacing: float

    def __post_init__(self):
        self.center = as_point(self.center)
        LatticeParams(self.half_extent, self.spacing)

    @property
    def nodes_per_axis(self) -> int:
        return 2 * int(round(self.half_extent / self.spacing)) + 1

    @property
    def offsets(self) -> np.ndarray:
        n = self.nodes_per_axis
        return (np.arange(n) - n // 2) * self.spacing

    @property
    def points(self) -> np.ndarray:
        off = self.offsets
        gx, gy = np.meshgrid(self.center[0] + off, self.center[1] + off, indexing='ij')
        return np.column_stack([gx.ravel(), gy.ravel()])

    def __len__(self) -> int:
        return self.nodes_per_axis ** 2


@dataclass(frozen=True)
class SensingRegion:
    """Disc the target is known to be in; picks between two-circle solutions."""

    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"Sensing radius must be positive, got {self.radius}")

    @classmethod
    def from_config(cls) -> 'SensingRegion':
        return cls(tuple(config.SENSING_CENTER), config.SENSING_RADIUS_M)

    def contains(self, point) -> bool:
        return float(np.linalg.norm(as_point(point) - np.asarray(self.center))) <= self.radius

    def pick(self, candidates: Sequence[np.ndarray]) -> np.ndarray:
        """Candidate nearest the center among those inside the region, else among all."""
        if not candidates:
            raise ValueError("No candidate locations to choose from")
        inside = [c for c in candidates if self.contains(c)]
        if not inside:
            logger.debug(f"No candidate inside the sensing region around {self.center}")
            inside = list(candidates)
        center = np.asarray(self.center, dtype=float)
        dist = [float(np.linalg.norm(as_point(c) - center)) for c in inside]
        return np.asarray(inside[int(np.argmin(dist))], dtype=float)


@dataclass
class ReconVectorG:
    """Lag-domain distance vector; entries[k - 1] holds lag k = 1..N_c-1."""

    entries: np.ndarray
    bs_index: int


@dataclass
class LatticeSearch:
    """Weights of every lattice node and the selected node."""

    lattice: Lattice
    weights: np.ndarray
    best_index: int

    @property
    def best_point(self) -> np.ndarray:
        return self.lattice.points[self.best_index]

    def weight_grid(self) -> np.ndarray:
        """Weights as an (n, n) array indexed [x index, y index]."""
        n = self.lattice.nodes_per_axis
        return self.weights.reshape(n, n)

    def save_weight_grid(self, path_stem) -> List[Path]:
        """Write the weight grid as CSV and as a grayscale PNG (north up)."""
        stem = Path(path_stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        grid = self.weight_grid()

        csv_path = stem.parent / f"{stem.name}.csv"
        header = (f"center_x={self.lattice.center[0]:.6f}, center_y={self.lattice.center[1]:.6f}, "
                  f"spacing={self.lattice.spacing}, rows=x index, columns=y index")
        np.savetxt(csv_path, grid, delimiter=',', fmt='%.9e', header=header)

        png_path = stem.parent / f"{stem.name}.png"
        span = grid.max() - grid.min()
        scaled = (grid - grid.min()) / span if span > 0 else np.zeros_like(grid)
        pixels = np.flipud((scaled * 255).round().astype(np.uint8).T)
        Image.fromarray(pixels).save(png_path)
        logger.debug(f"Saved lattice weight grid: {csv_path}, {png_path}")
        return [csv_path, png_path]


def conjugate_lag_products(x: np.ndarray) -> np.ndarray:
    """r[k - 1] = mean over a of x[a] * conj(x[a + k]) for lags k = 1..N-1."""
    x = np.asarray(x, dtype=complex)
    n = len(x)
    if n < 2:
        raise ValueError(f"Need at least 2 samples for lag products, got {n}")
    # np.correlate(x, x)[n - 1 + k] = sum x[a + k] conj(x[a])
    full = np.correlate(x, x, mode='full')[n:]
    return np.conj(full) / (n - np.arange(1, n))


def reconstruct_G(e: np.ndarray, bs_index: int = 0) -> ReconVectorG:
    return ReconVectorG(conjugate_lag_products(e), bs_index)


def cosine_product_weights(phase_steps: np.ndarray, vectors: Sequence[np.ndarray]) -> np.ndarray:
    """sum_k prod_w Re(vectors[w][k - 1] * exp(-j k phase_steps[:, w])) per node.

    phase_steps has one row per node and one column per BS.
    """
    phase_steps = np.atleast_2d(phase_steps)
    lags = np.arange(1, len(vectors[0]) + 1)
    out = np.empty(len(phase_steps))
    for start in range(0, len(phase_steps), WEIGHT_CHUNK_NODES):
        block = phase_steps[start:start + WEIGHT_CHUNK_NODES]
        product = np.ones((len(block), len(lags)))
        for w, vec in enumerate(vectors):
            angle = np.outer(block[:, w], lags)
            product *= vec.real * np.cos(angle) + vec.imag * np.sin(angle)
        out[start:start + len(block)] = product.sum(axis=1)
    return out


def select_best(weights: np.ndarray, lattice: Lattice) -> int:
    """Largest weight; ties go to the node nearest the center, then the lowest index."""
    peak = weights.max()
    tied = np.flatnonzero(weights >= peak - _TIE_TOLERANCE * np.abs(weights).max())
    if len(tied) == 1:
        return int(tied[0])
    dist = distances(lattice.points[tied], lattice.center)
    nearest = tied[dist <= dist.min() + _TIE_TOLERANCE * lattice.spacing]
    return int(nearest[0])


def rough_location_pair(bs_q, bs_s, r_q: float, r_s: float) -> List[np.ndarray]:
    """Intersections of the range circles around two BSs (one point if tangent)."""
    q, s = as_point(bs_q), as_point(bs_s)
    diff = s - q
    d2 = float(diff @ diff)
    if d2 == 0:
        raise IllConditionedGeometryError("Two BSs at the same position give no fix")

    a = (r_q ** 2 - r_s ** 2) / (2 * d2)
    disc = 2 * (r_q ** 2 + r_s ** 2) / d2 - (r_q ** 2 - r_s ** 2) ** 2 / d2 ** 2 - 1
    if disc < 0:
        if disc < -_TANGENT_TOLERANCE:
            raise InfeasibleGeometryError(
                f"Range circles R={r_q:.3f} m and R={r_s:.3f} m around BSs {d2 ** 0.5:.3f} m apart do not meet")
        disc = 0.0

    base = (q + s) / 2 + a * diff
    half_chord = np.array([diff[1], -diff[0]]) / 2 * np.sqrt(disc)
    if disc == 0:
        return [base]
    return [base + half_chord, base - half_chord]


def closest_approach_point(bs_q, bs_s, r_q: float, r_s: float) -> np.ndarray:
    """Point on the BS-BS line minimising the squared range residuals of both circles."""
    q, s = as_point(bs_q), as_point(bs_s)
    d = float(np.linalg.norm(s - q))
    if d == 0:
        raise IllConditionedGeometryError("Two BSs at the same position give no fix")
    u = (s - q) / d

    def cost(t: float) -> float:
        return (abs(t) - r_q) ** 2 + (abs(d - t) - r_s) ** 2

    # stationary point of each piece of the residual, clipped to that piece
    candidates = [
        min(max((d + r_q - r_s) / 2, 0.0), d),
        max((r_q + d + r_s) / 2, d),
        min((d - r_s - r_q) / 2, 0.0),
    ]
    t = min(candidates, key=cost)
    return q + t * u


def _most_separated_pair(bs_positions: np.ndarray):
    diff = bs_positions[:, None, :] - bs_positions[None, :, :]
    sep = np.linalg.norm(diff, axis=2)
    i, j = np.unravel_index(np.argmax(sep), sep.shape)
    return (int(i), int(j)) if i < j else (int(j), int(i))


def rough_location(bs_positions, ranges, region: Optional[SensingRegion] = None) -> np.ndarray:
    """Rough fix from the coarse ranges of all BSs."""
    bs_positions = as_points(bs_positions)
    ranges = np.asarray(ranges, dtype=float)
    if len(bs_positions) < 2:
        raise ValueError(f"Location fusion needs at least 2 BSs, got {len(bs_positions)}")
    if ranges.shape != (len(bs_positions),):
        raise ValueError(f"Need one range per BS, got {ranges.shape} for {len(bs_positions)} BSs")
    region = region or SensingRegion.from_config()

    if len(bs_positions) == 2:
        try:
            candidates = rough_location_pair(bs_positions[0], bs_positions[1], ranges[0], ranges[1])
        except InfeasibleGeometryError as e:
            logger.debug(f"{e}; using the closest-approach point")
            candidates = [closest_approach_point(bs_positions[0], bs_positions[1], ranges[0], ranges[1])]
        return region.pick(candidates)

    # |p - b_w|^2 - |p - b_0|^2 = R_w^2 - R_0^2 is linear in p
    lhs = 2 * (bs_positions[1:] - bs_positions[0])
    rhs = (ranges[0] ** 2 - ranges[1:] ** 2
           + np.sum(bs_positions[1:] ** 2, axis=1) - np.sum(bs_positions[0] ** 2))
    solution, _, rank, singular = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < 2 or singular[-1] < 1e-10 * singular[0]:
        raise IllConditionedGeometryError("BS positions are collinear; least-squares fix is singular")
    return solution


def location_lattice(bs_positions, ranges, params: Optional[LatticeParams] = None,
                     region: Optional[SensingRegion] = None) -> Lattice:
    """Lattice around the rough fix; an ill-conditioned fix falls back to the widest BS pair
    and a lattice of twice the extent."""
    params = params or LatticeParams.for_location()
    bs_positions = as_points(bs_positions)
    ranges = np.asarray(ranges, dtype=float)
    try:
        return params.around(rough_location(bs_positions, ranges, region))
    except IllConditionedGeometryError as e:
        if len(bs_positions) < 3:
            raise
        i, j = _most_separated_pair(bs_positions)
        logger.warning(f"{e}; falling back to BS pair ({i}, {j}) with an enlarged lattice")
        center = rough_location(bs_positions[[i, j]], ranges[[i, j]], region)
        return params.enlarged().around(center)


def lattice_weights(points, g_vectors: Sequence[ReconVectorG], bs_positions, cfg: OfdmConfig) -> np.ndarray:
    """H at every row of `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    bs_positions = as_points(bs_positions)
    if len(g_vectors) != len(bs_positions):
        raise ValueError(f"{len(g_vectors)} G vectors for {len(bs_positions)} BSs")
    node_ranges = np.linalg.norm(points[:, None, :] - bs_positions[None, :, :], axis=2)
    steps = 2 * np.pi * cfg.subcarrier_spacing * 2 * node_ranges / SPEED_OF_LIGHT
    return cosine_product_weights(steps, [g.entries for g in g_vectors])


def lattice_weight(z, reports: Sequence[BsReport], bs_positions, cfg: OfdmConfig) -> float:
    """H at a single location, straight from the per-BS reports."""
    g_vectors = [reconstruct_G(r.e, r.bs_index) for r in reports]
    return float(lattice_weights(as_point(z)[None, :], g_vectors, bs_positions, cfg)[0])


def evaluate_location_lattice(lattice: Lattice, reports: Sequence[BsReport], bs_positions,
                              cfg: OfdmConfig) -> LatticeSearch:
    g_vectors = [reconstruct_G(r.e, r.bs_index) for r in reports]
    weights = lattice_weights(lattice.points, g_vectors, bs_positions, cfg)
    return LatticeSearch(lattice, weights, select_best(weights, lattice))


def search_location(reports: Sequence[BsReport], bs_positions, cfg: OfdmConfig,
                    lattice_params: Optional[LatticeParams] = None, center=None,
                    region: Optional[SensingRegion] = None) -> LatticeSearch:
    """Rough fix (unless `center` is given) followed by the lattice search."""
    bs_positions = as_points(bs_positions)
    if len(reports) != len(bs_positions):
        raise ValueError(f"{len(reports)} reports for {len(bs_positions)} BSs")
    if center is not None:
        lattice = (lattice_params or LatticeParams.for_location()).around(center)
    else:
        lattice = location_lattice(bs_positions, [r.r_test for r in reports], lattice_params, region)
    return evaluate_location_lattice(lattice, reports, bs_positions, cfg)


def estimate_location(reports: Sequence[BsReport], bs_positions, cfg: OfdmConfig,
                      lattice_params: Optional[LatticeParams] = None, center=None,
                      region: Optional[SensingRegion] = None) -> np.ndarray:
    return search_location(reports, bs_positions, cfg, lattice_params, center, region).best_point
