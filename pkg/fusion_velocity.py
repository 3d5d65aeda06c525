"""
Fusion-center velocity estimation, run after the location estimate.

Step 1 fixes a rough velocity vector from the coarse radial velocities v_test:
each one constrains the velocity to a line perpendicular to the bearing of its
BS, seen from the estimated location. Step 2 scores a velocity lattice with

    J(q) = sum_k prod_w Re(I_w(k) * exp(+j 2pi f_c 2 v_{q,w} k T / C))

where v_{q,w} is the radial velocity node q would produce at BS w and I_w is the
lag-domain reconstruction of the velocity feature vector F_w.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from echo_model import SPEED_OF_LIGHT, OfdmConfig
from fusion_location import (Lattice, LatticeParams, LatticeSearch, conjugate_lag_products,
                             cosine_product_weights, select_best)
from geometry import IllConditionedGeometryError, as_point, as_points, bearings, unit_vectors
from single_bs import BsReport

logger = logging.getLogger(__name__)

_PARALLEL_TOLERANCE = 1e-3  # |sin| of the angle between two bearings


@dataclass
class ReconVectorI:
    """Lag-domain velocity vector; entries[k - 1] holds lag k = 1..N_s-1."""

    entries: np.ndarray
    bs_index: int


VelocityLattice = Lattice


def reconstruct_I(f: np.ndarray, bs_index: int = 0) -> ReconVectorI:
    return ReconVectorI(conjugate_lag_products(f), bs_index)


def rough_velocity_pair(theta_q: float, theta_s: float, v_q: float, v_s: float) -> np.ndarray:
    """Intersection of the two lines v . (cos theta, sin theta) = v_w."""
    det = np.sin(theta_s - theta_q)
    if abs(det) < _PARALLEL_TOLERANCE:
        raise IllConditionedGeometryError(
            f"Bearings {np.degrees(theta_q):.2f} and {np.degrees(theta_s):.2f} deg are (nearly) parallel")
    vx = (v_q * np.sin(theta_s) - v_s * np.sin(theta_q)) / det
    vy = (np.cos(theta_q) * v_s - np.cos(theta_s) * v_q) / det
    return np.array([vx, vy])


def rough_velocity(radial_velocities, thetas) -> np.ndarray:
    """Rough velocity vector from the coarse radial velocities and the BS bearings."""
    radial_velocities = np.asarray(radial_velocities, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if len(thetas) < 2:
        raise ValueError(f"Velocity fusion needs at least 2 BSs, got {len(thetas)}")
    if radial_velocities.shape != thetas.shape:
        raise ValueError("Need one radial velocity per bearing")
    if len(thetas) == 2:
        return rough_velocity_pair(thetas[0], thetas[1], radial_velocities[0], radial_velocities[1])

    directions = np.column_stack([np.cos(thetas), np.sin(thetas)])
    solution, _, rank, singular = np.linalg.lstsq(directions, radial_velocities, rcond=None)
    if rank < 2 or singular[-1] < _PARALLEL_TOLERANCE * singular[0]:
        raise IllConditionedGeometryError("All BS bearings are (nearly) parallel")
    return solution


def radial_velocity_of_lattice(q, estimated_location, bs) -> float:
    """Radial velocity BS `bs` would see for velocity q of a target at `estimated_location`."""
    direction = unit_vectors(estimated_location, as_point(bs)[None, :])[0]
    return float(direction @ as_point(q))


def velocity_lattice_weights(points, i_vectors: Sequence[ReconVectorI], estimated_location,
                             bs_positions, cfg: OfdmConfig) -> np.ndarray:
    """J at every row of `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    bs_positions = as_points(bs_positions)
    if len(i_vectors) != len(bs_positions):
        raise ValueError(f"{len(i_vectors)} I vectors for {len(bs_positions)} BSs")
    radial = points @ unit_vectors(estimated_location, bs_positions).T
    steps = -2 * np.pi * cfg.carrier_frequency * 2 * radial * cfg.symbol_duration / SPEED_OF_LIGHT
    return cosine_product_weights(steps, [i.entries for i in i_vectors])


def velocity_lattice_weight(q, reports: Sequence[BsReport], estimated_location, bs_positions,
                            cfg: OfdmConfig) -> float:
    """J at a single velocity, straight from the per-BS reports."""
    i_vectors = [reconstruct_I(r.f, r.bs_index) for r in reports]
    return float(velocity_lattice_weights(as_point(q)[None, :], i_vectors, estimated_location,
                                          bs_positions, cfg)[0])


def velocity_lattice(radial_velocities, estimated_location, bs_positions,
                     params: Optional[LatticeParams] = None) -> Lattice:
    """Lattice around the rough velocity; an ill-conditioned fix falls back to the pair of BSs
    with the widest bearing difference and a lattice of twice the extent."""
    params = params or LatticeParams.for_velocity()
    radial_velocities = np.asarray(radial_velocities, dtype=float)
    thetas = bearings(estimated_location, bs_positions)
    try:
        return params.around(rough_velocity(radial_velocities, thetas))
    except IllConditionedGeometryError as e:
        if len(thetas) < 3:
            raise
        spread = np.abs(np.sin(thetas[:, None] - thetas[None, :]))
        i, j = np.unravel_index(np.argmax(spread), spread.shape)
        pair = sorted((int(i), int(j)))
        logger.warning(f"{e}; falling back to BS pair {tuple(pair)} with an enlarged lattice")
        center = rough_velocity(radial_velocities[pair], thetas[pair])
        return params.enlarged().around(center)


def evaluate_velocity_lattice(lattice: Lattice, reports: Sequence[BsReport], estimated_location,
                              bs_positions, cfg: OfdmConfig) -> LatticeSearch:
    i_vectors = [reconstruct_I(r.f, r.bs_index) for r in reports]
    weights = velocity_lattice_weights(lattice.points, i_vectors, estimated_location, bs_positions, cfg)
    return LatticeSearch(lattice, weights, select_best(weights, lattice))


def search_velocity(reports: Sequence[BsReport], estimated_location, bs_positions, cfg: OfdmConfig,
                    lattice_params: Optional[LatticeParams] = None, center=None) -> LatticeSearch:
    """Rough fix (unless `center` is given) followed by the velocity lattice search."""
    bs_positions = as_points(bs_positions)
    if len(reports) != len(bs_positions):
        raise ValueError(f"{len(reports)} reports for {len(bs_positions)} BSs")
    if center is not None:
        lattice = (lattice_params or LatticeParams.for_velocity()).around(center)
    else:
        lattice = velocity_lattice([r.v_test for r in reports], estimated_location, bs_positions,
                                   lattice_params)
    return evaluate_velocity_lattice(lattice, reports, estimated_location, bs_positions, cfg)


def estimate_velocity(reports: Sequence[BsReport], estimated_location, bs_positions, cfg: OfdmConfig,
                      lattice_params: Optional[LatticeParams] = None, center=None) -> np.ndarray:
    return search_velocity(reports, estimated_location, bs_positions, cfg, lattice_params, center).best_point
