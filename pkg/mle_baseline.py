"""
Data-level fusion baseline: Gaussian maximum likelihood over the same lattices the
symbol-level fusion uses, fed only with the per-BS coarse estimates.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from fusion_location import Lattice, LatticeParams, LatticeSearch, SensingRegion, location_lattice, select_best
from fusion_velocity import velocity_lattice
from geometry import as_point, as_points, unit_vectors
from single_bs import BsReport

logger = logging.getLogger(__name__)


@dataclass
class MleInputs:
    """Per-BS estimates with their variances, and the lattice to traverse.

    With `reference_location` unset the estimates are ranges and the lattice holds
    locations; with it set they are radial velocities seen from that location and
    the lattice holds velocity vectors.
    """

    estimates: np.ndarray
    variances: np.ndarray
    lattice: Lattice
    bs_positions: np.ndarray
    reference_location: Optional[np.ndarray] = None

    def __post_init__(self):
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        self.bs_positions = as_points(self.bs_positions)
        w = len(self.bs_positions)
        if self.estimates.shape != (w,) or self.variances.shape != (w,):
            raise ValueError(f"Need one estimate and one variance per BS ({w})")
        if not np.all(np.isfinite(self.variances) & (self.variances > 0)):
            raise ValueError(f"Variances must be finite and positive, got {self.variances}")
        if self.reference_location is not None:
            self.reference_location = as_point(self.reference_location)

    def predicted(self, points: np.ndarray) -> np.ndarray:
        """What each BS would measure for every node, shape (nodes, W)."""
        points = np.atleast_2d(points)
        if self.reference_location is None:
            return np.linalg.norm(points[:, None, :] - self.bs_positions[None, :, :], axis=2)
        return points @ unit_vectors(self.reference_location, self.bs_positions).T


def mle_log_likelihood(points, inputs: MleInputs) -> np.ndarray:
    """log L at every row of `points`."""
    residual = inputs.estimates - inputs.predicted(np.asarray(points, dtype=float))
    return np.sum(-0.5 * np.log(2 * math.pi * inputs.variances) - residual ** 2 / (2 * inputs.variances),
                  axis=1)


def mle_likelihood(z, inputs: MleInputs) -> float:
    return float(np.exp(mle_log_likelihood(as_point(z)[None, :], inputs)[0]))


def mle_search(inputs: MleInputs) -> LatticeSearch:
    weights = mle_log_likelihood(inputs.lattice.points, inputs)
    return LatticeSearch(inputs.lattice, weights, select_best(weights, inputs.lattice))


def mle_estimate_location(inputs: MleInputs) -> np.ndarray:
    if inputs.reference_location is not None:
        raise ValueError("Location MLE takes range estimates, not a reference location")
    return mle_search(inputs).best_point


def mle_estimate_velocity(inputs: MleInputs) -> np.ndarray:
    if inputs.reference_location is None:
        raise ValueError("Velocity MLE needs the estimated target location")
    return mle_search(inputs).best_point


def mle_fuse(reports: Sequence[BsReport], bs_positions, range_variances, velocity_variances,
             location_params: Optional[LatticeParams] = None,
             velocity_params: Optional[LatticeParams] = None,
             region: Optional[SensingRegion] = None):
    """Location then velocity from coarse estimates, on lattices centered like the symbol-level ones."""
    bs_positions = as_points(bs_positions)
    ranges = [r.r_test for r in reports]
    radial = [r.v_test for r in reports]

    lattice = location_lattice(bs_positions, ranges, location_params, region)
    location = mle_estimate_location(MleInputs(ranges, range_variances, lattice, bs_positions))

    v_lattice = velocity_lattice(radial, location, bs_positions, velocity_params)
    velocity = mle_estimate_velocity(MleInputs(radial, velocity_variances, v_lattice, bs_positions, location))
    logger.debug(f"MLE fix: location={location.round(3).tolist()}, velocity={velocity.round(3).tolist()}")
    return location, velocity
