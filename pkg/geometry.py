"""
Planar geometry helpers shared by the echo model and the fusion center.
"""

import numpy as np


class GeometryError(ValueError):
    """Base class for geometry that cannot produce a fix."""


class DegenerateGeometryError(GeometryError):
    """A point coincides with a BS, so no direction is defined."""


class InfeasibleGeometryError(GeometryError):
    """Range circles do not intersect."""


class IllConditionedGeometryError(GeometryError):
    """Anchors or directions are (near) collinear / parallel."""


def as_point(value) -> np.ndarray:
    point = np.asarray(value, dtype=float)
    if point.shape != (2,):
        raise ValueError(f"Expected a 2-D coordinate, got shape {point.shape}")
    return point


def as_points(values) -> np.ndarray:
    points = np.asarray(values, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"Expected an (N, 2) array of coordinates, got shape {points.shape}")
    return points


def unit_vectors(origin, targets) -> np.ndarray:
    """Unit vectors from `origin` toward each row of `targets`."""
    origin = as_point(origin)
    diff = as_points(targets) - origin
    norms = np.linalg.norm(diff, axis=1)
    if np.any(norms == 0):
        raise DegenerateGeometryError(f"Point {origin.tolist()} coincides with a BS")
    return diff / norms[:, None]


def bearings(origin, targets) -> np.ndarray:
    """Angles (rad) of the directions from `origin` toward each row of `targets`."""
    u = unit_vectors(origin, targets)
    return np.arctan2(u[:, 1], u[:, 0])


def distances(points, anchor) -> np.ndarray:
    """Distance of every row of `points` to `anchor`."""
    return np.linalg.norm(np.atleast_2d(points) - as_point(anchor), axis=1)
