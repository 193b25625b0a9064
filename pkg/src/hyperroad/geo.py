"""Local equirectangular projection of (lon, lat) degrees to metres."""

import math

import numpy as np

METRES_PER_DEGREE = 111_320.0


def project_positions(lonlat: np.ndarray) -> np.ndarray:
    """Project about the centroid: x = dlon * cos(lat0), y = dlat, scaled to metres."""
    lonlat = np.asarray(lonlat, dtype=np.float64).reshape(-1, 2)
    if len(lonlat) == 0:
        return lonlat.copy()
    # exactly rounded sums keep the centre independent of road order
    lon0 = math.fsum(lonlat[:, 0]) / len(lonlat)
    lat0 = math.fsum(lonlat[:, 1]) / len(lonlat)
    x = (lonlat[:, 0] - lon0) * np.cos(np.radians(lat0)) * METRES_PER_DEGREE
    y = (lonlat[:, 1] - lat0) * METRES_PER_DEGREE
    return np.column_stack([x, y])
