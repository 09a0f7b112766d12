"""Inter-region distance geometry and row-stochastic spatial weights.

The weight matrix assigns every region a convex combination of all other
regions, with influence decaying as an inverse power of great-circle
distance.  Rows sum to one, the diagonal is exactly zero, and a larger
decay exponent concentrates weight on nearer neighbours.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, InputValidationError

EARTH_RADIUS_KM = 6371.0088

# Pairwise distances are clamped from below so near-coincident regions
# cannot blow up the inverse-distance weights.
MIN_DISTANCE_KM = 1.0

DEFAULT_ALPHA = 1.0

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Region:
    region_id: str
    lat: float
    lon: float


@dataclass(frozen=True)
class RegionSet:
    """Ordered collection of regions with geographic coordinates."""

    regions: tuple[Region, ...]

    def __post_init__(self):
        if len(self.regions) < 2:
            raise DegenerateInputError(
                f"need at least 2 regions, got {len(self.regions)}"
            )
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise InputValidationError(f"duplicate region ids: {dupes}")
        for r in self.regions:
            _check_coordinates(r.lat, r.lon, r.region_id)

    @property
    def n(self) -> int:
        return len(self.regions)

    @property
    def region_ids(self) -> list[str]:
        return [r.region_id for r in self.regions]

    def coordinates(self) -> np.ndarray:
        """(N, 2) array of (lat, lon) in degrees."""
        return np.array([(r.lat, r.lon) for r in self.regions], dtype=float)


@dataclass(frozen=True)
class SpatialMatrix:
    """Row-stochastic inverse-distance weight matrix.

    Invariants (checked at construction): zero diagonal, non-negative
    entries, every row sums to 1 within ``ROW_SUM_TOL``.
    """

    weights: np.ndarray
    alpha: float
    region_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        w.setflags(write=False)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InputValidationError(f"weights must be square, got {w.shape}")
        if self.alpha <= 0:
            raise InputValidationError(f"alpha must be > 0, got {self.alpha}")
        if np.any(np.diag(w) != 0.0):
            raise InputValidationError("diagonal entries must be exactly 0")
        if np.any(w < 0):
            raise InputValidationError("weights must be non-negative")
        row_sums = w.sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) >= ROW_SUM_TOL:
            raise InputValidationError(
                f"rows must sum to 1 within {ROW_SUM_TOL}; "
                f"worst deviation {np.max(np.abs(row_sums - 1.0)):.3e}"
            )

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def _check_coordinates(lat: float, lon: float, label: str = "") -> None:
    tag = f" for region {label!r}" if label else ""
    if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
        raise InputValidationError(f"latitude {lat} out of [-90, 90]{tag}")
    if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
        raise InputValidationError(f"longitude {lon} out of [-180, 180]{tag}")


def geodesic_distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle (haversine) distance in kilometres between two
    (lat, lon) points given in degrees."""
    _check_coordinates(*a)
    _check_coordinates(*b)
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    sin_dlat = math.sin((lat2 - lat1) / 2.0)
    sin_dlon = math.sin((lon2 - lon1) / 2.0)
    h = sin_dlat**2 + math.cos(lat1) * math.cos(lat2) * sin_dlon**2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def pairwise_distances(rs: RegionSet) -> np.ndarray:
    """(N, N) symmetric matrix of great-circle distances in km."""
    coords = rs.coordinates()
    n = rs.n
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = geodesic_distance(
                (coords[i, 0], coords[i, 1]), (coords[j, 0], coords[j, 1])
            )
    return d


def build_spatial_matrix(rs: RegionSet, alpha: float = DEFAULT_ALPHA) -> SpatialMatrix:
    """Construct the row-normalised inverse-distance weight matrix.

    Off-diagonal weight of region j on region i is ``d_ij**-alpha``
    renormalised so each row sums to one.  Distances are clamped to
    ``MIN_DISTANCE_KM`` before inversion.
    """
    if alpha <= 0:
        raise InputValidationError(f"alpha must be > 0, got {alpha}")
    d = pairwise_distances(rs)
    d = np.maximum(d, MIN_DISTANCE_KM)
    inv = d ** (-float(alpha))
    np.fill_diagonal(inv, 0.0)
    weights = inv / inv.sum(axis=1, keepdims=True)
    np.fill_diagonal(weights, 0.0)
    return SpatialMatrix(weights=weights, alpha=float(alpha),
                         region_ids=tuple(rs.region_ids))


def spatial_lag(S: SpatialMatrix, series: np.ndarray) -> np.ndarray:
    """Weighted neighbour average ``out[i, t] = sum_j S[i, j] * series[j, t]``.

    ``series`` is (N, T); the caller decides any temporal shift (the
    regression lags by one period, the adjusted-input construction is
    contemporaneous).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
        squeeze = True
    else:
        squeeze = False
    if series.shape[0] != S.n:
        raise InputValidationError(
            f"series has {series.shape[0]} rows but matrix is {S.n}x{S.n}"
        )
    out = S.weights @ series
    return out[:, 0] if squeeze else out


def spatial_matrix_to_csv(S: SpatialMatrix, path) -> None:
    """Dump the weight matrix as CSV: header of region ids, then N rows
    of N full-precision reals."""
    ids = S.region_ids if S.region_ids else tuple(str(i) for i in range(S.n))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(ids) + "\n")
        for row in S.weights:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
