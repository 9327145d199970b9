"""Planar geometry: lens correction, four-point geo-framing, projection, geodesy.

Pixel coordinates follow the image convention (``u`` right, ``v`` down).
Geographic coordinates are WGS84 degrees on a spherical Earth.  The
homography stored in a :class:`GeoFrame` maps ``[u, v, 1]`` to
``[lat, lon, w]`` and is normalised so that ``H[2, 2] == 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points
from .exceptions import (
    CorrectionFailedError,
    DegenerateConfigurationError,
    HorizonSingularityError,
    InvariantViolation,
    SingularSystemError,
)

EARTH_RADIUS_M = 6371008.8

UNDISTORT_MAX_ITER = 20
UNDISTORT_TOL = 1e-9  # normalized image units
INTERPOLATION_TOL_DEG = 1e-9
HORIZON_EPS = 1e-12
DET_EPS = 1e-12
COLLINEAR_REL_EPS = 1e-9


@dataclass(frozen=True)
class PixelPoint:
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise InvariantViolation(f"pixel point must be finite, got ({self.u}, {self.v})")

    def __iter__(self):
        yield self.u
        yield self.v


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise InvariantViolation(f"geo point must be finite, got ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise InvariantViolation(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise InvariantViolation(f"longitude {self.lon} outside [-180, 180]")

    def __iter__(self):
        yield self.lat
        yield self.lon


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(v) for v in vals):
            raise InvariantViolation(f"bounding box must be finite, got {vals}")
        if not self.x_min < self.x_max:
            raise InvariantViolation(f"x_min < x_max violated: {self.x_min} >= {self.x_max}")
        if not self.y_min < self.y_max:
            raise InvariantViolation(f"y_min < y_max violated: {self.y_min} >= {self.y_max}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class DistortionModel:
    """Brown-Conrady intrinsics and distortion coefficients."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2"):
            if not math.isfinite(getattr(self, name)):
                raise InvariantViolation(f"distortion field {name} must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvariantViolation("focal lengths fx, fy must be positive")

    @property
    def is_identity(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0


def _distort_normalized(x, y, m: DistortionModel):
    r2 = x * x + y * y
    radial = 1.0 + r2 * (m.k1 + r2 * (m.k2 + r2 * m.k3))
    xd = x * radial + 2.0 * m.p1 * x * y + m.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + m.p1 * (r2 + 2.0 * y * y) + 2.0 * m.p2 * x * y
    return xd, yd


def distort_points(P, m: DistortionModel) -> np.ndarray:
    """Apply the forward lens model to ideal pixel positions, ``(n, 2)``."""
    P = check_points(P, name="P")
    if m.is_identity:
        return P.copy()
    x = (P[:, 0] - m.cx) / m.fx
    y = (P[:, 1] - m.cy) / m.fy
    xd, yd = _distort_normalized(x, y, m)
    return np.column_stack((xd * m.fx + m.cx, yd * m.fy + m.cy))


def undistort_points(P, m: DistortionModel) -> np.ndarray:
    """Invert the lens model by fixed-point iteration, ``(n, 2)``.

    Raises :class:`CorrectionFailedError` if any point has not settled to
    within ``UNDISTORT_TOL`` normalized units after ``UNDISTORT_MAX_ITER``
    iterations; the error carries the last iterate in pixels.
    """
    P = check_points(P, name="P")
    if m.is_identity:
        return P.copy()
    xd = (P[:, 0] - m.cx) / m.fx
    yd = (P[:, 1] - m.cy) / m.fy
    x, y = xd.copy(), yd.copy()
    converged = False
    for _ in range(UNDISTORT_MAX_ITER):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (m.k1 + r2 * (m.k2 + r2 * m.k3))
        dx = 2.0 * m.p1 * x * y + m.p2 * (r2 + 2.0 * x * x)
        dy = m.p1 * (r2 + 2.0 * y * y) + 2.0 * m.p2 * x * y
        with np.errstate(divide="ignore", invalid="ignore"):
            x_new = (xd - dx) / radial
            y_new = (yd - dy) / radial
        step = np.maximum(np.abs(x_new - x), np.abs(y_new - y))
        x, y = x_new, y_new
        if np.all(step < UNDISTORT_TOL):
            converged = True
            break
    out = np.column_stack((x * m.fx + m.cx, y * m.fy + m.cy))
    if not converged:
        raise CorrectionFailedError(
            f"undistortion did not converge in {UNDISTORT_MAX_ITER} iterations", out
        )
    return out


def distort_point(p: PixelPoint, m: DistortionModel) -> PixelPoint:
    u, v = distort_points([[p.u, p.v]], m)[0]
    return PixelPoint(float(u), float(v))


def undistort_point(p: PixelPoint, m: DistortionModel) -> PixelPoint:
    """Return the ideal (distortion-free) position of an observed pixel."""
    if m.is_identity:
        return p
    try:
        u, v = undistort_points([[p.u, p.v]], m)[0]
    except CorrectionFailedError as exc:
        u, v = exc.last_iterate[0]
        raise CorrectionFailedError(str(exc), PixelPoint(float(u), float(v))) from None
    return PixelPoint(float(u), float(v))


# -- geo-framing --------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Counter-clockwise hull (in u-right/v-down axes) by monotone chain."""
    pts = sorted(map(tuple, points))
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def _hartley(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin with mean norm sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    if mean_dist == 0.0:
        raise DegenerateConfigurationError("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _apply_h(H: np.ndarray, P: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    hom = np.column_stack((P, np.ones(len(P)))) @ H.T
    return hom[:, :2], hom[:, 2]


@dataclass(frozen=True, eq=False)
class GeoFrame:
    """Pixel-to-geographic homography plus the region where it is trusted."""

    H: np.ndarray
    correspondences: Tuple[Tuple[PixelPoint, GeoPoint], ...]
    validity: Tuple[PixelPoint, ...]
    H_inv: np.ndarray = field(repr=False)

    @property
    def centroid(self) -> GeoPoint:
        lat = sum(g.lat for _, g in self.correspondences) / len(self.correspondences)
        lon = sum(g.lon for _, g in self.correspondences) / len(self.correspondences)
        return GeoPoint(lat, lon)

    def contains(self, p) -> bool:
        """Inclusive point-in-convex-polygon test against the validity hull."""
        u, v = p
        hull = self.validity
        extent = max(
            max(q.u for q in hull) - min(q.u for q in hull),
            max(q.v for q in hull) - min(q.v for q in hull),
        )
        tol = 1e-9 * extent * extent
        n = len(hull)
        for i in range(n):
            a, b = hull[i], hull[(i + 1) % n]
            if (b.u - a.u) * (v - a.v) - (b.v - a.v) * (u - a.u) < -tol:
                return False
        return True

    def residuals(self) -> np.ndarray:
        """Per-correspondence projection error in degrees, shape ``(4,)``."""
        pix = np.array([[p.u, p.v] for p, _ in self.correspondences])
        geo = np.array([[g.lat, g.lon] for _, g in self.correspondences])
        xy, w = _apply_h(self.H, pix)
        return np.max(np.abs(xy / w[:, None] - geo), axis=1)


def solve_geoframe(correspondences: Sequence[Tuple[PixelPoint, GeoPoint]]) -> GeoFrame:
    """Solve the pixel -> (lat, lon) homography from four correspondences.

    Both point sets are Hartley-normalised before the 8x9 DLT system is
    solved by SVD; the result is de-normalised and scaled so H[2,2] = 1.
    """
    pairs = [(PixelPoint(*p), GeoPoint(*g)) for p, g in correspondences]
    if len(pairs) != 4:
        raise DegenerateConfigurationError(f"exactly 4 correspondences required, got {len(pairs)}")
    pix = np.array([[p.u, p.v] for p, _ in pairs])
    geo = np.array([[g.lat, g.lon] for _, g in pairs])

    for i, j, k in itertools.combinations(range(4), 3):
        a, b, c = pix[i], pix[j], pix[k]
        scale = max(np.dot(b - a, b - a), np.dot(c - a, c - a), np.dot(c - b, c - b))
        if abs(_cross(a, b, c)) <= COLLINEAR_REL_EPS * scale:
            raise DegenerateConfigurationError(
                f"pixel points {i}, {j}, {k} are collinear: {a.tolist()}, {b.tolist()}, {c.tolist()}"
            )

    T_pix = _hartley(pix)
    T_geo = _hartley(geo)
    pn, _ = _apply_h(T_pix, pix)
    gn, _ = _apply_h(T_geo, geo)

    A = np.zeros((8, 9))
    for i in range(4):
        x, y = pn[i]
        X, Y = gn[i]
        A[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -X * x, -X * y, -X]
        A[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -Y * x, -Y * y, -Y]
    _, s, Vt = np.linalg.svd(A)
    if s[-1] <= 1e-12 * s[0]:
        raise SingularSystemError(f"DLT system rank deficient (singular values {s.tolist()})")
    Hn = Vt[-1].reshape(3, 3)
    Hn_unit = Hn / np.linalg.norm(Hn)
    if abs(np.linalg.det(Hn_unit)) <= DET_EPS:
        raise SingularSystemError("conditioned homography is not invertible")

    H = np.linalg.inv(T_geo) @ Hn @ T_pix
    if abs(H[2, 2]) < HORIZON_EPS:
        raise SingularSystemError("homography cannot be normalised (H[2,2] ~ 0)")
    H = H / H[2, 2]

    hull = _convex_hull(pix)
    _, w_hull = _apply_h(H, hull)
    if not (np.all(w_hull > 0) or np.all(w_hull < 0)):
        raise DegenerateConfigurationError("horizon line crosses the calibration region")

    H.setflags(write=False)
    # inverting H directly loses ~1e-4 px at degree scale; compose the
    # conditioned factors instead
    H_inv = np.linalg.inv(T_pix) @ np.linalg.inv(Hn) @ T_geo
    if abs(H_inv[2, 2]) > HORIZON_EPS:
        H_inv = H_inv / H_inv[2, 2]
    H_inv.setflags(write=False)
    gf = GeoFrame(
        H=H,
        correspondences=tuple(pairs),
        validity=tuple(PixelPoint(float(u), float(v)) for u, v in hull),
        H_inv=H_inv,
    )
    worst = float(np.max(gf.residuals()))
    if worst > INTERPOLATION_TOL_DEG:
        raise SingularSystemError(f"homography reproduces correspondences only to {worst:.3g} deg")
    return gf


def pixel_to_geo(gf: GeoFrame, p) -> Optional[GeoPoint]:
    """Project a pixel to WGS84; ``None`` when it lies outside the validity region."""
    u, v = p
    if not gf.contains((u, v)):
        return None
    H = gf.H
    w = H[2, 0] * u + H[2, 1] * v + H[2, 2]
    if abs(w) < HORIZON_EPS:
        raise HorizonSingularityError(f"pixel ({u}, {v}) maps to the horizon")
    lat = (H[0, 0] * u + H[0, 1] * v + H[0, 2]) / w
    lon = (H[1, 0] * u + H[1, 1] * v + H[1, 2]) / w
    return GeoPoint(float(lat), float(lon))


def geo_to_pixel(gf: GeoFrame, g: GeoPoint) -> PixelPoint:
    """Inverse projection; no validity check is applied."""
    Hi = gf.H_inv
    w = Hi[2, 0] * g.lat + Hi[2, 1] * g.lon + Hi[2, 2]
    if abs(w) < HORIZON_EPS:
        raise HorizonSingularityError(f"geo point {g} maps to the image horizon")
    u = (Hi[0, 0] * g.lat + Hi[0, 1] * g.lon + Hi[0, 2]) / w
    v = (Hi[1, 0] * g.lat + Hi[1, 1] * g.lon + Hi[1, 2]) / w
    return PixelPoint(float(u), float(v))


def ground_anchor(b: BoundingBox) -> PixelPoint:
    """Bottom-centre of the box: the point assumed to touch the road."""
    if not (b.x_min < b.x_max and b.y_min < b.y_max):
        raise InvariantViolation(f"invalid bounding box {b}")
    return PixelPoint((b.x_min + b.x_max) / 2.0, b.y_max)


# -- geodesy ------------------------------------------------------------------


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in metres on the mean-radius sphere."""
    if a.lat == b.lat and a.lon == b.lon:
        return 0.0
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def _wrap_lon(dlon: float) -> float:
    return (dlon + 180.0) % 360.0 - 180.0


def local_offset(origin: GeoPoint, p: GeoPoint) -> Tuple[float, float]:
    """(east, north) metres from ``origin`` to ``p``, equirectangular at the mid-latitude."""
    north = EARTH_RADIUS_M * math.radians(p.lat - origin.lat)
    mid = math.radians((p.lat + origin.lat) / 2.0)
    dlon = p.lon - origin.lon
    if not -180.0 <= dlon <= 180.0:
        dlon = _wrap_lon(dlon)
    east = EARTH_RADIUS_M * math.cos(mid) * math.radians(dlon)
    return east, north


def offset_geo(origin: GeoPoint, east: float, north: float) -> GeoPoint:
    """Exact inverse of :func:`local_offset`."""
    lat = origin.lat + math.degrees(north / EARTH_RADIUS_M)
    mid = math.radians((lat + origin.lat) / 2.0)
    lon = origin.lon + math.degrees(east / (EARTH_RADIUS_M * math.cos(mid)))
    if not -180.0 <= lon <= 180.0:
        lon = _wrap_lon(lon)
    return GeoPoint(lat, lon)


def destination_point(origin: GeoPoint, bearing_deg: float, distance_m: float) -> GeoPoint:
    """Point reached travelling ``distance_m`` along a great circle at ``bearing_deg``."""
    delta = distance_m / EARTH_RADIUS_M
    theta = math.radians(bearing_deg)
    phi1 = math.radians(origin.lat)
    lmb1 = math.radians(origin.lon)
    sin_phi2 = math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta)
    phi2 = math.asin(sin_phi2)
    y = math.sin(theta) * math.sin(delta) * math.cos(phi1)
    x = math.cos(delta) - math.sin(phi1) * sin_phi2
    lmb2 = lmb1 + math.atan2(y, x)
    return GeoPoint(math.degrees(phi2), _wrap_lon(math.degrees(lmb2)))


# -- estimators ---------------------------------------------------------------


class Undistorter(TransformerMixin, BaseEstimator):
    """Point-wise lens correction as a stateless transformer.

    ``transform`` removes distortion, ``inverse_transform`` re-applies it.
    """

    def __init__(self, fx=1.0, fy=1.0, cx=0.0, cy=0.0, k1=0.0, k2=0.0, k3=0.0, p1=0.0, p2=0.0):
        self.fx = fx
        self.fy = fy
        self.cx = cx
        self.cy = cy
        self.k1 = k1
        self.k2 = k2
        self.k3 = k3
        self.p1 = p1
        self.p2 = p2

    @classmethod
    def from_model(cls, m: DistortionModel) -> "Undistorter":
        return cls(m.fx, m.fy, m.cx, m.cy, m.k1, m.k2, m.k3, m.p1, m.p2)

    def fit(self, X=None, y=None):
        self.model_ = DistortionModel(**self.get_params())
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return undistort_points(X, self.model_)

    def inverse_transform(self, X):
        check_is_fitted(self, "model_")
        return distort_points(X, self.model_)


class GeoFramer(TransformerMixin, BaseEstimator):
    """Fit a pixel -> (lat, lon) homography from four correspondences.

    Parameters
    ----------
    restrict_to_region : bool, default=True
        When True, ``transform`` returns NaN rows for pixels outside the
        convex hull of the calibration points.

    Attributes
    ----------
    geoframe_ : GeoFrame
    homography_ : ndarray of shape (3, 3)
    residuals_ : ndarray of shape (4,)
        Reprojection error of each calibration point, in degrees.
    """

    def __init__(self, restrict_to_region=True):
        self.restrict_to_region = restrict_to_region

    def fit(self, X, y):
        X = check_points(X, name="X", n_points=4)
        y = check_points(y, name="y", n_points=4)
        self.geoframe_ = solve_geoframe(
            [(PixelPoint(*p), GeoPoint(*g)) for p, g in zip(X.tolist(), y.tolist())]
        )
        self.homography_ = self.geoframe_.H
        self.residuals_ = self.geoframe_.residuals()
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "geoframe_")
        X = check_points(X)
        xy, w = _apply_h(self.geoframe_.H, X)
        if np.any(np.abs(w) < HORIZON_EPS):
            raise HorizonSingularityError("at least one pixel maps to the horizon")
        out = xy / w[:, None]
        if self.restrict_to_region:
            inside = np.array([self.geoframe_.contains(p) for p in X])
            out[~inside] = np.nan
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "geoframe_")
        X = check_points(X)
        xy, w = _apply_h(self.geoframe_.H_inv, X)
        return xy / w[:, None]
