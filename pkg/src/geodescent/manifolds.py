"""Manifolds with closed-form exponential maps, log maps and parallel transport.

Every manifold stores points in ambient coordinates: vectors for the sphere
and Euclidean space, matrices with orthonormal columns for Stiefel/Grassmann,
matrices with unit-norm rows for the oblique manifold.  The metric is the
ambient Frobenius (dot) product restricted to tangent spaces in all cases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

FEAS_TOL = 1e-10      # feasibility residual allowed on points
TANGENT_TOL = 1e-10   # tangency residual allowed on tangent vectors


class GeometryError(ValueError):
    """A geometric-domain violation, e.g. a log map past the cut locus."""


class CapabilityError(RuntimeError):
    """The requested operation has no closed form on this manifold."""


@dataclass(frozen=True)
class GeometryInfo:
    """Curvature bound, injectivity radius and intrinsic dimension."""

    curvature_bound: float
    injectivity_radius: float
    dimension: int


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Point:
    """An element of a manifold, stored in ambient coordinates."""

    manifold: "Manifold"
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coords", _freeze(self.coords))

    def __repr__(self):
        return f"Point({self.manifold.name}, {np.array2string(self.coords, precision=4)})"


@dataclass(frozen=True, eq=False)
class Tangent:
    """A tangent vector anchored at a base point."""

    base: Point
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coords", _freeze(self.coords))

    @property
    def manifold(self) -> "Manifold":
        return self.base.manifold

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def __repr__(self):
        return f"Tangent({self.manifold.name}, norm={self.norm():.4g})"


class Manifold:
    """Base class: shared checks, the Frobenius metric and ball sampling."""

    name: str = "manifold"
    shape: tuple[int, ...] = ()

    # -- geometry data -------------------------------------------------

    def geometry(self) -> GeometryInfo:
        raise NotImplementedError

    # -- constructors with invariant checks ----------------------------

    def point(self, coords) -> Point:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != self.shape:
            raise ValueError(f"{self.name}: expected coords of shape {self.shape}, got {coords.shape}")
        res = self.feasibility_residual(coords)
        if res > FEAS_TOL:
            raise ValueError(f"{self.name}: point infeasible, residual {res:.3e} > {FEAS_TOL:.0e}")
        return Point(self, coords)

    def tangent(self, x: Point, coords) -> Tangent:
        self._check_point(x)
        coords = np.asarray(coords, dtype=float)
        if coords.shape != self.shape:
            raise ValueError(f"{self.name}: expected tangent of shape {self.shape}, got {coords.shape}")
        res = self.tangency_residual(x, coords)
        if res > TANGENT_TOL:
            raise ValueError(f"{self.name}: vector not tangent, residual {res:.3e} > {TANGENT_TOL:.0e}")
        return Tangent(x, coords)

    def feasibility_residual(self, coords: np.ndarray) -> float:
        raise NotImplementedError

    def tangency_residual(self, x: Point, coords: np.ndarray) -> float:
        raise NotImplementedError

    # -- core maps ------------------------------------------------------

    def exp(self, x: Point, v: Tangent) -> Point:
        raise NotImplementedError

    def log(self, x: Point, y: Point) -> Tangent:
        raise NotImplementedError

    def dist(self, x: Point, y: Point) -> float:
        raise NotImplementedError

    def transport(self, x: Point, y: Point, w: Tangent) -> Tangent:
        raise NotImplementedError

    def project_tangent(self, x: Point, a) -> Tangent:
        raise NotImplementedError

    def inner(self, x: Point, u: Tangent, v: Tangent) -> float:
        """Riemannian inner product: the ambient Frobenius product."""
        self._check_point(x)
        self._check_base(x, u)
        self._check_base(x, v)
        return float(np.sum(u.coords * v.coords))

    def sample_tangent_ball(self, x: Point, radius: float, rng: np.random.Generator) -> Tangent:
        """Uniform sample from the radius-`radius` ball in the tangent space.

        Direction comes from a projected standard normal, the norm from
        radius * U^(1/d) with d the intrinsic dimension, which together give
        the uniform distribution on the d-dimensional ball.
        """
        self._check_point(x)
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        d = self.geometry().dimension
        for _ in range(100):
            g = self.project_tangent(x, rng.standard_normal(self.shape)).coords
            gn = np.linalg.norm(g)
            if gn > 1e-12:
                break
        else:  # pragma: no cover - probability zero
            raise RuntimeError("failed to draw a nonzero tangent direction")
        norm = radius * rng.uniform() ** (1.0 / d)
        return Tangent(x, (norm / gn) * g)

    def random_point(self, rng: np.random.Generator) -> Point:
        raise NotImplementedError

    # -- internal checks -------------------------------------------------

    def _check_point(self, x: Point):
        if x.manifold.name != self.name:
            raise ValueError(f"point on {x.manifold.name}, expected {self.name}")

    def _check_base(self, x: Point, v: Tangent):
        if v.base is not x and not np.array_equal(v.base.coords, x.coords):
            raise ValueError("tangent vector anchored at a different point")

    def _check_pair(self, x: Point, y: Point):
        self._check_point(x)
        self._check_point(y)

    def _check_injectivity(self, d: float, what: str):
        inj = self.geometry().injectivity_radius
        if d >= inj:
            raise GeometryError(
                f"{what} undefined: distance {d:.6g} >= injectivity radius {inj:.6g} of {self.name}"
            )

    def __repr__(self):
        return self.name


def _qr_sign_fixed(y: np.ndarray) -> np.ndarray:
    """Thin QR with positive diagonal of R; absorbs rounding drift only."""
    q, r = np.linalg.qr(y)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


class Euclidean(Manifold):
    """Flat R^n baseline: all maps are affine identities."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        self.n = n
        self.name = f"euclidean({n})"
        self.shape = (n,)

    def geometry(self) -> GeometryInfo:
        return GeometryInfo(0.0, math.inf, self.n)

    def feasibility_residual(self, coords):
        return 0.0

    def tangency_residual(self, x, coords):
        return 0.0

    def exp(self, x, v):
        self._check_base(x, v)
        if not np.any(v.coords):
            return x
        return Point(self, x.coords + v.coords)

    def log(self, x, y):
        self._check_pair(x, y)
        return Tangent(x, y.coords - x.coords)

    def dist(self, x, y):
        self._check_pair(x, y)
        return float(np.linalg.norm(y.coords - x.coords))

    def transport(self, x, y, w):
        self._check_base(x, w)
        self._check_point(y)
        return Tangent(y, w.coords)

    def project_tangent(self, x, a):
        self._check_point(x)
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise ValueError(f"{self.name}: expected shape {self.shape}, got {a.shape}")
        return Tangent(x, a)

    def random_point(self, rng):
        return Point(self, rng.standard_normal(self.n))


def _sphere_exp(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    th = np.linalg.norm(v)
    if th == 0.0:
        return x
    if th < 1e-9:
        y = x + v  # cubic error, below rounding at this scale
    else:
        y = math.cos(th) * x + (math.sin(th) / th) * v
    return y / np.linalg.norm(y)


def _sphere_log(x: np.ndarray, y: np.ndarray, inj_guard: bool = True):
    c = float(np.clip(np.dot(x, y), -1.0, 1.0))
    u = y - c * x
    s = float(np.linalg.norm(u))
    d = math.atan2(s, c)
    if inj_guard and d >= math.pi - 1e-12:
        raise GeometryError(
            f"log undefined: points at distance {d:.6g} >= injectivity radius {math.pi:.6g} of the sphere"
        )
    if s < 1e-300:
        return np.zeros_like(x)
    return (d / s) * u


def _sphere_dist(x: np.ndarray, y: np.ndarray) -> float:
    c = float(np.clip(np.dot(x, y), -1.0, 1.0))
    s = float(np.linalg.norm(y - c * x))
    return math.atan2(s, c)


def _sphere_transport(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    c = float(np.dot(x, y))
    if c <= -1.0 + 1e-12:
        raise GeometryError(
            f"transport undefined: points at distance {math.pi:.6g} >= injectivity radius of the sphere"
        )
    xy = x + y
    out = w - (np.dot(xy, w) / (1.0 + c)) * xy
    return out - np.dot(y, out) * y  # kill rounding in the normal direction


class Sphere(Manifold):
    """Unit sphere S^(n-1) in R^n.  Constant curvature 1, injectivity pi."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("n must be >= 2")
        self.n = n
        self.name = f"sphere({n})"
        self.shape = (n,)

    def geometry(self) -> GeometryInfo:
        return GeometryInfo(1.0, math.pi, self.n - 1)

    def feasibility_residual(self, coords):
        return abs(float(np.linalg.norm(coords)) - 1.0)

    def tangency_residual(self, x, coords):
        return abs(float(np.dot(x.coords, coords)))

    def exp(self, x, v):
        self._check_base(x, v)
        if not np.any(v.coords):
            return x
        return Point(self, _sphere_exp(x.coords, v.coords))

    def log(self, x, y):
        self._check_pair(x, y)
        return Tangent(x, _sphere_log(x.coords, y.coords))

    def dist(self, x, y):
        self._check_pair(x, y)
        return _sphere_dist(x.coords, y.coords)

    def transport(self, x, y, w):
        self._check_base(x, w)
        self._check_point(y)
        self._check_injectivity(self.dist(x, y), "transport")
        return Tangent(y, _sphere_transport(x.coords, y.coords, w.coords))

    def project_tangent(self, x, a):
        self._check_point(x)
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise ValueError(f"{self.name}: expected shape {self.shape}, got {a.shape}")
        return Tangent(x, a - np.dot(x.coords, a) * x.coords)

    def random_point(self, rng):
        g = rng.standard_normal(self.n)
        return Point(self, g / np.linalg.norm(g))


class Oblique(Manifold):
    """Oblique manifold: d x p matrices with unit-norm rows.

    Product of d unit spheres in R^p.  All maps act row by row; the distance
    is the l2 combination of the per-row great-circle distances.
    """

    def __init__(self, d: int, p: int):
        if d < 1 or p < 2:
            raise ValueError("need d >= 1 rows on spheres of dimension p >= 2")
        self.d = d
        self.p = p
        self.name = f"oblique({d},{p})"
        self.shape = (d, p)

    def geometry(self) -> GeometryInfo:
        # per-factor curvature 1; injectivity of a product is the factor minimum
        return GeometryInfo(1.0, math.pi, self.d * (self.p - 1))

    def feasibility_residual(self, coords):
        return float(np.max(np.abs(np.linalg.norm(coords, axis=1) - 1.0)))

    def tangency_residual(self, x, coords):
        return float(np.max(np.abs(np.sum(x.coords * coords, axis=1))))

    def _row_angles(self, x: np.ndarray, y: np.ndarray):
        c = np.clip(np.sum(x * y, axis=1), -1.0, 1.0)
        s = np.linalg.norm(y - c[:, None] * x, axis=1)
        return np.arctan2(s, c), c

    def _guard_rows(self, d_rows: np.ndarray, what: str):
        bad = np.nonzero(d_rows >= math.pi - 1e-12)[0]
        if bad.size:
            raise GeometryError(
                f"{what} undefined: row {bad[0]} at distance {d_rows[bad[0]]:.6g} >= "
                f"injectivity radius {math.pi:.6g} of the sphere factor"
            )

    def exp(self, x, v):
        self._check_base(x, v)
        if not np.any(v.coords):
            return x
        th = np.linalg.norm(v.coords, axis=1, keepdims=True)
        safe = np.where(th > 0, th, 1.0)
        small = th < 1e-9
        out = np.where(small, x.coords + v.coords,
                       np.cos(th) * x.coords + (np.sin(th) / safe) * v.coords)
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        return Point(self, out)

    def log(self, x, y):
        self._check_pair(x, y)
        c = np.clip(np.sum(x.coords * y.coords, axis=1), -1.0, 1.0)
        u = y.coords - c[:, None] * x.coords
        s = np.linalg.norm(u, axis=1)
        d_rows = np.arctan2(s, c)
        self._guard_rows(d_rows, "log")
        factor = np.where(s > 1e-300, d_rows / np.where(s > 0, s, 1.0), 0.0)
        return Tangent(x, factor[:, None] * u)

    def dist(self, x, y):
        self._check_pair(x, y)
        d_rows, _ = self._row_angles(x.coords, y.coords)
        return float(np.linalg.norm(d_rows))

    def transport(self, x, y, w):
        self._check_base(x, w)
        self._check_point(y)
        d_rows, c = self._row_angles(x.coords, y.coords)
        self._guard_rows(d_rows, "transport")
        xy = x.coords + y.coords
        coef = np.sum(xy * w.coords, axis=1) / (1.0 + c)
        out = w.coords - coef[:, None] * xy
        out -= np.sum(y.coords * out, axis=1)[:, None] * y.coords
        return Tangent(y, out)

    def project_tangent(self, x, a):
        self._check_point(x)
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise ValueError(f"{self.name}: expected shape {self.shape}, got {a.shape}")
        dots = np.sum(x.coords * a, axis=1, keepdims=True)
        return Tangent(x, a - dots * x.coords)

    def random_point(self, rng):
        g = rng.standard_normal(self.shape)
        return Point(self, g / np.linalg.norm(g, axis=1, keepdims=True))


class Grassmann(Manifold):
    """Grassmann manifold of k-dimensional subspaces of R^n.

    Points are orthonormal n x k representatives; tangents satisfy X^T V = 0.
    Exp and log are closed forms through the thin SVD of the tangent, and
    parallel transport along geodesics is exact (and therefore isometric).

    The curvature bound and injectivity radius default to 2 and pi/2; both can
    be overridden at construction since downstream thresholds treat them as
    configuration, not derived data.
    """

    def __init__(self, n: int, k: int, curvature_bound: float = 2.0,
                 injectivity_radius: float = math.pi / 2):
        if not 1 <= k < n:
            raise ValueError("need 1 <= k < n")
        self.n = n
        self.k = k
        self._curvature = curvature_bound
        self._inj = injectivity_radius
        self.name = f"grassmann({n},{k})"
        self.shape = (n, k)

    def geometry(self) -> GeometryInfo:
        return GeometryInfo(self._curvature, self._inj, self.k * (self.n - self.k))

    def feasibility_residual(self, coords):
        g = coords.T @ coords
        return float(np.linalg.norm(g - np.eye(self.k)))

    def tangency_residual(self, x, coords):
        return float(np.linalg.norm(x.coords.T @ coords))

    def exp(self, x, v):
        self._check_base(x, v)
        if not np.any(v.coords):
            return x
        u, s, vt = np.linalg.svd(v.coords, full_matrices=False)
        y = x.coords @ (vt.T * np.cos(s)) @ vt + (u * np.sin(s)) @ vt
        return Point(self, _qr_sign_fixed(y))

    def log(self, x, y):
        self._check_pair(x, y)
        self._check_injectivity(self.dist(x, y), "log")
        m = x.coords.T @ y.coords
        t = (y.coords - x.coords @ m) @ np.linalg.inv(m)
        u, s, vt = np.linalg.svd(t, full_matrices=False)
        out = (u * np.arctan(s)) @ vt
        # clean rounding so tangency holds to working precision
        return Tangent(x, out - x.coords @ (x.coords.T @ out))

    def dist(self, x, y):
        self._check_pair(x, y)
        s = np.linalg.svd(x.coords.T @ y.coords, compute_uv=False)
        theta = np.arccos(np.clip(s, 0.0, 1.0))
        return float(np.linalg.norm(theta))

    def transport(self, x, y, w):
        self._check_base(x, w)
        self._check_point(y)
        xi = self.log(x, y)  # enforces the injectivity precondition
        u, s, vt = np.linalg.svd(xi.coords, full_matrices=False)
        keep = s > 1e-14
        if not np.any(keep):
            return Tangent(y, w.coords)
        u, s, vt = u[:, keep], s[keep], vt[keep]
        uw = u.T @ w.coords
        out = w.coords + (u * (np.cos(s) - 1.0)) @ uw - (x.coords @ (vt.T * np.sin(s))) @ uw
        return Tangent(y, out - y.coords @ (y.coords.T @ out))

    def project_tangent(self, x, a):
        self._check_point(x)
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise ValueError(f"{self.name}: expected shape {self.shape}, got {a.shape}")
        return Tangent(x, a - x.coords @ (x.coords.T @ a))

    def random_point(self, rng):
        return Point(self, _qr_sign_fixed(rng.standard_normal(self.shape)))


class Stiefel(Manifold):
    """Stiefel manifold of n x k orthonormal frames.

    The geodesic (for the embedded metric) has a closed form through a 2k x 2k
    matrix exponential.  There is no closed-form log, so log, dist and
    transport raise CapabilityError; use Grassmann when those maps are needed.
    """

    def __init__(self, n: int, k: int, curvature_bound: float = 1.0,
                 injectivity_radius: float = math.pi / 2):
        if not 1 <= k <= n:
            raise ValueError("need 1 <= k <= n")
        self.n = n
        self.k = k
        self._curvature = curvature_bound
        self._inj = injectivity_radius
        self.name = f"stiefel({n},{k})"
        self.shape = (n, k)

    def geometry(self) -> GeometryInfo:
        return GeometryInfo(self._curvature, self._inj,
                            self.n * self.k - self.k * (self.k + 1) // 2)

    def feasibility_residual(self, coords):
        g = coords.T @ coords
        return float(np.linalg.norm(g - np.eye(self.k)))

    def tangency_residual(self, x, coords):
        m = x.coords.T @ coords
        return float(np.linalg.norm(m + m.T))

    def exp(self, x, v):
        # geodesic X(t) = [X, V] expm(t [[A, -S], [I, A]]) [I; 0] expm(-t A),
        # A = X^T V (skew), S = V^T V
        self._check_base(x, v)
        if not np.any(v.coords):
            return x
        a = x.coords.T @ v.coords
        s = v.coords.T @ v.coords
        k = self.k
        block = np.zeros((2 * k, 2 * k))
        block[:k, :k] = a
        block[:k, k:] = -s
        block[k:, :k] = np.eye(k)
        block[k:, k:] = a
        big = expm(block)
        y = (np.hstack([x.coords, v.coords]) @ big[:, :k]) @ expm(-a)
        return Point(self, _qr_sign_fixed(y))

    def log(self, x, y):
        raise CapabilityError(f"{self.name}: no closed-form log map")

    def dist(self, x, y):
        raise CapabilityError(f"{self.name}: no closed-form distance (requires log)")

    def transport(self, x, y, w):
        raise CapabilityError(f"{self.name}: no closed-form parallel transport (requires log)")

    def project_tangent(self, x, a):
        self._check_point(x)
        a = np.asarray(a, dtype=float)
        if a.shape != self.shape:
            raise ValueError(f"{self.name}: expected shape {self.shape}, got {a.shape}")
        m = x.coords.T @ a
        return Tangent(x, a - x.coords @ ((m + m.T) / 2.0))

    def random_point(self, rng):
        return Point(self, _qr_sign_fixed(rng.standard_normal(self.shape)))
