"""Cost functions with closed-form Riemannian gradients, finite-difference
Hessian-vector products, and a smallest-Hessian-eigenvalue estimator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .manifolds import (
    GeometryError,
    Grassmann,
    Manifold,
    Oblique,
    Point,
    Sphere,
    Tangent,
)

EPS_MACH = np.finfo(float).eps


class Objective:
    """A smooth cost on a manifold, evaluated through an ambient extension.

    Subclasses provide `value` and `ambient_grad`; the Riemannian gradient is
    the tangent projection of the ambient gradient.  `exact_hess` returns the
    exact Riemannian Hessian-vector product where a closed form exists and
    None otherwise (callers fall back to finite differences).
    """

    manifold: Manifold

    def value(self, x: Point) -> float:
        raise NotImplementedError

    def ambient_grad(self, x: Point) -> np.ndarray:
        raise NotImplementedError

    def rgrad(self, x: Point) -> Tangent:
        return self.manifold.project_tangent(x, self.ambient_grad(x))

    def exact_hess(self, x: Point, v: Tangent) -> Tangent | None:
        return None

    def has_exact_hess(self) -> bool:
        return False


class DiagonalQuadratic(Objective):
    """f(x) = x^T diag(d) x, on the unit sphere or on Euclidean space.

    On the sphere the exact Riemannian Hessian is
    H[v] = 2 P (diag(d) - (x^T diag(d) x) I) P v  with  P = I - x x^T.
    """

    def __init__(self, diag, manifold: Manifold | None = None):
        self.diag = np.asarray(diag, dtype=float)
        if self.diag.ndim != 1:
            raise ValueError("diag must be a vector")
        self.manifold = manifold if manifold is not None else Sphere(self.diag.size)
        if self.manifold.shape != self.diag.shape:
            raise ValueError(
                f"diagonal of size {self.diag.size} does not match {self.manifold.name}"
            )

    def value(self, x):
        return float(x.coords @ (self.diag * x.coords))

    def ambient_grad(self, x):
        return 2.0 * self.diag * x.coords

    def exact_hess(self, x, v):
        if isinstance(self.manifold, Sphere):
            pv = self.manifold.project_tangent(x, v.coords).coords
            fx = float(x.coords @ (self.diag * x.coords))
            w = 2.0 * (self.diag * pv - fx * pv)
            return self.manifold.project_tangent(x, w)
        if self.manifold.name.startswith("euclidean"):
            return Tangent(x, 2.0 * self.diag * v.coords)
        return None

    def has_exact_hess(self):
        return isinstance(self.manifold, Sphere) or self.manifold.name.startswith("euclidean")


class KPCA(Objective):
    """f(X) = -1/2 tr(X^T H X) on Grassmann: top-k invariant subspace of H."""

    def __init__(self, h, k: int, manifold: Grassmann | None = None):
        self.h = np.asarray(h, dtype=float)
        n = self.h.shape[0]
        if self.h.shape != (n, n):
            raise ValueError("H must be square")
        sym_res = float(np.linalg.norm(self.h - self.h.T))
        if sym_res > 1e-12:
            raise ValueError(f"H must be symmetric, asymmetry {sym_res:.3e} > 1e-12")
        self.k = k
        self.manifold = manifold if manifold is not None else Grassmann(n, k)
        if self.manifold.shape != (n, k):
            raise ValueError("manifold shape does not match (n, k)")

    def value(self, x):
        return -0.5 * float(np.sum(x.coords * (self.h @ x.coords)))

    def ambient_grad(self, x):
        return -self.h @ x.coords


class BurerMonteiro(Objective):
    """f(Y) = 1/2 tr(A Y Y^T) on the oblique manifold (unit-norm rows of Y)."""

    def __init__(self, a, p: int, manifold: Oblique | None = None):
        self.a = np.asarray(a, dtype=float)
        d = self.a.shape[0]
        if self.a.shape != (d, d):
            raise ValueError("A must be square")
        sym_res = float(np.linalg.norm(self.a - self.a.T))
        if sym_res > 1e-12:
            raise ValueError(f"A must be symmetric, asymmetry {sym_res:.3e} > 1e-12")
        self.p = p
        self.manifold = manifold if manifold is not None else Oblique(d, p)
        if self.manifold.shape != (d, p):
            raise ValueError("manifold shape does not match (d, p)")

    def value(self, x):
        return 0.5 * float(np.sum(x.coords * (self.a @ x.coords)))

    def ambient_grad(self, x):
        return self.a @ x.coords


def default_fd_step(x: Point, v: Tangent) -> float:
    """Central-difference step balancing truncation against rounding."""
    return EPS_MACH ** (1.0 / 3.0) * (1.0 + float(np.linalg.norm(x.coords))) / (1.0 + v.norm())


def hess_vec(obj: Objective, x: Point, v: Tangent, step: float | None = None) -> Tangent:
    """Riemannian Hessian-vector product by central differences.

    Transports the gradients at exp(x, +-s v) back to x along the geodesic and
    differences them:  [G(+s) - G(-s)] / (2 s), projected onto the tangent
    space at x.  Exact-Hessian objectives are still differenced here; use
    `Objective.exact_hess` for the closed form.
    """
    man = obj.manifold
    man._check_base(x, v)
    if not np.any(v.coords):
        return Tangent(x, np.zeros_like(v.coords))
    s = default_fd_step(x, v) if step is None else float(step)
    if s <= 0:
        raise ValueError(f"step must be positive, got {s}")
    reach = s * v.norm()
    inj = man.geometry().injectivity_radius
    if reach >= inj:
        raise GeometryError(
            f"finite-difference geodesic of length {reach:.3g} leaves the "
            f"injectivity ball (radius {inj:.3g})"
        )
    sv = Tangent(x, s * v.coords)
    x_plus = man.exp(x, sv)
    x_minus = man.exp(x, Tangent(x, -s * v.coords))
    g_plus = man.transport(x_plus, x, obj.rgrad(x_plus))
    g_minus = man.transport(x_minus, x, obj.rgrad(x_minus))
    return man.project_tangent(x, (g_plus.coords - g_minus.coords) / (2.0 * s))


def _hess_operator(obj: Objective, x: Point, use_exact: bool):
    if use_exact:
        def op(v: Tangent) -> Tangent:
            return obj.exact_hess(x, v)
    else:
        def op(v: Tangent) -> Tangent:
            return hess_vec(obj, x, v)
    return op


def min_hess_eig(obj: Objective, x: Point, tol: float, rng: np.random.Generator,
                 max_iters: int = 500, use_exact: str = "auto"):
    """Smallest eigenvalue of the Riemannian Hessian at x, with eigenvector.

    Power iteration on the shifted operator sigma*I - H, where sigma is an
    upper bound on the spectrum obtained from sampled Rayleigh quotients plus
    a short power-iteration refinement.  The iterates are collected into a
    small orthonormal Krylov basis and the returned pair is the minimal
    Rayleigh-Ritz pair on that basis; near-tied eigenvalues otherwise stall
    the plain power recursion below any fixed tolerance.  Only Hessian-vector
    products are used, so the estimate works for objectives without an exact
    Hessian.

    Parameters
    ----------
    tol : float
        Stopping tolerance on the Rayleigh-quotient change per iteration.
    use_exact : {"auto", "always", "never"}
        Whether to use the objective's closed-form Hessian when available.

    Returns
    -------
    (lambda_min, direction) : (float, Tangent)
        Issues a warning and returns the best estimate if the Rayleigh
        quotient has not settled after `max_iters` iterations.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    man = obj.manifold
    exact = obj.has_exact_hess() if use_exact == "auto" else (use_exact == "always")
    op = _hess_operator(obj, x, exact)
    dim = man.geometry().dimension

    def draw_unit() -> Tangent:
        t = man.project_tangent(x, rng.standard_normal(man.shape))
        n = t.norm()
        while n < 1e-12:  # pragma: no cover - probability zero
            t = man.project_tangent(x, rng.standard_normal(man.shape))
            n = t.norm()
        return Tangent(x, t.coords / n)

    # Upper bound on |spectrum|: sampled Rayleigh quotients, then a short
    # power iteration on H itself to tighten it.
    sigma = 0.0
    for _ in range(5):
        u = draw_unit()
        sigma = max(sigma, abs(float(np.sum(u.coords * op(u).coords))))
    u = draw_unit()
    for _ in range(20):
        hu = op(u)
        n = hu.norm()
        if n < 1e-14:
            break
        sigma = max(sigma, n)
        u = Tangent(x, hu.coords / n)
    sigma = 1.5 * sigma + tol

    basis: list[np.ndarray] = []

    def absorb(t: Tangent):
        if len(basis) >= min(dim, 25):
            return
        c = t.coords.copy()
        for b in basis:
            c -= float(np.sum(b * c)) * b
        n = float(np.linalg.norm(c))
        if n > 1e-10:
            basis.append(c / n)

    v = draw_unit()
    absorb(v)
    rq_prev = float(np.sum(v.coords * op(v).coords))
    converged = False
    for _ in range(max_iters):
        hv = op(v)
        w = man.project_tangent(x, sigma * v.coords - hv.coords)
        n = w.norm()
        if n < 1e-14:
            # shifted operator annihilates v: spectrum is {sigma}-degenerate
            converged = True
            break
        v = Tangent(x, w.coords / n)
        absorb(v)
        rq = float(np.sum(v.coords * op(v).coords))
        if abs(rq - rq_prev) <= 0.1 * tol:
            rq_prev = rq
            converged = True
            break
        rq_prev = rq
    if not converged:
        warnings.warn(
            f"min_hess_eig: Rayleigh quotient not settled after {max_iters} "
            f"iterations; returning best estimate {rq_prev:.6g}",
            RuntimeWarning,
        )

    # Rayleigh-Ritz polish on the collected Krylov basis.
    if basis:
        images = [op(Tangent(x, b)).coords for b in basis]
        k = len(basis)
        t_mat = np.empty((k, k))
        for i in range(k):
            for j in range(k):
                t_mat[i, j] = float(np.sum(basis[i] * images[j]))
        t_mat = (t_mat + t_mat.T) / 2.0
        vals, vecs = np.linalg.eigh(t_mat)
        if vals[0] <= rq_prev:
            coeff = vecs[:, 0]
            direction = np.tensordot(coeff, np.asarray(basis), axes=1)
            direction /= np.linalg.norm(direction)
            return float(vals[0]), Tangent(x, direction)
    return rq_prev, v


@dataclass(frozen=True)
class SmoothnessEstimate:
    """Empirical gradient/Hessian Lipschitz constants over a sampled region.

    Both are max-ratio estimates, hence lower bounds on the true constants
    and monotone nondecreasing in the sample set.
    """

    beta_hat: float
    rho_hat: float
    num_samples: int
    region_radius: float


def estimate_smoothness(obj: Objective, center: Point, radius: float,
                        n_samples: int, rng: np.random.Generator,
                        hess_dirs: int = 2) -> SmoothnessEstimate:
    """Estimate gradient/Hessian Lipschitz constants by pairwise max ratios.

    Samples points in the geodesic ball around `center` and maximizes
    ||rgrad(y) - transport(rgrad(x))|| / d(x, y) over pairs (beta_hat), and
    the analogous transported Hessian-vector difference over random
    directions (rho_hat).  Pairs closer than 1e-12 are skipped.
    """
    man = obj.manifold
    if n_samples < 2:
        raise ValueError("need n_samples >= 2")
    if radius >= man.geometry().injectivity_radius:
        raise ValueError("radius must be below the injectivity radius")
    # per-pair direction streams keyed by (i, j) so that growing the sample
    # set reuses earlier probes; this makes the max-ratio estimates exactly
    # monotone in n_samples
    dir_base = int(rng.integers(2 ** 62))
    pts = [man.exp(center, man.sample_tangent_ball(center, radius, rng)) for _ in range(n_samples)]
    grads = [obj.rgrad(p) for p in pts]
    exact = obj.has_exact_hess()
    beta_hat = 0.0
    rho_hat = 0.0
    used = 0
    for i in range(n_samples):
        for j in range(i + 1, n_samples):
            xi, xj = pts[i], pts[j]
            d = man.dist(xi, xj)
            if d < 1e-12:
                continue
            used += 1
            moved = man.transport(xi, xj, grads[i])
            beta_hat = max(beta_hat, float(np.linalg.norm(grads[j].coords - moved.coords)) / d)
            op_i = _hess_operator(obj, xi, exact)
            op_j = _hess_operator(obj, xj, exact)
            pair_rng = np.random.default_rng([dir_base, i, j])
            for _ in range(hess_dirs):
                t = man.project_tangent(xi, pair_rng.standard_normal(man.shape))
                n = t.norm()
                if n < 1e-12:
                    continue
                t = Tangent(xi, t.coords / n)
                hj = op_j(man.transport(xi, xj, t))
                hi_moved = man.transport(xi, xj, op_i(t))
                rho_hat = max(rho_hat, float(np.linalg.norm(hj.coords - hi_moved.coords)) / d)
    if used == 0:
        raise ValueError("all sampled pairs degenerate (distance < 1e-12)")
    return SmoothnessEstimate(beta_hat, rho_hat, n_samples, radius)
