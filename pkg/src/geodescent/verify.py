"""Empirical checks of the geometric inequalities behind the saddle-escape
analysis, run on manifolds with closed-form maps.

Each check samples configurations at a sequence of shrinking scales, records
the worst residual per scale, fits the log-log slope of residual against
scale, and fits the empirical constant as the largest residual-to-bound
ratio.  Constants are reported, never asserted against fixed values; the pass
criteria are the slope windows plus per-sample bound audits.  Every check has
a falsification mode (expected decay exponent lowered by one) that must fail,
guarding against vacuous passes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .manifolds import CapabilityError, GeometryError, Manifold, Point, Tangent
from .objectives import Objective, hess_vec, min_hess_eig
from .optimizer import ThresholdSet, classify_stationarity

SLOPE_HALF_WIDTH = 0.3


@dataclass
class VerificationReport:
    lemma_id: str
    n_samples: int
    scales: list[float]
    max_residual_per_scale: list[float]
    fitted_slope: float
    fitted_constant: float
    passed: bool
    slope_window: tuple[float, float] | None = None
    details: dict = field(default_factory=dict)


def _fit_slope(scales, residuals) -> float:
    pts = [(s, r) for s, r in zip(scales, residuals) if r > 0]
    if len(pts) < 2:
        return math.nan
    xs = np.log([p[0] for p in pts])
    ys = np.log([p[1] for p in pts])
    return float(np.polyfit(xs, ys, 1)[0])


def _slope_window(expected: float, falsify: bool) -> tuple[float, float]:
    center = expected - 1.0 if falsify else expected
    return (center - SLOPE_HALF_WIDTH, center + SLOPE_HALF_WIDTH)


def _in_window(slope: float, window: tuple[float, float]) -> bool:
    return math.isfinite(slope) and window[0] <= slope <= window[1]


def _unit_tangent(man: Manifold, x: Point, rng: np.random.Generator) -> Tangent:
    t = man.project_tangent(x, rng.standard_normal(man.shape))
    n = t.norm()
    while n < 1e-12:  # pragma: no cover - probability zero
        t = man.project_tangent(x, rng.standard_normal(man.shape))
        n = t.norm()
    return Tangent(x, t.coords / n)


def _tangent_of_norm(man, x, norm, rng) -> Tangent:
    u = _unit_tangent(man, x, rng)
    return Tangent(x, norm * u.coords)


def _ratio(residual: float, bound: float) -> float:
    if bound > 1e-300:
        return residual / bound
    return 0.0 if residual <= 1e-12 else math.inf


def check_two_step(manifold: Manifold, n: int, scales, rng: np.random.Generator,
                   falsify: bool = False) -> VerificationReport:
    """Two-step commutation: moving along y+a at once versus moving along a,
    transporting y and moving again.  The defect is bounded by
    c1 * min(|a|, |y|) * (|a| + |y|)^2, hence decays cubically in the scale.
    """
    scales = sorted(scales, reverse=True)
    max_res, max_ratio = [], 0.0
    for s in scales:
        worst = 0.0
        for _ in range(n):
            x = manifold.random_point(rng)
            a = _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng)
            y = _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng)
            z = manifold.exp(x, a)
            p1 = manifold.exp(x, Tangent(x, a.coords + y.coords))
            p2 = manifold.exp(z, manifold.transport(x, z, y))
            res = manifold.dist(p1, p2)
            bound = min(a.norm(), y.norm()) * (a.norm() + y.norm()) ** 2
            worst = max(worst, res)
            max_ratio = max(max_ratio, _ratio(res, bound))
        max_res.append(worst)
    slope = _fit_slope(scales, max_res)
    window = _slope_window(3.0, falsify)
    passed = _in_window(slope, window) and math.isfinite(max_ratio)
    return VerificationReport("two-step", n * len(scales), list(scales), max_res,
                              slope, max_ratio, passed, window)


def check_log_bilipschitz(manifold: Manifold, n: int, R_values, rng: np.random.Generator,
                          falsify: bool = False) -> VerificationReport:
    """Bi-Lipschitz distortion of the log map on triples within diameter R.

    Measures q = |log_x(y) - log_x(z)| / d(y, z); the deviation max(q-1, 1/q-1)
    scales as R^2, with fitted constants c2 (lower side) and c3 (upper side).
    """
    R_values = sorted(R_values, reverse=True)
    max_dev, c2_fit, c3_fit = [], 0.0, 0.0
    for R in R_values:
        worst = 0.0
        for _ in range(n):
            x = manifold.random_point(rng)
            y = manifold.exp(x, _tangent_of_norm(manifold, x, R * rng.uniform(0.3, 0.5), rng))
            z = manifold.exp(x, _tangent_of_norm(manifold, x, R * rng.uniform(0.3, 0.5), rng))
            d = manifold.dist(y, z)
            if d < 1e-12:
                continue
            q = float(np.linalg.norm(manifold.log(x, y).coords - manifold.log(x, z).coords)) / d
            dev = max(q - 1.0, 1.0 / q - 1.0, 0.0)
            worst = max(worst, dev)
            c3_fit = max(c3_fit, (q - 1.0) / R ** 2)
            c2_fit = max(c2_fit, (1.0 / q - 1.0) / R ** 2)
        max_dev.append(worst)
    slope = _fit_slope(R_values, max_dev)
    window = _slope_window(2.0, falsify)
    passed = _in_window(slope, window)
    return VerificationReport("log-bilipschitz", n * len(R_values), list(R_values),
                              max_dev, slope, max(c2_fit, c3_fit), passed, window,
                              details={"c2": c2_fit, "c3": c3_fit})


def check_transport_contraction(manifold: Manifold, n: int, rng: np.random.Generator,
                                falsify: bool = False,
                                scales=(0.4, 0.2, 0.1, 0.05)) -> VerificationReport:
    """Endpoint spread of parallel geodesics: d(exp_x(w), exp_y(transport w))
    is at most c4 * d(x, y).  The fitted c4 must be finite and stable across
    distance scales (no growth as the base pair shrinks)."""
    scales = sorted(scales, reverse=True)
    expo = 0.0 if falsify else 1.0
    max_res, per_scale_ratio = [], []
    for s in scales:
        worst_res, worst_ratio = 0.0, 0.0
        for _ in range(n):
            x = manifold.random_point(rng)
            y = manifold.exp(x, _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng))
            w = _tangent_of_norm(manifold, x, rng.uniform(0.2, 1.0), rng)
            res = manifold.dist(manifold.exp(x, w),
                                manifold.exp(y, manifold.transport(x, y, w)))
            d = manifold.dist(x, y)
            worst_res = max(worst_res, res)
            worst_ratio = max(worst_ratio, _ratio(res, d ** expo))
        max_res.append(worst_res)
        per_scale_ratio.append(worst_ratio)
    c4 = max(per_scale_ratio)
    lo = min(r for r in per_scale_ratio if r > 0) if any(r > 0 for r in per_scale_ratio) else 0.0
    stable = math.isfinite(c4) and lo > 0 and c4 / lo <= 2.0
    return VerificationReport("transport-contraction", n * len(scales), list(scales),
                              max_res, _fit_slope(scales, max_res), c4, stable,
                              None, details={"ratio_per_scale": per_scale_ratio})


def check_holonomy(manifold: Manifold, n: int, scales, rng: np.random.Generator,
                   falsify: bool = False) -> VerificationReport:
    """Path dependence of transport around a two-leg detour:
    |T_y->z T_x->y w - T_x->z w| <= c5 d(x,y) d(y,z) |w|, quadratic in the
    triangle scale."""
    scales = sorted(scales, reverse=True)
    max_res, max_ratio = [], 0.0
    for s in scales:
        worst = 0.0
        for _ in range(n):
            x = manifold.random_point(rng)
            y = manifold.exp(x, _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng))
            z = manifold.exp(x, _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng))
            w = _unit_tangent(manifold, x, rng)
            via = manifold.transport(y, z, manifold.transport(x, y, w))
            direct = manifold.transport(x, z, w)
            res = float(np.linalg.norm(via.coords - direct.coords))
            bound = manifold.dist(x, y) * manifold.dist(y, z) * w.norm()
            worst = max(worst, res)
            max_ratio = max(max_ratio, _ratio(res, bound))
        max_res.append(worst)
    slope = _fit_slope(scales, max_res)
    window = _slope_window(2.0, falsify)
    passed = _in_window(slope, window) and math.isfinite(max_ratio)
    return VerificationReport("holonomy", n * len(scales), list(scales), max_res,
                              slope, max_ratio, passed, window)


def check_linearization(obj: Objective, manifold: Manifold, saddle_x: Point,
                        n: int, scales, eta: float, rng: np.random.Generator,
                        falsify: bool = False) -> VerificationReport:
    """One-step linearization of coupled iterates in the saddle tangent space.

    For u, w sampled at scale s around the saddle, one gradient step each, the
    residual of log_x(w+) - log_x(u+) against (I - eta H(x)) applied to
    log_x(w) - log_x(u) is bounded by C d(u,w) (d(u,w) + d(u,x) + d(w,x)).
    The per-scale worst normalized residual (residual over that bound
    expression) decays linearly in s.
    """
    if not obj.has_exact_hess():
        raise CapabilityError("check_linearization needs an objective with an exact Hessian")
    scales = sorted(scales, reverse=True)
    max_norm_res, max_raw, max_ratio = [], [], 0.0
    for s in scales:
        worst, worst_raw = 0.0, 0.0
        for _ in range(n):
            u = manifold.exp(saddle_x, _tangent_of_norm(manifold, saddle_x, s * rng.uniform(0.3, 1.0), rng))
            w = manifold.exp(saddle_x, _tangent_of_norm(manifold, saddle_x, s * rng.uniform(0.3, 1.0), rng))
            duw = manifold.dist(u, w)
            if duw < 1e-12:
                continue
            up = manifold.exp(u, Tangent(u, -eta * obj.rgrad(u).coords))
            wp = manifold.exp(w, Tangent(w, -eta * obj.rgrad(w).coords))
            lv = Tangent(saddle_x, manifold.log(saddle_x, w).coords - manifold.log(saddle_x, u).coords)
            pred = lv.coords - eta * obj.exact_hess(saddle_x, lv).coords
            res = float(np.linalg.norm(
                manifold.log(saddle_x, wp).coords - manifold.log(saddle_x, up).coords - pred))
            theta = duw + manifold.dist(u, saddle_x) + manifold.dist(w, saddle_x)
            ratio = _ratio(res, duw * theta)
            worst = max(worst, ratio)
            worst_raw = max(worst_raw, res)
            max_ratio = max(max_ratio, ratio)
        max_norm_res.append(worst)
        max_raw.append(worst_raw)
    exact = all(r <= 1e-10 for r in max_raw)
    slope = _fit_slope(scales, max_norm_res)
    window = _slope_window(1.0, falsify)
    passed = math.isfinite(max_ratio) and (_in_window(slope, window) or (exact and not falsify))
    return VerificationReport("linearization", n * len(scales), list(scales),
                              max_norm_res, slope, max_ratio, passed, window,
                              details={"max_raw_residual_per_scale": max_raw})


def check_gradient_taylor(obj: Objective, manifold: Manifold, n: int, scales,
                          rng: np.random.Generator, falsify: bool = False,
                          rho_hat: float | None = None) -> VerificationReport:
    """First-order Taylor expansion of the transported gradient field:
    the defect against grad f(x) + H(x)[log_x(z)] decays quadratically in
    d(x, z); the empirical half-Hessian-Lipschitz constant is reported."""
    scales = sorted(scales, reverse=True)
    exact = obj.has_exact_hess()
    max_res, max_c, audit_ok = [], 0.0, True
    for s in scales:
        worst = 0.0
        for _ in range(n):
            x = manifold.random_point(rng)
            z = manifold.exp(x, _tangent_of_norm(manifold, x, s * rng.uniform(0.5, 1.0), rng))
            d = manifold.dist(x, z)
            if d < 1e-12:
                continue
            lg = manifold.log(x, z)
            hterm = obj.exact_hess(x, lg) if exact else hess_vec(obj, x, lg)
            res = float(np.linalg.norm(
                manifold.transport(z, x, obj.rgrad(z)).coords
                - obj.rgrad(x).coords - hterm.coords))
            worst = max(worst, res)
            max_c = max(max_c, _ratio(res, 0.5 * d ** 2))
            if rho_hat is not None and res > 0.5 * rho_hat * d ** 2 + 1e-12:
                audit_ok = False
        max_res.append(worst)
    slope = _fit_slope(scales, max_res)
    window = _slope_window(2.0, falsify)
    all_zero = all(r <= 1e-10 for r in max_res)
    passed = audit_ok and (_in_window(slope, window) or (all_zero and not falsify))
    return VerificationReport("gradient-taylor", n * len(scales), list(scales),
                              max_res, slope, max_c, passed, window,
                              details={"empirical_rho": max_c})


def check_descent(obj: Objective, region: tuple[Point, float], n: int, eta: float,
                  rng: np.random.Generator) -> VerificationReport:
    """Per-step descent audit: with the clamped step, every gradient step must
    satisfy f(u+) <= f(u) - 0.5 * eta_bar * |grad|^2 up to 1e-12."""
    man = obj.manifold
    center, radius = region
    inj = man.geometry().injectivity_radius
    worst = 0.0
    violations = 0
    for _ in range(n):
        u = man.exp(center, man.sample_tangent_ball(center, radius, rng))
        g = obj.rgrad(u)
        gn = g.norm()
        if gn == 0:
            continue
        eta_bar = min(eta, inj / gn)
        u_plus = man.exp(u, Tangent(u, -eta_bar * g.coords))
        violation = obj.value(u_plus) - obj.value(u) + 0.5 * eta_bar * gn ** 2
        if violation > 1e-12:
            violations += 1
        worst = max(worst, max(violation, 0.0))
    return VerificationReport("descent", n, [radius], [worst], 0.0, worst,
                              violations == 0, None,
                              details={"violations": violations, "eta": eta})


@dataclass
class CouplingReport:
    """Trace of two coupled perturbation sequences split along the most
    negative Hessian direction."""

    mu: float
    psi: list[float]
    phi: list[float]
    ratios: list[float]
    growth_threshold: float
    frac_growth_ok: float
    escape_t: int | None
    stop_reason: str
    lambda_min: float
    max_dist_from_start: float
    dist_budget: float


def coupling_probe(obj: Objective, manifold: Manifold, saddle_x: Point,
                   thr: ThresholdSet, mu: float, T_max: int,
                   rng: np.random.Generator, eig_tol: float = 1e-4,
                   epsilon: float | None = None,
                   rho_hat: float | None = None) -> CouplingReport:
    """Run two coupled gradient-descent sequences from perturbations whose
    initial difference is mu * r along the most negative Hessian direction.

    Records psi_t (difference component along that direction, measured in the
    saddle tangent space) and phi_t (orthogonal component), the per-step psi
    growth ratios, and the first step at which psi reaches 10x its initial
    value.  Stops early with partial data if an iterate leaves the
    injectivity ball around the saddle.
    """
    epsilon = thr.g_thres if epsilon is None else epsilon
    rho_hat = thr.gamma ** 2 / epsilon if rho_hat is None else rho_hat
    g0 = obj.rgrad(saddle_x).norm()
    lam, e1 = min_hess_eig(obj, saddle_x, eig_tol, rng)
    label = classify_stationarity(g0, lam, epsilon, rho_hat)
    if label != "saddle":
        raise ValueError(f"saddle_x classifies as {label!r}, expected 'saddle'")

    xi = manifold.sample_tangent_ball(saddle_x, thr.r, rng)
    u = manifold.exp(saddle_x, xi)
    w = manifold.exp(saddle_x, Tangent(saddle_x, xi.coords + mu * thr.r * e1.coords))
    u0 = u

    psi, phi = [], []
    stop_reason = "t-max"
    escape_t = None
    max_dist = 0.0
    psi0 = None
    for t in range(T_max + 1):
        try:
            v = manifold.log(saddle_x, w).coords - manifold.log(saddle_x, u).coords
            max_dist = max(max_dist, manifold.dist(u0, u))
        except GeometryError:
            stop_reason = "left-injectivity-ball"
            break
        along = float(np.sum(v * e1.coords))
        psi.append(abs(along))
        phi.append(float(np.linalg.norm(v - along * e1.coords)))
        if psi0 is None:
            psi0 = psi[0]
        if psi0 > 0 and psi[-1] >= 10.0 * psi0:
            stop_reason = "escaped"
            escape_t = t
            break
        if t == T_max:
            break
        for seq in ("u", "w"):
            pt = u if seq == "u" else w
            g = obj.rgrad(pt)
            gn = g.norm()
            if gn > 0:
                eta_bar = min(thr.eta, thr.injectivity / gn)
                pt = manifold.exp(pt, Tangent(pt, -eta_bar * g.coords))
            if seq == "u":
                u = pt
            else:
                w = pt
    ratios = [psi[i + 1] / psi[i] for i in range(len(psi) - 1) if psi[i] > 0]
    growth_threshold = 1.0 + thr.eta * thr.gamma / 2.0
    frac = (sum(1 for q in ratios if q >= growth_threshold) / len(ratios)) if ratios else 0.0
    return CouplingReport(
        mu=mu, psi=psi, phi=phi, ratios=ratios,
        growth_threshold=growth_threshold, frac_growth_ok=frac,
        escape_t=escape_t, stop_reason=stop_reason, lambda_min=lam,
        max_dist_from_start=max_dist,
        dist_budget=3.0 * thr.c_hat * thr.script_S,
    )


def render_report(rep: VerificationReport) -> str:
    """Key-value text form of a report, with a per-scale table."""
    lines = [
        f"lemma = {rep.lemma_id}",
        f"n_samples = {rep.n_samples}",
        f"passed = {str(rep.passed).lower()}",
        f"fitted_slope = {rep.fitted_slope:.6g}",
        f"fitted_constant = {rep.fitted_constant:.6g}",
    ]
    if rep.slope_window is not None:
        lines.append(f"slope_window = [{rep.slope_window[0]:.2f}, {rep.slope_window[1]:.2f}]")
    for key, val in sorted(rep.details.items()):
        if isinstance(val, float):
            lines.append(f"{key} = {val:.6g}")
        elif isinstance(val, list):
            lines.append(f"{key} = " + " ".join(f"{v:.6g}" for v in val))
        else:
            lines.append(f"{key} = {val}")
    lines.append("scale max_residual")
    for s, r in zip(rep.scales, rep.max_residual_per_scale):
        lines.append(f"{s:.10g} {r:.10g}")
    return "\n".join(lines) + "\n"
