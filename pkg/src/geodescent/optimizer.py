"""Perturbed Riemannian gradient descent as an explicit state machine, the
threshold derivation box, a plain gradient-descent baseline and the
stationarity classifier."""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .manifolds import CapabilityError, Point, Tangent
from .objectives import Objective

STATUS_SECOND_ORDER = "second-order-point"
STATUS_ITERATION_CAP = "iteration-cap"
STATUS_STEP_FAILURE = "step-failure"
STATUS_FIRST_ORDER = "first-order-point"  # baseline gradient-tolerance stop


@dataclass(frozen=True)
class AssumptionParams:
    """Smoothness/curvature constants and targets feeding the threshold box.

    beta and rho are the gradient/Hessian Lipschitz constants, curvature_K the
    sectional curvature bound, injectivity the injectivity radius, epsilon the
    target accuracy, delta the failure probability, f_gap an upper bound on
    f(x0) - f*, dim_d the intrinsic manifold dimension, and rho_hat the
    inflated Hessian constant (defaults to rho when the curvature coupling
    constant is unknown).
    """

    beta: float
    rho: float
    epsilon: float
    delta: float
    f_gap: float
    dim_d: int
    curvature_K: float = 1.0
    injectivity: float = math.inf
    rho_hat: float | None = None

    def __post_init__(self):
        for name in ("beta", "rho", "epsilon", "f_gap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.dim_d < 1:
            raise ValueError("dim_d must be >= 1")
        if self.curvature_K < 0:
            raise ValueError("curvature_K must be nonnegative")
        if self.rho_hat is None:
            object.__setattr__(self, "rho_hat", self.rho)
        elif self.rho_hat <= 0:
            raise ValueError("rho_hat must be positive")


@dataclass(frozen=True)
class ThresholdSet:
    """All derived constants of the algorithm's parameter box."""

    c_hat: float
    c_max: float
    chi: float
    r: float
    f_thres: float
    g_thres: float
    t_thres: int
    eta: float
    gamma: float
    kappa: float
    script_F: float
    script_G: float
    script_S: float
    script_T: float
    injectivity: float = math.inf
    mode: str = "theory"


def derive_thresholds(p: AssumptionParams, c_hat: float = 4.0,
                      c2: float = 1.0, c3: float = 1.0) -> ThresholdSet:
    """Derive every constant of the parameter box from the assumptions.

    c_max is set to its maximal admissible value (sqrt(c_max) <= 1/(56 c_hat^2)
    with equality).  The accuracy bound on epsilon involves curvature
    constants that are only available as empirical fits (c2, c3 arguments); a
    violation is reported as a warning with both sides evaluated, not as an
    error.
    """
    if c_hat < 4:
        raise ValueError(f"c_hat must be >= 4, got {c_hat}")
    c_max = (1.0 / (56.0 * c_hat ** 2)) ** 2
    chi = 3.0 * max(math.log(p.dim_d * p.beta * p.f_gap / (c_hat * p.epsilon ** 2 * p.delta)), 4.0)
    r = math.sqrt(c_max) * p.epsilon / chi ** 2
    f_thres = (c_max / chi ** 3) * math.sqrt(p.epsilon ** 3 / p.rho_hat)
    g_thres = (math.sqrt(c_max) / chi ** 2) * p.epsilon
    gamma = math.sqrt(p.rho_hat * p.epsilon)
    t_thres = int(math.ceil((chi / c_max) * p.beta / gamma))
    eta = c_max / p.beta
    kappa = p.beta / gamma
    log_term = math.log(p.dim_d * kappa / p.delta)
    script_F = eta * p.beta * gamma ** 3 / p.rho_hat ** 2 / log_term ** 3
    script_G = math.sqrt(eta * p.beta) * gamma ** 2 / p.rho_hat / log_term ** 2
    script_S = math.sqrt(eta * p.beta) * gamma / p.rho_hat / log_term
    script_T = log_term / (eta * gamma)

    # accuracy bound check (warning only: c2, c3 are empirical fits)
    acc_log = math.log(p.dim_d * p.beta / (gamma * p.delta))
    bound_a = p.rho_hat / (56.0 * max(c2, c3) * eta * p.beta) * acc_log
    bound_b = math.inf
    if math.isfinite(p.injectivity):
        bound_b = (p.injectivity * p.rho_hat / (12.0 * c_hat * math.sqrt(eta * p.beta)) * acc_log) ** 2
    bound = min(bound_a, bound_b)
    if p.epsilon > bound:
        warnings.warn(
            f"epsilon = {p.epsilon:.6g} exceeds the admissible accuracy bound "
            f"{bound:.6g} (min of {bound_a:.6g} and {bound_b:.6g} with fitted "
            f"c2={c2:.3g}, c3={c3:.3g}); guarantees may not apply",
            RuntimeWarning,
        )
    return ThresholdSet(
        c_hat=c_hat, c_max=c_max, chi=chi, r=r, f_thres=f_thres,
        g_thres=g_thres, t_thres=t_thres, eta=eta, gamma=gamma, kappa=kappa,
        script_F=script_F, script_G=script_G, script_S=script_S,
        script_T=script_T, injectivity=p.injectivity, mode="theory",
    )


def practical_thresholds(beta_hat: float, rho_hat: float, epsilon: float,
                         dim_d: int = 2, delta: float = 0.1,
                         injectivity: float = math.inf,
                         eta: float | None = None, r: float | None = None,
                         g_thres: float | None = None,
                         f_thres: float | None = None,
                         t_thres: int | None = None) -> ThresholdSet:
    """Desk-scale parameter choices for experiments.

    The worst-case box yields step sizes far too small for real runs, so the
    practical mode uses eta = 0.1/beta_hat, r = sqrt(epsilon),
    g_thres = epsilon, t_thres = ceil(4/(eta sqrt(rho_hat epsilon))) and
    f_thres = 0.1 sqrt(epsilon^3/rho_hat), all overridable.  The remaining
    fields are filled with the same formulas as the theory box so reports stay
    uniform.
    """
    if beta_hat <= 0 or rho_hat <= 0 or epsilon <= 0:
        raise ValueError("beta_hat, rho_hat and epsilon must be positive")
    eta = 0.1 / beta_hat if eta is None else eta
    r = math.sqrt(epsilon) if r is None else r
    g_thres = epsilon if g_thres is None else g_thres
    gamma = math.sqrt(rho_hat * epsilon)
    t_thres = int(math.ceil(4.0 / (eta * gamma))) if t_thres is None else int(t_thres)
    f_thres = 0.1 * math.sqrt(epsilon ** 3 / rho_hat) if f_thres is None else f_thres
    if min(eta, r, g_thres, f_thres) <= 0 or t_thres < 1:
        raise ValueError("thresholds must be positive")
    kappa = beta_hat / gamma
    log_term = math.log(max(dim_d * kappa / delta, math.e))
    c_max = eta * beta_hat  # back-derived from eta = c_max / beta
    chi = 3.0 * max(math.log(max(dim_d * beta_hat / (4.0 * epsilon ** 2 * delta), 1.0)), 4.0)
    return ThresholdSet(
        c_hat=4.0, c_max=c_max, chi=chi, r=r, f_thres=f_thres,
        g_thres=g_thres, t_thres=t_thres, eta=eta, gamma=gamma, kappa=kappa,
        script_F=eta * beta_hat * gamma ** 3 / rho_hat ** 2 / log_term ** 3,
        script_G=math.sqrt(eta * beta_hat) * gamma ** 2 / rho_hat / log_term ** 2,
        script_S=math.sqrt(eta * beta_hat) * gamma / rho_hat / log_term,
        script_T=log_term / (eta * gamma),
        injectivity=injectivity, mode="practical",
    )


@dataclass
class TraceRow:
    t: int
    f: float
    gradnorm: float
    step_norm: float
    perturbed: bool
    dist_to_anchor: float | None  # distance to the last perturbation anchor
    dist_to_start: float | None


@dataclass
class Trace:
    """Per-iteration record of one run.

    Equality/determinism contracts cover the rows, status and iteration
    count; wall_time is informational only.
    """

    rows: list[TraceRow] = field(default_factory=list)
    status: str | None = None
    total_iterations: int = 0
    wall_time: float = 0.0


@dataclass
class RunResult:
    status: str
    final_point: Point
    final_f: float
    final_gradnorm: float
    iterations: int
    trace: Trace
    final_lambda_min: float | None = None


@dataclass
class OptState:
    """Mutable state of one perturbed-gradient-descent run."""

    x: Point
    t: int = 0
    t_noise: int = 0
    x_tilde: Point | None = None
    x_start: Point | None = None
    trace: Trace = field(default_factory=Trace)

    @classmethod
    def initial(cls, x0: Point, thr: ThresholdSet) -> "OptState":
        return cls(x=x0, t=0, t_noise=-thr.t_thres - 1, x_tilde=None, x_start=x0)


def _safe_dist(man, a: Point, b: Point) -> float | None:
    try:
        return man.dist(a, b)
    except CapabilityError:
        return None


def prgd_step(state: OptState, thr: ThresholdSet, obj: Objective,
              rng: np.random.Generator):
    """One pass of the perturbed-descent loop.

    In order: (1) if the gradient is at or below g_thres and the previous
    perturbation window has fully elapsed, save the iterate, perturb inside
    the tangent ball of radius r; (2) if exactly t_thres steps have passed
    since the last perturbation and f failed to drop by f_thres, terminate
    with the saved iterate; (3) otherwise take a gradient step of geodesic
    length min(eta * ||grad||, injectivity); (4) advance t.

    Returns the updated OptState, or a RunResult when the run terminates.
    """
    man = obj.manifold
    x = state.x
    fx = obj.value(x)
    grad = obj.rgrad(x)
    gnorm = grad.norm()
    if not (math.isfinite(fx) and math.isfinite(gnorm)):
        state.trace.status = STATUS_STEP_FAILURE
        state.trace.total_iterations = len(state.trace.rows)
        return RunResult(STATUS_STEP_FAILURE, x, fx, gnorm,
                         len(state.trace.rows), state.trace)

    perturbed = False
    if gnorm <= thr.g_thres and state.t - state.t_noise > thr.t_thres:
        state.t_noise = state.t
        state.x_tilde = x
        xi = man.sample_tangent_ball(x, thr.r, rng)
        x = man.exp(x, xi)
        perturbed = True
        fx = obj.value(x)
        grad = obj.rgrad(x)
        gnorm = grad.norm()

    if (state.t - state.t_noise == thr.t_thres and state.x_tilde is not None
            and fx - obj.value(state.x_tilde) > -thr.f_thres):
        xt = state.x_tilde
        g_out = obj.rgrad(xt)
        state.trace.rows.append(TraceRow(
            t=state.t, f=fx, gradnorm=gnorm, step_norm=0.0, perturbed=False,
            dist_to_anchor=_safe_dist(man, x, xt),
            dist_to_start=_safe_dist(man, x, state.x_start),
        ))
        state.trace.status = STATUS_SECOND_ORDER
        state.trace.total_iterations = len(state.trace.rows)
        return RunResult(STATUS_SECOND_ORDER, xt, obj.value(xt), g_out.norm(),
                         len(state.trace.rows), state.trace)

    if gnorm > 0:
        eta_bar = min(thr.eta, thr.injectivity / gnorm)
        step = Tangent(x, -eta_bar * grad.coords)
        x_next = man.exp(x, step)
        step_norm = eta_bar * gnorm
    else:
        x_next = x
        step_norm = 0.0

    state.trace.rows.append(TraceRow(
        t=state.t, f=fx, gradnorm=gnorm, step_norm=step_norm, perturbed=perturbed,
        dist_to_anchor=_safe_dist(man, x, state.x_tilde) if state.x_tilde is not None else None,
        dist_to_start=_safe_dist(man, x, state.x_start),
    ))
    state.x = x_next
    state.t += 1
    return state


def run(obj: Objective, x0: Point, thr: ThresholdSet, max_iters: int,
        rng: np.random.Generator) -> RunResult:
    """Iterate prgd_step until termination or the iteration cap."""
    t0 = time.perf_counter()
    state = OptState.initial(x0, thr)
    for _ in range(max_iters):
        out = prgd_step(state, thr, obj, rng)
        if isinstance(out, RunResult):
            out.trace.wall_time = time.perf_counter() - t0
            return out
        state = out
    state.trace.status = STATUS_ITERATION_CAP
    state.trace.total_iterations = len(state.trace.rows)
    state.trace.wall_time = time.perf_counter() - t0
    g = obj.rgrad(state.x)
    return RunResult(STATUS_ITERATION_CAP, state.x, obj.value(state.x),
                     g.norm(), len(state.trace.rows), state.trace)


def rgd_baseline(obj: Objective, x0: Point, eta: float, g_tol: float,
                 max_iters: int,
                 injectivity: float | None = None) -> RunResult:
    """Plain Riemannian gradient descent with the same step clamp and no
    perturbation; stops once the gradient norm reaches g_tol."""
    man = obj.manifold
    inj = man.geometry().injectivity_radius if injectivity is None else injectivity
    t0 = time.perf_counter()
    trace = Trace()
    x = x0
    for _ in range(max_iters):
        fx = obj.value(x)
        grad = obj.rgrad(x)
        gnorm = grad.norm()
        if not (math.isfinite(fx) and math.isfinite(gnorm)):
            trace.status = STATUS_STEP_FAILURE
            trace.total_iterations = len(trace.rows)
            trace.wall_time = time.perf_counter() - t0
            return RunResult(STATUS_STEP_FAILURE, x, fx, gnorm, len(trace.rows), trace)
        if gnorm <= g_tol:
            trace.rows.append(TraceRow(len(trace.rows), fx, gnorm, 0.0, False, None,
                                       _safe_dist(man, x, x0)))
            trace.status = STATUS_FIRST_ORDER
            trace.total_iterations = len(trace.rows)
            trace.wall_time = time.perf_counter() - t0
            return RunResult(STATUS_FIRST_ORDER, x, fx, gnorm, len(trace.rows), trace)
        eta_bar = min(eta, inj / gnorm)
        trace.rows.append(TraceRow(len(trace.rows), fx, gnorm, eta_bar * gnorm, False,
                                   None, _safe_dist(man, x, x0)))
        x = man.exp(x, Tangent(x, -eta_bar * grad.coords))
    fx = obj.value(x)
    g = obj.rgrad(x)
    trace.status = STATUS_ITERATION_CAP
    trace.total_iterations = len(trace.rows)
    trace.wall_time = time.perf_counter() - t0
    return RunResult(STATUS_ITERATION_CAP, x, fx, g.norm(), len(trace.rows), trace)


def classify_stationarity(gradnorm: float, lambda_min: float, epsilon: float,
                          rho_hat: float) -> str:
    """Label a point as saddle / second-order / non-stationary.

    A point with gradient norm <= epsilon is a saddle when the smallest
    Hessian eigenvalue is <= -sqrt(rho_hat * epsilon); boundary equalities
    resolve toward `saddle`.
    """
    if epsilon <= 0 or rho_hat <= 0:
        raise ValueError("epsilon and rho_hat must be positive")
    if gradnorm > epsilon:
        return "non-stationary"
    if lambda_min <= -math.sqrt(rho_hat * epsilon):
        return "saddle"
    return "second-order"
