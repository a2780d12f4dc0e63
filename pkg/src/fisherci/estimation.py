"""Maximum-likelihood solvers and finite-difference derivative oracles."""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset, FimKind, FimMatrix, ParameterVector
from .errors import FisherCIError, NotConverged, StepUnderflow
from .models.base import Model


class Initializer(enum.Enum):
    TRUE_PERTURBED = "TRUE_PERTURBED"
    MOMENT = "MOMENT"
    USER = "USER"


class Flag(enum.Enum):
    BOUNDARY = "BOUNDARY"
    NON_PD_HESSIAN = "NON_PD_HESSIAN"
    RELABELED = "RELABELED"


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-8
    step_halving_limit: int = 40
    initializer: Initializer = Initializer.TRUE_PERTURBED
    perturbation_scale: float = 0.1
    method: str = "auto"  # "newton", "search" or "auto" (model default)

    def __post_init__(self):
        object.__setattr__(self, "initializer", Initializer(self.initializer))
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.step_halving_limit < 0:
            raise ValueError("step_halving_limit must be non-negative")
        if self.method not in ("auto", "newton", "search"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass(frozen=True, eq=False)
class EstimationResult:
    theta_hat: ParameterVector
    converged: bool
    iterations: int
    final_grad_norm: float
    hessian_at_mle: np.ndarray
    flags: frozenset = frozenset()
    nll: float = np.nan
    history: tuple = field(default=(), repr=False)
    fallback_steps: int = 0


# --------------------------------------------------------------------------- #
# finite differences
# --------------------------------------------------------------------------- #


def _steps(theta, rel_step):
    theta = np.asarray(theta, dtype=float)
    h = rel_step * (1.0 + np.abs(theta))
    if np.any((theta + h) - theta == 0.0):
        raise StepUnderflow(f"step {rel_step!r} vanishes at theta={theta}")
    return theta, h


def fd_gradient(f, theta, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with steps ``rel_step * (1 + |theta_j|)``."""
    theta, h = _steps(theta, rel_step)
    g = np.empty(theta.size)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h[j]
        g[j] = (f(theta + e) - f(theta - e)) / (2.0 * h[j])
    return g


def fd_jacobian(fun, theta, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector function; row i is d fun_i."""
    theta, h = _steps(theta, rel_step)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h[j]
        cols.append((np.asarray(fun(theta + e)) - np.asarray(fun(theta - e))) / (2.0 * h[j]))
    return np.stack(cols, axis=-1)


def fd_hessian(f, theta, rel_step: float = 1e-4) -> np.ndarray:
    """Symmetrized central-difference Hessian of a scalar function."""
    theta, h = _steps(theta, rel_step)
    p = theta.size
    H = np.empty((p, p))
    f0 = f(theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(theta + ei) - 2.0 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(p)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


# --------------------------------------------------------------------------- #
# solvers
# --------------------------------------------------------------------------- #


def _nll_grad(model, data, theta):
    try:
        return model.nll_grad(data, theta)
    except NotImplementedError:
        f = model.nll(data, theta)
        return f, fd_gradient(lambda t: model.nll(data, t), theta)


def _safe_nll(model, data, theta):
    try:
        f = model.nll(data, theta)
    except (FisherCIError, FloatingPointError, np.linalg.LinAlgError):
        return np.inf
    return f if np.isfinite(f) else np.inf


def moment_start(model: Model, data: Dataset) -> np.ndarray:
    """Crude data-driven starting point for each supported model."""
    from .models.gaussmix import GaussMixModel
    from .models.spn import SpnModel
    from .models.ssm import SsmModel

    x = data.observations
    if isinstance(model, GaussMixModel):
        lo, hi = np.quantile(x[:, 0], [0.25, 0.75])
        return np.array([0.5, lo, hi])
    if isinstance(model, SpnModel):
        noise = model.spec.noise_covs[np.asarray(data.meta) - 1]
        var = x.var(axis=0) - np.diagonal(noise, axis1=1, axis2=2).mean(axis=0)
        return np.concatenate([x.mean(axis=0), np.maximum(var, 1e-2)])
    if isinstance(model, SsmModel):
        excess = max(float(x[:, 0].var()) - float(model.spec.R[0, 0]), 0.1)
        return np.full(model.p, excess / model.p)
    raise TypeError(f"no moment initializer for {type(model).__name__}")


def initial_point(model: Model, data: Dataset, options: SolverOptions, theta_star=None,
                  theta0=None, seed=None) -> np.ndarray:
    init = options.initializer
    if init is Initializer.USER:
        if theta0 is None:
            raise ValueError("USER initializer requires theta0")
        start = np.asarray(theta0, dtype=float)
    elif init is Initializer.MOMENT:
        start = moment_start(model, data)
    else:
        if theta_star is None:
            raise ValueError("TRUE_PERTURBED initializer requires theta_star")
        ts = np.asarray(theta_star, dtype=float)
        u = np.random.default_rng(seed).uniform(-1.0, 1.0, ts.size) * options.perturbation_scale
        start = ts * (1.0 + u)
    return model.project(start)


def _finish(model, data, theta, f, g, iterations, options, history, fallback):
    theta, relabeled = model.canonicalize(theta)
    if relabeled:
        f, g = _nll_grad(model, data, theta)
    gnorm = float(np.linalg.norm(g))
    converged = gnorm <= options.gradient_tolerance
    flags = set()
    if relabeled:
        flags.add(Flag.RELABELED)
    if model.at_boundary(theta):
        flags.add(Flag.BOUNDARY)
    try:
        hess = model.hessian(data, theta)
        if np.linalg.eigvalsh(hess)[0] <= 0:
            flags.add(Flag.NON_PD_HESSIAN)
    except FisherCIError:
        hess = np.full((model.p, model.p), np.nan)
        flags.add(Flag.NON_PD_HESSIAN)
    if not converged:
        warnings.warn(f"gradient norm {gnorm:.3e} after {iterations} iterations", NotConverged,
                      stacklevel=3)
    return EstimationResult(
        theta_hat=model.parameter_vector(theta),
        converged=converged,
        iterations=iterations,
        final_grad_norm=gnorm,
        hessian_at_mle=hess,
        flags=frozenset(flags),
        nll=float(f),
        history=tuple(history),
        fallback_steps=fallback,
    )


def _accept(f_new, f_old):
    # permit rounding-level increases so a converging Newton step is not rejected
    return f_new <= f_old + 8.0 * np.finfo(float).eps * max(1.0, abs(f_old))


def newton_mle(model: Model, data: Dataset, options: SolverOptions = SolverOptions(),
               theta_star=None, theta0=None, seed=None) -> EstimationResult:
    """Damped Newton iteration with step halving on any increase of the nll.

    When the Hessian is not positive definite the step falls back to the unit
    length steepest-descent direction.
    """
    theta = initial_point(model, data, options, theta_star, theta0, seed)
    f, g = _nll_grad(model, data, theta)
    history = [f]
    fallback = 0
    it = 0
    while it < options.max_iterations and np.linalg.norm(g) > options.gradient_tolerance:
        H = model.hessian(data, theta)
        try:
            np.linalg.cholesky(H)
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = -g / np.linalg.norm(g)
            fallback += 1
        t = 1.0
        for _ in range(options.step_halving_limit + 1):
            cand = model.project(theta + t * step)
            f_new = _safe_nll(model, data, cand)
            if _accept(f_new, f):
                break
            t *= 0.5
        else:
            break
        if np.array_equal(cand, theta):
            break
        theta = cand
        f, g = _nll_grad(model, data, theta)
        history.append(f)
        it += 1
    return _finish(model, data, theta, f, g, it, options, history, fallback)


def _curvature_inverse(model, data, theta, g_nat, logm, free):
    """Inverse Hessian in the search parameterization, restricted to ``free``;
    None when it is unavailable or not positive definite."""
    try:
        h = model.hessian(data, theta)
    except (NotImplementedError, FisherCIError, np.linalg.LinAlgError):
        return None
    scale = np.where(logm, theta, 1.0)
    h = scale[:, None] * h * scale[None, :] + np.diag(np.where(logm, g_nat * theta, 0.0))
    idx = np.flatnonzero(free)
    block = h[np.ix_(idx, idx)]
    try:
        chol = np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        return None
    inv = np.zeros_like(h)
    inv[np.ix_(idx, idx)] = np.linalg.inv(chol).T @ np.linalg.inv(chol)
    return inv


def search_mle(model: Model, data: Dataset, options: SolverOptions = SolverOptions(),
               theta_star=None, theta0=None, seed=None) -> EstimationResult:
    """BFGS with Armijo backtracking in an unconstrained parameterization.

    Components flagged in ``model.log_space`` are optimized as logarithms. If
    the model sets ``positive_floor`` those components are kept at or above
    it; a component resting on the floor with an outward-pointing gradient is
    held there so the search stops quickly. Such a point does not solve the
    score equation, so it is reported as not converged and flagged BOUNDARY.
    Convergence is judged on the gradient in the natural parameterization.
    """
    logm = np.asarray(model.log_space, dtype=bool)
    floor = np.full(logm.size, -np.inf)
    if model.positive_floor is not None:
        floor[logm] = np.log(model.positive_floor)

    def to_theta(eta):
        return np.where(logm, np.exp(eta), eta)

    def fg(eta):
        theta = to_theta(eta)
        f, g = _nll_grad(model, data, theta)
        return f, g, np.where(logm, g * theta, g)

    theta = initial_point(model, data, options, theta_star, theta0, seed)
    eta = np.maximum(np.where(logm, np.log(np.maximum(theta, 1e-300)), theta), floor)
    f, g_nat, g = fg(eta)
    history = [f]
    Hinv = None
    last_active = None
    it = 0
    c1 = 1e-4
    while it < options.max_iterations:
        active = (eta <= floor) & (g > 0)
        if np.linalg.norm(np.where(active, 0.0, g_nat)) <= options.gradient_tolerance:
            break
        if last_active is None or np.any(active != last_active):
            Hinv = _curvature_inverse(model, data, to_theta(eta), g_nat, logm, ~active)
        last_active = active
        g_free = np.where(active, 0.0, g)
        direction = None
        if Hinv is not None:
            direction = np.where(active, 0.0, -(Hinv @ g_free))
            if direction @ g_free >= 0:
                Hinv = None
                direction = None
        if direction is None:
            direction = -g_free / max(1.0, np.linalg.norm(g_free))
        t = 1.0
        accepted = False
        for _ in range(options.step_halving_limit + 1):
            cand = np.maximum(eta + t * direction, floor)
            try:
                # overshooting trials may overflow; they come back non-finite and are rejected
                with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                    f_new, gn_new, g_new = fg(cand)
            except (FisherCIError, FloatingPointError, np.linalg.LinAlgError):
                t *= 0.5
                continue
            if not (np.isfinite(f_new) and np.all(np.isfinite(g_new))):
                t *= 0.5
                continue
            flat = abs(f_new - f) <= 8.0 * np.finfo(float).eps * max(1.0, abs(f))
            if f_new <= f + c1 * (g @ (cand - eta)) or flat:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        s = cand - eta
        y = np.where(active, 0.0, g_new - g)
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if Hinv is None:
                Hinv = np.eye(eta.size) * (sy / (y @ y))
            rho = 1.0 / sy
            I = np.eye(eta.size)
            Hinv = (I - rho * np.outer(s, y)) @ Hinv @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        eta, f, g_nat, g = cand, f_new, gn_new, g_new
        history.append(f)
        it += 1
    return _finish(model, data, to_theta(eta), f, g_nat, it, options, history, 0)


def observed_fim(model: Model, data: Dataset, theta_hat) -> FimMatrix:
    """Hessian of the nll at ``theta_hat`` divided by n, exactly symmetrized."""
    h = np.asarray(model.hessian(data, theta_hat), dtype=float) / data.n
    h = 0.5 * (h + h.T)
    return FimMatrix(h, FimKind.OBSERVED, np.asarray(theta_hat, float), data.n)


def fit(model: Model, data: Dataset, options: SolverOptions, **kwargs) -> EstimationResult:
    """Dispatch to the model's default solver unless ``options.method`` says otherwise."""
    from .models.ssm import SsmModel

    method = options.method
    if method == "auto":
        method = "search" if isinstance(model, SsmModel) else "newton"
    solver = search_mle if method == "search" else newton_mle
    return solver(model, data, options, **kwargs)


def default_options(model: Model, **overrides) -> SolverOptions:
    from .models.ssm import SsmModel

    tol = 1e-6 if isinstance(model, SsmModel) else 1e-8
    return replace(SolverOptions(gradient_tolerance=tol), **overrides)
