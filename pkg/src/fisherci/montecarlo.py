"""Monte Carlo replication engine.

Each replication simulates a data set at the true parameter, fits the MLE,
evaluates the observed and expected FIM at the estimate and stores the
diagonals of their inverses. Aggregation produces ``V_n`` (n times the sample
covariance of the estimates), the typical FIM inverses and the MSE of the
implied confidence levels.
"""

from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_ALPHA, ParameterVector, confidence_level, invert_fim
from .errors import (
    FisherCIError,
    IllConditioned,
    InsufficientReplications,
    NoIncludedReplications,
    NotConverged,
    NotPositiveDefinite,
    ValidationError,
    ZeroMseF,
)
from .estimation import SolverOptions, fit, observed_fim
from .models import GaussMixModel, GaussMixSpec, SpnModel, SpnSpec, SsmModel, SsmSpec
from .models.spn import spn_noise_factor, spn_noise_schedule_1d, spn_noise_schedule_4d

# spawn-key prefixes keep the seed streams of different purposes disjoint
_SETUP_KEY = 0
_REPLICATION_KEY = 1
_OUTER_KEY = 2


class ModelId(enum.Enum):
    GAUSSMIX = "GAUSSMIX"
    SPN1D = "SPN1D"
    SPN4D = "SPN4D"
    SSM = "SSM"


class Exclusion(enum.Enum):
    NONE = "NONE"
    NOT_CONVERGED = "NOT_CONVERGED"
    NON_PD = "NON_PD"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    model_id: ModelId
    theta_star: np.ndarray
    n: int
    replications: int
    master_seed: int = 0
    alpha: float = DEFAULT_ALPHA
    solver: SolverOptions = field(default_factory=SolverOptions)
    model_options: dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            object.__setattr__(self, "model_id", ModelId(self.model_id))
        except ValueError:
            raise ValidationError("model", f"unknown model {self.model_id!r}") from None
        theta = np.asarray(self.theta_star, dtype=float).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n", "must be a positive integer")
        if int(self.replications) != self.replications or self.replications < 2:
            raise ValidationError("replications", "must be an integer >= 2")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError("alpha", "must lie in (0, 1)")
        object.__setattr__(self, "model_options", dict(self.model_options))


@dataclass(frozen=True, eq=False)
class ReplicationRecord:
    rep_index: int
    theta_hat: np.ndarray
    hinv_diag: np.ndarray
    finv_diag: np.ndarray
    hinv_full: np.ndarray
    finv_full: np.ndarray
    excluded: bool = False
    exclusion_reason: Exclusion = Exclusion.NONE
    iterations: int = 0
    grad_norm: float = np.nan
    flags: tuple = ()


@dataclass(eq=False)
class ExperimentReport:
    model_id: str
    names: tuple
    n: int
    replications: int
    alpha: float
    master_seed: int
    theta_star: np.ndarray
    v_n: np.ndarray
    typical_hinv: np.ndarray
    typical_finv: np.ndarray
    typical_hinv_index: int
    typical_finv_index: int
    mse_h: np.ndarray
    mse_f: np.ndarray
    ratio: np.ndarray
    mse_h_se: np.ndarray
    mse_f_se: np.ndarray
    included_count: int
    excluded_count: int
    exclusion_counts: dict
    reliability: np.ndarray = None
    zero_mse_f: tuple = ()
    model_info: dict = field(default_factory=dict)

    @property
    def exclusion_rate(self) -> float:
        return self.excluded_count / self.replications


# --------------------------------------------------------------------------- #
# model construction and seeds
# --------------------------------------------------------------------------- #


def derive_seed(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=tuple(key))


def build_model(config: ExperimentConfig):
    """Return ``(model, info)``; ``info`` records randomly drawn model constants."""
    opts = config.model_options
    mid = config.model_id
    if mid is ModelId.GAUSSMIX:
        return GaussMixModel(GaussMixSpec(float(opts.get("sigma", 1.0)))), {}
    if mid is ModelId.SPN1D:
        scheme = str(opts.get("schedule", "cyclic"))
        return SpnModel(SpnSpec(spn_noise_schedule_1d(config.n, scheme))), {"schedule": scheme}
    if mid is ModelId.SPN4D:
        dim = int(opts.get("dim", 4))
        u = spn_noise_factor(derive_seed(config.master_seed, _SETUP_KEY), dim, float(opts.get("u_high", 0.1)))
        return SpnModel(SpnSpec(spn_noise_schedule_4d(config.n, u=u))), {"U": u.tolist()}
    if mid is ModelId.SSM:
        base = SsmSpec.third_order_example()
        spec = SsmSpec(*(opts.get(k, getattr(base, k)) for k in ("A", "C", "R", "mu0", "P0")))
        return SsmModel(spec), {}
    raise ValidationError("model", f"unsupported model {mid}")


# --------------------------------------------------------------------------- #
# replications
# --------------------------------------------------------------------------- #


def _excluded(r, theta_hat, p, reason, est=None):
    nan = np.full(p, np.nan)
    nan2 = np.full((p, p), np.nan)
    return ReplicationRecord(
        r, np.asarray(theta_hat, float), nan, nan, nan2, nan2, True, reason,
        iterations=0 if est is None else est.iterations,
        grad_norm=np.nan if est is None else est.final_grad_norm,
        flags=() if est is None else tuple(sorted(f.value for f in est.flags)),
    )


def replicate(config: ExperimentConfig, r: int, model=None) -> ReplicationRecord:
    """One replication; depends only on ``(config, r)``."""
    if model is None:
        model, _ = build_model(config)
    p = model.p
    data_seed, init_seed = derive_seed(config.master_seed, _REPLICATION_KEY, r).spawn(2)
    data = model.sample(config.n, config.theta_star, data_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        warnings.simplefilter("ignore", IllConditioned)
        try:
            est = fit(model, data, config.solver, theta_star=config.theta_star, seed=init_seed)
        except (FisherCIError, np.linalg.LinAlgError, FloatingPointError):
            return _excluded(r, np.full(p, np.nan), p, Exclusion.NOT_CONVERGED)
        theta_hat = est.theta_hat.values
        if not est.converged:
            return _excluded(r, theta_hat, p, Exclusion.NOT_CONVERGED, est)
        try:
            h_inv = invert_fim(observed_fim(model, data, theta_hat))
            f_inv = invert_fim(model.expected_fim(theta_hat, config.n))
        except (NotPositiveDefinite, np.linalg.LinAlgError):
            return _excluded(r, theta_hat, p, Exclusion.NON_PD, est)
        except FisherCIError:
            return _excluded(r, theta_hat, p, Exclusion.NOT_CONVERGED, est)
    return ReplicationRecord(
        r, theta_hat, np.diag(h_inv).copy(), np.diag(f_inv).copy(), h_inv, f_inv,
        iterations=est.iterations, grad_norm=est.final_grad_norm,
        flags=tuple(sorted(f.value for f in est.flags)),
    )


def _replicate_chunk(args):
    config, indices = args
    model, _ = build_model(config)
    return [replicate(config, r, model) for r in indices]


def run_replications(config: ExperimentConfig, workers: int = 1, indices=None) -> list[ReplicationRecord]:
    """Run every replication, optionally across worker processes.

    Records come back sorted by ``rep_index`` and are identical for any
    worker count or execution order.
    """
    indices = list(range(config.replications)) if indices is None else list(indices)
    if workers <= 1:
        records = _replicate_chunk((config, indices))
    else:
        size = max(1, math.ceil(len(indices) / (4 * workers)))
        chunks = [(config, indices[i:i + size]) for i in range(0, len(indices), size)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [rec for part in pool.map(_replicate_chunk, chunks) for rec in part]
    return sorted(records, key=lambda rec: rec.rep_index)


# --------------------------------------------------------------------------- #
# aggregation
# --------------------------------------------------------------------------- #


def sample_covariance(estimates, n: int = 1) -> np.ndarray:
    """``n`` times the unbiased sample covariance of the rows of ``estimates``."""
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 1:
        est = est[:, None]
    if est.shape[0] < 2:
        raise InsufficientReplications(f"need at least 2 estimates, got {est.shape[0]}")
    centered = est - est.mean(axis=0)
    return n * (centered.T @ centered) / (est.shape[0] - 1)


def _included(records):
    inc = [r for r in records if not r.excluded]
    if not inc:
        raise NoIncludedReplications("every replication was excluded")
    return sorted(inc, key=lambda r: r.rep_index)


def typical_matrix(records, v_n, which: str = "HINV"):
    """FIM inverse whose Frobenius distance to ``v_n`` is the (lower) median.

    Returns ``(matrix, rep_index)``. Ties in distance are broken by
    ``rep_index``.
    """
    which = which.upper()
    if which not in ("HINV", "FINV"):
        raise ValueError(f"which must be HINV or FINV, got {which!r}")
    inc = _included(records)
    mats = [r.hinv_full if which == "HINV" else r.finv_full for r in inc]
    dist = [np.linalg.norm(m - v_n, "fro") for m in mats]
    order = sorted(range(len(inc)), key=lambda i: (dist[i], inc[i].rep_index))
    pick = order[(len(order) - 1) // 2]
    return mats[pick], inc[pick].rep_index


@dataclass(frozen=True, eq=False)
class MseResult:
    mse_h: np.ndarray
    mse_f: np.ndarray
    ratio: np.ndarray
    mse_h_se: np.ndarray
    mse_f_se: np.ndarray
    zero_mse_f: tuple = ()


def mse_ratio(records, v_n, alpha: float = DEFAULT_ALPHA) -> MseResult:
    """Mean squared deviation of the implied confidence levels from ``1 - alpha``."""
    inc = _included(records)
    hd = np.array([r.hinv_diag for r in inc])
    fd = np.array([r.finv_diag for r in inc])
    target = 1.0 - alpha
    p = hd.shape[1]
    err_h = np.empty_like(hd)
    err_f = np.empty_like(fd)
    for j in range(p):
        err_h[:, j] = (target - confidence_level(hd[:, j], v_n[j, j], alpha)) ** 2
        err_f[:, j] = (target - confidence_level(fd[:, j], v_n[j, j], alpha)) ** 2
    mse_h = err_h.mean(axis=0)
    mse_f = err_f.mean(axis=0)
    m = len(inc)
    se = (lambda e: e.std(axis=0, ddof=1) / np.sqrt(m)) if m > 1 else (lambda e: np.zeros(p))
    ratio = np.full(p, np.nan)
    zero = []
    for j in range(p):
        if mse_f[j] > 0:
            ratio[j] = mse_h[j] / mse_f[j]
        elif mse_h[j] > 0:
            ratio[j] = np.inf
            zero.append(j)
            warnings.warn(f"MSE_F is zero for component {j}", ZeroMseF, stacklevel=2)
    return MseResult(mse_h, mse_f, ratio, se(err_h), se(err_f), tuple(zero))


def summarize(config: ExperimentConfig, records, names=None, model_info=None) -> ExperimentReport:
    inc = _included(records)
    est = np.array([r.theta_hat for r in inc])
    v_n = sample_covariance(est, config.n)
    th, ih = typical_matrix(records, v_n, "HINV")
    tf, if_ = typical_matrix(records, v_n, "FINV")
    mse = mse_ratio(records, v_n, config.alpha)
    counts = {e.value: 0 for e in Exclusion if e is not Exclusion.NONE}
    for r in records:
        if r.excluded:
            counts[r.exclusion_reason.value] += 1
    if names is None:
        names = build_model(config)[0].names
    return ExperimentReport(
        model_id=config.model_id.value,
        names=tuple(names),
        n=config.n,
        replications=len(records),
        alpha=config.alpha,
        master_seed=config.master_seed,
        theta_star=np.array(config.theta_star),
        v_n=v_n,
        typical_hinv=th,
        typical_finv=tf,
        typical_hinv_index=ih,
        typical_finv_index=if_,
        mse_h=mse.mse_h,
        mse_f=mse.mse_f,
        ratio=mse.ratio,
        mse_h_se=mse.mse_h_se,
        mse_f_se=mse.mse_f_se,
        included_count=len(inc),
        excluded_count=len(records) - len(inc),
        exclusion_counts=counts,
        zero_mse_f=mse.zero_mse_f,
        model_info=dict(model_info or {}),
    )


def outer_config(config: ExperimentConfig, k: int) -> ExperimentConfig:
    """Config of the k-th independent repeat; repeat 0 is the config itself."""
    if k == 0:
        return config
    seed = int(derive_seed(config.master_seed, _OUTER_KEY, k).generate_state(1, np.uint32)[0])
    return ExperimentConfig(
        config.model_id, config.theta_star, config.n, config.replications, seed,
        config.alpha, config.solver, config.model_options,
    )


def relative_errors(v_diags) -> np.ndarray:
    """Mean of ``|d_k - d_0| / |d_0|`` over k >= 1, per component."""
    d = np.asarray(v_diags, dtype=float)
    if d.shape[0] < 2:
        raise InsufficientReplications("need at least two outer repeats")
    return np.mean(np.abs(d[1:] - d[0]) / np.abs(d[0]), axis=0)


def covariance_reliability(config: ExperimentConfig, outer_repeats: int, workers: int = 1,
                           first_records=None) -> np.ndarray:
    """Relative spread of the diagonal of ``V_n`` across independent repeats.

    The first repeat (reusing ``first_records`` when given) is the reference.
    """
    if outer_repeats < 2:
        raise InsufficientReplications("outer_repeats must be at least 2")
    diags = []
    for k in range(outer_repeats):
        if k == 0 and first_records is not None:
            records = first_records
        else:
            records = run_replications(outer_config(config, k), workers)
        est = np.array([r.theta_hat for r in _included(records)])
        diags.append(np.diag(sample_covariance(est, config.n)))
    return relative_errors(diags)


def run_experiment(config: ExperimentConfig, workers: int = 1, reliability: int = 0):
    """Run replications and aggregate; returns ``(report, records)``."""
    model, info = build_model(config)
    records = run_replications(config, workers)
    report = summarize(config, records, model.names, info)
    if reliability:
        report.reliability = covariance_reliability(config, reliability, workers, records)
    return report, records


def ratio_floor_check(report: ExperimentReport, floor: float = 0.95) -> np.ndarray:
    """Componentwise ``ratio >= floor`` (MSE_F should not exceed MSE_H asymptotically)."""
    return np.asarray(report.ratio) >= floor


def parameter_vector(config: ExperimentConfig) -> ParameterVector:
    model, _ = build_model(config)
    return model.parameter_vector(config.theta_star)
