"""Experiment configuration files and bundled presets.

Configs are TOML with three sections::

    [experiment]          # required
    model = "SSM"         # GAUSSMIX | SPN1D | SPN4D | SSM
    theta_star = [1.0, 1.0, 1.0]
    n = 50
    replications = 1000
    seed = 2021           # optional, default 0
    alpha = 0.05          # optional, per-component significance level
    reliability = 0       # optional, outer repeats for the V_n reliability study

    [model]               # optional, model constants
    [solver]              # optional, SolverOptions fields

Unknown keys are errors.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from .errors import DomainError, ParseError, ValidationError
from .estimation import Initializer, SolverOptions
from .montecarlo import ExperimentConfig, ModelId, build_model

EXPERIMENT_KEYS = {"model", "theta_star", "n", "replications", "seed", "alpha", "reliability"}
REQUIRED_KEYS = ("model", "theta_star", "n", "replications")
MODEL_KEYS = {
    ModelId.GAUSSMIX: {"sigma"},
    ModelId.SPN1D: {"schedule"},
    ModelId.SPN4D: {"u_high", "dim"},
    ModelId.SSM: {"A", "C", "R", "mu0", "P0"},
}
SOLVER_KEYS = {
    "max_iterations", "gradient_tolerance", "step_halving_limit",
    "initializer", "perturbation_scale", "method",
}
_PRESET_PATTERN = re.compile(r"^table(\d)(?:_case(\d))?$")


def _locate(text: str, section: str | None, key: str):
    """Line and column of ``key`` inside ``[section]``, or (None, None)."""
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        head = re.match(r"^\[([^\]]+)\]", stripped)
        if head:
            current = head.group(1).strip()
            if section is None and current == key:
                return lineno, line.index("[") + 1
            continue
        m = re.match(r"^(\s*)([A-Za-z0-9_\-\"']+)\s*=", line)
        if m and current == section and m.group(2).strip("\"'") == key:
            return lineno, len(m.group(1)) + 1
    return None, None


def _unknown(text, section, keys, allowed):
    for key in sorted(set(keys) - set(allowed)):
        line, col = _locate(text, section, key)
        where = f"[{section}]" if section else "top level"
        raise ParseError(f"unknown key {key!r} in {where}", line, col)


def _int(value, field):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(field, f"expected an integer, got {value!r}")
    return value


def _float(value, field):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(field, f"expected a number, got {value!r}")
    return float(value)


def config_from_dict(doc: dict, text: str = "") -> tuple[ExperimentConfig, int]:
    """Validate a parsed document; returns ``(config, reliability_repeats)``."""
    _unknown(text, None, doc, {"experiment", "model", "solver"})
    exp = doc.get("experiment")
    if not isinstance(exp, dict):
        raise ValidationError("experiment", "missing [experiment] section")
    _unknown(text, "experiment", exp, EXPERIMENT_KEYS)
    for key in REQUIRED_KEYS:
        if key not in exp:
            raise ValidationError(f"experiment.{key}", "required")
    try:
        model_id = ModelId(str(exp["model"]).upper())
    except ValueError:
        raise ValidationError("experiment.model", f"unknown model {exp['model']!r}") from None

    model_opts = doc.get("model", {})
    if not isinstance(model_opts, dict):
        raise ValidationError("model", "must be a section")
    _unknown(text, "model", model_opts, MODEL_KEYS[model_id])

    solver_doc = doc.get("solver", {})
    if not isinstance(solver_doc, dict):
        raise ValidationError("solver", "must be a section")
    _unknown(text, "solver", solver_doc, SOLVER_KEYS)
    solver_kwargs = {"gradient_tolerance": 1e-6 if model_id is ModelId.SSM else 1e-8}
    solver_kwargs.update(solver_doc)
    if "initializer" in solver_kwargs:
        try:
            solver_kwargs["initializer"] = Initializer(str(solver_kwargs["initializer"]).upper())
        except ValueError:
            raise ValidationError("solver.initializer", f"unknown initializer {solver_doc['initializer']!r}") from None
        if solver_kwargs["initializer"] is Initializer.USER:
            raise ValidationError("solver.initializer", "USER needs a start point and is not available from a config")
    try:
        solver = SolverOptions(**solver_kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError("solver", str(exc)) from None

    theta = exp["theta_star"]
    if not isinstance(theta, list) or not theta:
        raise ValidationError("experiment.theta_star", "expected a non-empty list of numbers")
    theta = [_float(v, "experiment.theta_star") for v in theta]
    reliability = _int(exp.get("reliability", 0), "experiment.reliability")
    if reliability == 1 or reliability < 0:
        raise ValidationError("experiment.reliability", "must be 0 (off) or at least 2")

    config = ExperimentConfig(
        model_id=model_id,
        theta_star=theta,
        n=_int(exp["n"], "experiment.n"),
        replications=_int(exp["replications"], "experiment.replications"),
        master_seed=_int(exp.get("seed", 0), "experiment.seed"),
        alpha=_float(exp.get("alpha", 0.05), "experiment.alpha"),
        solver=solver,
        model_options=model_opts,
    )
    if config.master_seed < 0:
        raise ValidationError("experiment.seed", "must be non-negative")
    validate(config)
    return config, reliability


def validate(config: ExperimentConfig) -> None:
    """Check that ``theta_star`` fits the model and the model constants are valid."""
    try:
        model, _ = build_model(config)
    except (DomainError, ValueError, TypeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError("model", str(exc)) from None
    if config.theta_star.size != model.p:
        raise ValidationError(
            "experiment.theta_star", f"{model.p} values expected for {config.model_id.value}, got {config.theta_star.size}"
        )
    try:
        model.parameter_vector(config.theta_star)
    except ValueError as exc:
        raise ValidationError("experiment.theta_star", str(exc)) from None


def parse_config_text(text: str) -> tuple[ExperimentConfig, int]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return config_from_dict(doc, text)


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file."""
    return parse_config_with_options(path)[0]


def parse_config_with_options(path) -> tuple[ExperimentConfig, int]:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text)


def preset_names() -> list[str]:
    files = resources.files("fisherci.presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def preset_text(name: str) -> str:
    m = _PRESET_PATTERN.match(name)
    if m and m.group(2) is None:
        name = f"{name}_case1"
    res = resources.files("fisherci.presets").joinpath(f"{name}.toml")
    if not res.is_file():
        raise ValidationError("experiment", f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text(encoding="utf-8")


def load_experiment(ref: str) -> tuple[ExperimentConfig, int]:
    """Resolve ``ref`` as a config path if it exists, else as a preset name."""
    path = Path(ref)
    if path.is_file():
        return parse_config_with_options(path)
    return parse_config_text(preset_text(ref))


def config_to_dict(config: ExperimentConfig, reliability: int = 0) -> dict:
    """Inverse of ``config_from_dict`` (up to key order)."""
    s = config.solver
    out = {
        "experiment": {
            "model": config.model_id.value,
            "theta_star": [float(v) for v in config.theta_star],
            "n": int(config.n),
            "replications": int(config.replications),
            "seed": int(config.master_seed),
            "alpha": float(config.alpha),
            "reliability": int(reliability),
        },
        "model": {k: np.asarray(v).tolist() for k, v in config.model_options.items()},
        "solver": {
            "max_iterations": s.max_iterations,
            "gradient_tolerance": s.gradient_tolerance,
            "step_halving_limit": s.step_halving_limit,
            "initializer": s.initializer.value,
            "perturbation_scale": s.perturbation_scale,
            "method": s.method,
        },
    }
    return out
