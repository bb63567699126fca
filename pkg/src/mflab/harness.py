"""Config-driven experiment orchestration.

Plans are TOML files with an [experiment] table selecting one of four kinds:
effective-dimension scaling sweeps, the (alpha, gamma) phase grid, matched
sample-complexity training campaigns, and single training runs.  Unknown keys
are hard errors.  All outputs are deterministic CSV (RFC-4180, LF) plus a JSON
metadata sidecar echoing the canonical config.
"""

from __future__ import annotations

import json
import math
import subprocess
try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .covariance import CovarianceSpec, build_covariance, effective_dimension, \
    plan_hyperparameters, predict_deff_exponent
from .diagnostics import excess_risk
from .euclidean import DivergenceError, MflaConfig, run
from .io import format_float, write_trace
from .net import Loss, predict
from .sphere import SphereConfig, run_sphere
from .tasks import Link, TaskSpec, aligned_profile_direction, generate_dataset, \
    sample_directions, spike_direction

__all__ = [
    "ExperimentPlan",
    "ConfigError",
    "parse_config",
    "emit_config",
    "realize_instance",
    "run_deff_scaling",
    "run_phase_grid",
    "run_sample_complexity",
    "run_train_single",
    "write_metadata",
]

_KINDS = ("deff_scaling", "phase_grid", "sample_complexity", "train_single")

_ALLOWED = {
    "experiment": {"kind", "output_dir", "seeds"},
    "grid": {"d_values", "k", "alphas", "gammas", "n_values"},
    "covariances": {"label", "kind", "gamma1", "gamma2", "alpha", "gamma"},
    "task": {"d", "k", "link", "link_scale", "degree", "noise_std",
             "input_law", "n_train", "n_test"},
    "dynamics": {"space", "m", "budget", "eval_every", "lam_tilde", "eps",
                 "q", "kappa", "eta", "loss", "delta", "beta", "stop_test01",
                 "sigma_u"},
}

_TASK_DEFAULTS = {"k": 1, "link": "parity", "link_scale": 1.0, "degree": 3,
                  "noise_std": 0.0, "input_law": "gaussian", "n_test": 2048}
_DYNAMICS_DEFAULTS = {"space": "euclidean", "m": 256, "budget": 1000,
                      "eval_every": 100, "lam_tilde": 0.1, "eps": 0.5,
                      "q": 1.0, "kappa": 8.0, "loss": "pseudo_huber",
                      "delta": 1.0, "beta": "planner", "sigma_u": 1.0}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    kind: str
    output_dir: str
    seeds: tuple[int, ...]
    grid: dict = field(default_factory=dict)
    covariances: tuple[dict, ...] = ()
    task: dict = field(default_factory=dict)
    dynamics: dict = field(default_factory=dict)

    def __eq__(self, other):
        return isinstance(other, ExperimentPlan) and \
            (self.kind, self.output_dir, self.seeds, self.grid,
             list(self.covariances), self.task, self.dynamics) == \
            (other.kind, other.output_dir, other.seeds, other.grid,
             list(other.covariances), other.task, other.dynamics)


def _check_keys(table: dict, allowed: set, path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key}")


def parse_config(path_or_text: str | Path) -> ExperimentPlan:
    """Read and validate a plan, filling defaults; typos are hard errors."""
    p = Path(path_or_text)
    text = p.read_text() if p.exists() else str(path_or_text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"config parse failure: {err}") from None
    _check_keys(raw, {"experiment", "grid", "covariances", "task", "dynamics"},
                "config")
    exp = raw.get("experiment")
    if not exp:
        raise ConfigError("missing [experiment] table")
    _check_keys(exp, _ALLOWED["experiment"], "experiment")
    kind = exp.get("kind")
    if kind not in _KINDS:
        raise ConfigError(f"experiment.kind must be one of {_KINDS}")
    seeds = tuple(int(s) for s in exp.get("seeds", [0]))
    if len(set(seeds)) != len(seeds) or not seeds:
        raise ConfigError("experiment.seeds must be nonempty and distinct")

    grid = dict(raw.get("grid", {}))
    _check_keys(grid, _ALLOWED["grid"], "grid")
    covs = []
    for i, cov in enumerate(raw.get("covariances", [])):
        _check_keys(cov, _ALLOWED["covariances"], f"covariances[{i}]")
        if "label" not in cov or "kind" not in cov:
            raise ConfigError(f"covariances[{i}] needs label and kind")
        covs.append(dict(cov))
    task = dict(raw.get("task", {}))
    _check_keys(task, _ALLOWED["task"], "task")
    dynamics = dict(raw.get("dynamics", {}))
    _check_keys(dynamics, _ALLOWED["dynamics"], "dynamics")

    if kind in ("deff_scaling", "phase_grid"):
        if not grid.get("d_values"):
            raise ConfigError("grid.d_values is required")
        grid.setdefault("k", 1)
        if kind == "phase_grid":
            if not grid.get("alphas") or not grid.get("gammas"):
                raise ConfigError("phase_grid needs grid.alphas and grid.gammas")
        elif not covs:
            raise ConfigError("deff_scaling needs at least one covariance")
    if kind == "sample_complexity":
        n_values = grid.get("n_values")
        if not n_values or any(int(n) < 1 for n in n_values):
            raise ConfigError("grid.n_values must be positive sample counts")
        if not covs:
            raise ConfigError("sample_complexity needs covariances")
    if kind in ("sample_complexity", "train_single"):
        if "d" not in task:
            raise ConfigError("task.d is required")
        if kind == "train_single" and "n_train" not in task:
            raise ConfigError("task.n_train is required")
        if kind == "train_single" and len(covs) != 1:
            raise ConfigError("train_single takes exactly one covariance")
        for key, val in _TASK_DEFAULTS.items():
            task.setdefault(key, val)
        for key, val in _DYNAMICS_DEFAULTS.items():
            dynamics.setdefault(key, val)
    return ExperimentPlan(kind, str(exp.get("output_dir", "out")), seeds,
                          grid, tuple(covs), task, dynamics)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format_float(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def emit_config(plan: ExperimentPlan) -> str:
    """Canonical TOML form of a plan; reparsing yields an identical plan."""
    out = ["[experiment]",
           f"kind = {_toml_value(plan.kind)}",
           f"output_dir = {_toml_value(plan.output_dir)}",
           f"seeds = {_toml_value(list(plan.seeds))}"]
    for name, table in (("grid", plan.grid), ("task", plan.task),
                        ("dynamics", plan.dynamics)):
        if table:
            out.append(f"\n[{name}]")
            out.extend(f"{k} = {_toml_value(v)}" for k, v in table.items())
    for cov in plan.covariances:
        out.append("\n[[covariances]]")
        out.extend(f"{k} = {_toml_value(v)}" for k, v in cov.items())
    return "\n".join(out) + "\n"


def _cov_spec(cov: dict, d: int) -> CovarianceSpec:
    kind = cov["kind"]
    if kind == "isotropic":
        return CovarianceSpec("isotropic", d)
    if kind == "spiked":
        return CovarianceSpec("spiked", d, gamma1=float(cov["gamma1"]),
                              gamma2=float(cov["gamma2"]))
    if kind == "power_law":
        return CovarianceSpec("power_law", d, alpha=float(cov["alpha"]),
                              gamma=float(cov["gamma"]))
    raise ConfigError(f"unsupported covariance kind {kind!r} in a sweep")


def realize_instance(cov: dict, d: int, k: int, seed: int):
    """(spec, model, U) with directions drawn per the covariance family:
    random orthonormal rows for isotropic/spiked (the spike is then planted
    relative to them), the power-decay alignment profile for power_law."""
    spec = _cov_spec(cov, d)
    if spec.kind == "power_law":
        if k != 1:
            raise ConfigError("power_law sweeps are single-index (k = 1)")
        U = aligned_profile_direction(d, spec.gamma, seed)
        model = build_covariance(spec)
    elif spec.kind == "spiked":
        U = sample_directions(d, k, seed)
        theta = spike_direction(U, spec.gamma1, seed)
        model = build_covariance(spec, theta=theta)
    else:
        U = sample_directions(d, k, seed)
        model = build_covariance(spec)
    return spec, model, U


def _csv(header: tuple[str, ...], rows: list[tuple]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, str):
                cells.append(v)
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(format_float(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _fit_slope(ds: list[int], deffs: list[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(ds, dtype=float)),
                            np.log(np.asarray(deffs, dtype=float)), 1)[0])


def _measure_family(cov: dict, d_values, k: int, seeds) -> tuple[list, float]:
    means = []
    for d in d_values:
        vals = []
        for seed in seeds:
            _, model, U = realize_instance(cov, int(d), k, seed)
            vals.append(effective_dimension(model, U))
        means.append(float(np.mean(vals)))
    return means, _fit_slope(list(d_values), means)


def _predicted_exponent(spec: CovarianceSpec) -> float:
    if spec.kind == "isotropic":
        return 1.0
    return predict_deff_exponent(spec)


def run_deff_scaling(plan: ExperimentPlan) -> str:
    """Seed-averaged effective dimensions and fitted log-log slopes per
    covariance family, as CSV text."""
    d_values = [int(d) for d in plan.grid["d_values"]]
    k = int(plan.grid.get("k", 1))
    rows = []
    for cov in plan.covariances:
        means, slope = _measure_family(cov, d_values, k, plan.seeds)
        predicted = _predicted_exponent(_cov_spec(cov, d_values[0]))
        for d, deff in zip(d_values, means):
            rows.append((cov["label"], d, deff, slope, predicted))
    return _csv(("label", "d", "deff", "slope_measured", "slope_predicted"),
                rows)


def run_phase_grid(plan: ExperimentPlan) -> str:
    """Fitted vs predicted scaling exponents over the (alpha, gamma) grid."""
    d_values = [int(d) for d in plan.grid["d_values"]]
    rows = []
    for alpha in plan.grid["alphas"]:
        for gamma in plan.grid["gammas"]:
            cov = {"label": "pl", "kind": "power_law",
                   "alpha": float(alpha), "gamma": float(gamma)}
            _, slope = _measure_family(cov, d_values, 1, plan.seeds)
            predicted = predict_deff_exponent(_cov_spec(cov, d_values[0]))
            rows.append((float(alpha), float(gamma), slope, predicted,
                         abs(slope - predicted)))
    return _csv(("alpha", "gamma", "slope_measured", "slope_predicted",
                 "abs_dev"), rows)


def _build_task(task: dict, spec: CovarianceSpec) -> TaskSpec:
    link = Link(task["link"], scale=float(task["link_scale"]),
                degree=int(task["degree"]))
    return TaskSpec(d=int(task["d"]), k=int(task["k"]), link=link,
                    covariance=spec, noise_std=float(task["noise_std"]),
                    input_law=task["input_law"])


def _resolve_loss(dyn: dict) -> Loss:
    return Loss(dyn["loss"], float(dyn.get("delta", 1.0)))


def _train_one(plan: ExperimentPlan, cov: dict, n: int, seed: int):
    """One Euclidean training cell; returns (excess, test01, status)."""
    task_d = dict(plan.task)
    dyn = plan.dynamics
    spec, model, U = realize_instance(cov, int(task_d["d"]),
                                      int(task_d["k"]), seed)
    task = _build_task(task_d, spec)
    loss = _resolve_loss(dyn)
    hp = plan_hyperparameters(model, U, n, lam_tilde=float(dyn["lam_tilde"]),
                              eps=float(dyn["eps"]), q=float(dyn["q"]),
                              kappa=float(dyn["kappa"]), m=int(dyn["m"]),
                              sigma_u=float(dyn["sigma_u"]),
                              c_rho=loss.c_rho if math.isfinite(loss.c_rho)
                              else 1.0)
    beta = dyn["beta"]
    if beta == "planner":
        beta = hp.beta
    elif beta == "inf":
        beta = math.inf
    else:
        beta = float(beta)
    overrides = dict(beta=beta, loss=loss, eval_every=int(dyn["eval_every"]))
    if "eta" in dyn:
        overrides["eta"] = float(dyn["eta"])
    if "stop_test01" in dyn:
        overrides["stop_test01"] = float(dyn["stop_test01"])
    cfg = MflaConfig.from_hyperparams(hp, seed, int(dyn["budget"]),
                                      **overrides)
    train = generate_dataset(task, model, U, n, seed, hp.r_x_tilde)
    test = generate_dataset(task, model, U, int(task_d["n_test"]),
                            seed + 500_000, hp.r_x_tilde)
    try:
        ensemble, trace = run(cfg, train, test, U)
    except DivergenceError:
        return math.nan, math.nan, "aborted", None, None, None
    preds = predict(ensemble, test.augmented, cfg.activation())
    excess, _ = excess_risk(preds, test.labels, loss,
                            noise_std=float(task_d["noise_std"]))
    return excess, trace[-1].test01, "ok", ensemble, trace, hp


def run_sample_complexity(plan: ExperimentPlan) -> str:
    """Matched training campaign over the n-grid; aborted cells keep their
    row so sibling cells are unaffected."""
    rows = []
    for cov in plan.covariances:
        for n in plan.grid["n_values"]:
            for seed in plan.seeds:
                excess, t01, status, *_ = _train_one(plan, cov, int(n), seed)
                rows.append((cov["label"], int(n), seed, excess, t01, status))
    return _csv(("label", "n", "seed", "excess_risk", "test01", "status"),
                rows)


def run_train_single(plan: ExperimentPlan, out_dir: Optional[Path] = None):
    """One full training run; writes trace.csv, final.mflb, report.json."""
    out = Path(out_dir if out_dir is not None else plan.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = plan.seeds[0]
    task_d, dyn = plan.task, plan.dynamics
    if dyn["space"] == "sphere":
        spec, model, U = realize_instance(plan.covariances[0],
                                          int(task_d["d"]),
                                          int(task_d["k"]), seed)
        task = _build_task(task_d, spec)
        loss = _resolve_loss(dyn)
        beta = dyn["beta"]
        beta = 100.0 if beta == "planner" else (
            math.inf if beta == "inf" else float(beta))
        cfg = SphereConfig(m=int(dyn["m"]), beta=beta,
                           eta=float(dyn.get("eta", 0.1)), seed=seed,
                           budget=int(dyn["budget"]), loss=loss,
                           eval_every=int(dyn["eval_every"]))
        train = generate_dataset(task, model, U, int(task_d["n_train"]),
                                 seed, 1.0)
        test = generate_dataset(task, model, U, int(task_d["n_test"]),
                                seed + 500_000, 1.0)
        ensemble, trace = run_sphere(cfg, train, test, U,
                                     checkpoint_path=out / "final.mflb")
        hp = None
    else:
        n = int(task_d["n_train"])
        excess, t01, status, ensemble, trace, hp = _train_one(
            plan, plan.covariances[0], n, seed)
        if status == "aborted":
            raise DivergenceError(-1, None, [])
        from .io import save_ensemble
        save_ensemble(ensemble, out / "final.mflb",
                      {"seed": seed, "steps": trace[-1].step})
    write_trace(trace, out / "trace.csv")
    report = {
        "final": dict(zip(trace[-1].COLUMNS, trace[-1].astuple())),
        "planned": None if hp is None else {
            "beta": hp.beta, "lam": hp.lam, "iota": hp.iota,
            "eta_practical": hp.eta_practical,
            "eta_theoretical": hp.eta_theoretical,
            "d_eff": hp.d_eff, "log_c_lsi": hp.log_c_lsi,
            "log_l_theoretical": hp.log_l_theoretical,
        },
    }
    (out / "report.json").write_text(json.dumps(report, indent=2,
                                                sort_keys=True))
    return ensemble, trace


def _git_describe() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10)
        return res.stdout.strip() or "unknown"
    except OSError:
        return "unknown"


def write_metadata(plan: ExperimentPlan, path: Path) -> None:
    meta = {"config": emit_config(plan), "git": _git_describe(),
            "seeds": list(plan.seeds), "version": __version__}
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
