"""Experiment harness: config parsing, trial loops, metrics, oracle checks.

Fairness contract: within a trial every method consumes the byte-identical
action/observation stream, generated once from the trial's noise substream;
the stream hash is recorded in the summary.  Reference values come from the
exact Gaussian-sum belief sampled at a large sample count (its conditional
taken through the factored-table route, which is checked to be identical),
never from the ground-truth world.

Emitted metric rows share one schema across experiment kinds:
trial, time_step, method, estimate, reference_value, squared_error,
wall_ms, n_samples, sweep_value.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import _kernels
from .baselines import AnalyticHybridBelief, verify_weight_recursion
from .belief import Hypothesis, HybridBelief, enumerate_labels
from .estimators import (
    OpenLoopPlan,
    estimate_explicit_c,
    estimate_structured,
    is_mse_lower_bound,
    make_context,
    reward_at_labels,
    rollout_states,
    safety_reward,
)
from .gaussian import GaussianFactorGraph, StackedIndex
from .methods import METHOD_TAGS, create_method
from .planner import PlannerConfig, run_planning_trial
from .samplers import mh_sample, snis_sample
from .scenario import (
    Scenario,
    ScenarioError,
    default_alphas,
    simulate,
    trial_streams,
)

ESTIMATION_KINDS = ("psafe-vs-time",)
BENCHMARK_KINDS = ("rmse-vs-samples", "rmse-vs-classes", "rmse-vs-objects")
PLANNING_KINDS = ("planning-table",)
ALL_KINDS = ESTIMATION_KINDS + BENCHMARK_KINDS + PLANNING_KINDS

METRIC_COLUMNS = (
    "trial",
    "time_step",
    "method",
    "estimate",
    "reference_value",
    "squared_error",
    "wall_ms",
    "n_samples",
    "sweep_value",
)
PLANNING_COLUMNS = (
    "trial",
    "method",
    "safe_verdict",
    "reached_goal",
    "dist_to_goal",
    "traj_len",
    "wall_ms",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class MetricRow:
    trial: int
    time_step: int
    method: str
    estimate: float
    reference_value: float
    squared_error: float
    wall_ms: float
    n_samples: int
    sweep_value: object = ""


def load_scenario(spec) -> Scenario:
    """Resolve a scenario from a dict, a shipped name, or a file path."""
    if isinstance(spec, Scenario):
        return spec
    if isinstance(spec, dict):
        return Scenario.from_dict(spec)
    if isinstance(spec, str):
        from importlib import resources

        packaged = resources.files("semgeo").joinpath(f"scenarios/{spec}.json")
        if packaged.is_file():
            return Scenario.from_dict(json.loads(packaged.read_text()))
        path = Path(spec)
        if path.is_file():
            return Scenario.from_json(path)
        raise ConfigError(f"unknown scenario {spec!r} (not shipped, not a file)")
    raise ConfigError(f"cannot interpret scenario spec of type {type(spec).__name__}")


@dataclass
class ExperimentConfig:
    kind: str
    scenario: Scenario
    methods: tuple
    trials: int = 20
    n_steps: int = 4
    n_samples: int = 200
    reference_samples: int = 100_000
    eval_horizon: int = 6
    sweep: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    workers: int = 1
    n_particles: int = 500
    planner: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind not in ALL_KINDS:
            raise ConfigError(f"kind must be one of {ALL_KINDS}, got {kind!r}")
        try:
            scenario = load_scenario(d.pop("scenario", "defaults"))
        except ScenarioError as exc:
            raise ConfigError(str(exc)) from exc
        methods = tuple(d.pop("methods", ("mcmc-ours",)))
        unknown = [m for m in methods if m not in METHOD_TAGS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; known: {list(METHOD_TAGS)}")
        try:
            cfg = cls(kind=kind, scenario=scenario, methods=methods, **d)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from exc
        cfg._validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def _validate(self) -> None:
        if self.trials < 1 or self.n_samples < 1 or self.n_steps < 0:
            raise ConfigError("trials, n_samples must be >= 1 and n_steps >= 0")
        if self.kind == "rmse-vs-samples" and "n_samples" not in self.sweep:
            raise ConfigError("rmse-vs-samples needs sweep.n_samples")
        if self.kind == "rmse-vs-classes" and "n_classes" not in self.sweep:
            raise ConfigError("rmse-vs-classes needs sweep.n_classes")
        if self.kind == "rmse-vs-objects" and "n_objects" not in self.sweep:
            raise ConfigError("rmse-vs-objects needs sweep.n_objects")
        if self.kind in ESTIMATION_KINDS + ("rmse-vs-samples",):
            need = self.n_steps + self.eval_horizon
            if len(self.scenario.actions) < need:
                raise ConfigError(
                    f"scenario.actions has {len(self.scenario.actions)} steps, "
                    f"need n_steps + eval_horizon = {need}"
                )

    def method_options(self, tag: str) -> dict:
        if tag.startswith("pf-"):
            return {"n_particles": self.n_particles}
        return {}

    def echo(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.to_dict()
        return d


def resize_scenario(
    base: Scenario, n_classes: int | None = None, n_objects: int | None = None
) -> Scenario:
    """Clone a scenario at a different problem size.

    Class-count changes refresh the scale factors, uniform prior, and evenly
    respaced unsafe radii; object-count changes keep existing priors and add
    objects on a circle around the workspace center.
    """
    d = base.to_dict()
    if n_classes is not None and n_classes != base.n_classes:
        d["n_classes"] = n_classes
        d["alphas"] = default_alphas(n_classes).tolist()
        r = base.unsafe_radius
        lo, hi = float(r.min()), float(r.max())
        d["unsafe_radius"] = np.linspace(lo, hi, n_classes).tolist()
        d["class_prior"] = np.full(
            (base.n_objects, n_classes), 1.0 / n_classes
        ).tolist()
    base_nc = d["n_classes"]
    if n_objects is not None and n_objects != base.n_objects:
        d["n_objects"] = n_objects
        means = list(map(list, base.object_prior_means[:n_objects]))
        covs = list(map(lambda c: np.asarray(c).tolist(), base.object_prior_covs[:n_objects]))
        (x0, x1), (y0, y1) = base.workspace
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        rad = 0.35 * min(x1 - x0, y1 - y0)
        for j in range(len(means), n_objects):
            ang = 2.0 * math.pi * j / n_objects
            means.append([cx + rad * math.cos(ang), cy + rad * math.sin(ang)])
            covs.append(base.object_prior_covs[0].tolist())
        d["object_prior_means"] = means
        d["object_prior_covs"] = covs
        d["class_prior"] = np.full((n_objects, base_nc), 1.0 / base_nc).tolist()
    return Scenario.from_dict(d)


# ----------------------------------------------------------------------
# estimation experiments


def _eval_plan(scenario: Scenario, step: int, horizon: int) -> OpenLoopPlan:
    return OpenLoopPlan(scenario.actions[step : step + horizon])


def _reference_method(scenario: Scenario):
    return create_method("theoretical-all-hyp", scenario, fast_conditional=True)


def _estimation_trial(cfg_dict: dict, scenario: Scenario, trial: int) -> list:
    cfg = ExperimentConfig.from_dict(dict(cfg_dict, scenario=scenario.to_dict()))
    streams = trial_streams(cfg.seed, trial)
    world, history = simulate(scenario, cfg.n_steps, streams.world, streams.noise)
    methods = {
        tag: create_method(tag, scenario, **cfg.method_options(tag))
        for tag in cfg.methods
    }
    reference = _reference_method(scenario)
    ref_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, trial, 99)))
    rows = []
    for step, (action, batch) in enumerate(zip(history.actions, history.batches), 1):
        for m in methods.values():
            m.update(action, batch, streams.sampler)
        reference.update(action, batch)
        if cfg.kind == "psafe-vs-time":
            plan = _eval_plan(scenario, step, cfg.eval_horizon)
            ref_val = reference.estimate(plan, cfg.reference_samples, ref_rng)[
                "p_safe"
            ].value
            for tag, m in methods.items():
                t0 = time.perf_counter()
                est = m.estimate(plan, cfg.n_samples, streams.sampler)["p_safe"]
                wall = (time.perf_counter() - t0) * 1e3
                rows.append(
                    MetricRow(
                        trial=trial,
                        time_step=step,
                        method=tag,
                        estimate=est.value,
                        reference_value=ref_val,
                        squared_error=(est.value - ref_val) ** 2,
                        wall_ms=wall,
                        n_samples=cfg.n_samples,
                    )
                )
    if cfg.kind == "rmse-vs-samples":
        plan = _eval_plan(scenario, cfg.n_steps, cfg.eval_horizon)
        ref_val = reference.estimate(plan, cfg.reference_samples, ref_rng)[
            "p_safe"
        ].value
        for n_s in cfg.sweep["n_samples"]:
            for tag, m in methods.items():
                t0 = time.perf_counter()
                est = m.estimate(plan, int(n_s), streams.sampler)["p_safe"]
                wall = (time.perf_counter() - t0) * 1e3
                rows.append(
                    MetricRow(
                        trial=trial,
                        time_step=cfg.n_steps,
                        method=tag,
                        estimate=est.value,
                        reference_value=ref_val,
                        squared_error=(est.value - ref_val) ** 2,
                        wall_ms=wall,
                        n_samples=int(n_s),
                        sweep_value=int(n_s),
                    )
                )
    rows_meta = {"trial": trial, "stream_hash": history.stream_hash()}
    return [rows, rows_meta]


def _size_sweep_trial(
    cfg_dict: dict, scenario: Scenario, sweep_value, trial: int
) -> list:
    cfg = ExperimentConfig.from_dict(dict(cfg_dict, scenario=scenario.to_dict()))
    streams = trial_streams(cfg.seed, trial)
    world, history = simulate(scenario, cfg.n_steps, streams.world, streams.noise)
    methods = {
        tag: create_method(tag, scenario, **cfg.method_options(tag))
        for tag in cfg.methods
    }
    reference = _reference_method(scenario)
    ref_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, trial, 99)))
    update_wall = {tag: 0.0 for tag in cfg.methods}
    for action, batch in zip(history.actions, history.batches):
        for tag, m in methods.items():
            t0 = time.perf_counter()
            m.update(action, batch, streams.sampler)
            update_wall[tag] += time.perf_counter() - t0
        reference.update(action, batch)
    plan = _eval_plan(scenario, cfg.n_steps, cfg.eval_horizon)
    ref_val = reference.estimate(plan, cfg.reference_samples, ref_rng)["p_safe"].value
    rows = []
    for tag, m in methods.items():
        t0 = time.perf_counter()
        est = m.estimate(plan, cfg.n_samples, streams.sampler)["p_safe"]
        wall = (time.perf_counter() - t0 + update_wall[tag]) * 1e3
        rows.append(
            MetricRow(
                trial=trial,
                time_step=cfg.n_steps,
                method=tag,
                estimate=est.value,
                reference_value=ref_val,
                squared_error=(est.value - ref_val) ** 2,
                wall_ms=wall,
                n_samples=cfg.n_samples,
                sweep_value=sweep_value,
            )
        )
    return [rows, {"trial": trial, "stream_hash": history.stream_hash()}]


def _planning_trial(cfg_dict: dict, scenario: Scenario, item) -> list:
    cfg = ExperimentConfig.from_dict(dict(cfg_dict, scenario=scenario.to_dict()))
    trial, tag = item
    pcfg = PlannerConfig(
        n_samples=cfg.n_samples,
        method_options=cfg.method_options(tag),
        **cfg.planner,
    )
    res = run_planning_trial(scenario, tag, trial, cfg.seed, pcfg)
    return [res]


def _pmap(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Run one configured experiment; writes rows CSV and summary JSON.

    Returns the summary dict (with file paths under "files")."""
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = config.echo()
    cfg_dict.pop("scenario")
    summary: dict = {
        "kind": config.kind,
        "seed": config.seed,
        "methods": list(config.methods),
        "kernel_backend": _kernels.backend(),
        "config": cfg_dict,
    }
    t_start = time.perf_counter()
    if config.kind in ("psafe-vs-time", "rmse-vs-samples"):
        results = _pmap(
            partial(_estimation_trial, cfg_dict, config.scenario),
            range(config.trials),
            config.workers,
        )
        rows = [r for res in results for r in res[0]]
        summary["stream_hashes"] = {str(res[1]["trial"]): res[1]["stream_hash"] for res in results}
    elif config.kind in ("rmse-vs-classes", "rmse-vs-objects"):
        param = "n_classes" if config.kind == "rmse-vs-classes" else "n_objects"
        rows = []
        hashes = {}
        for value in config.sweep[param]:
            scen = resize_scenario(config.scenario, **{param: int(value)})
            results = _pmap(
                partial(_size_sweep_trial, cfg_dict, scen, int(value)),
                range(config.trials),
                config.workers,
            )
            rows.extend(r for res in results for r in res[0])
            hashes[str(value)] = {
                str(res[1]["trial"]): res[1]["stream_hash"] for res in results
            }
        summary["stream_hashes"] = hashes
    elif config.kind == "planning-table":
        items = [(t, tag) for t in range(config.trials) for tag in config.methods]
        results = _pmap(
            partial(_planning_trial, cfg_dict, config.scenario), items, config.workers
        )
        plan_rows = [r for res in results for r in res]
        summary["planning"] = _summarize_planning(plan_rows)
        summary["wall_s"] = time.perf_counter() - t_start
        files = emit_planning(plan_rows, summary, out, prefix=config.kind)
        summary["files"] = files
        return summary
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(f"unhandled kind {config.kind}")
    summary.update(_summarize_metrics(rows))
    summary["wall_s"] = time.perf_counter() - t_start
    files = emit_plotdata(rows, summary, out, prefix=config.kind)
    summary["files"] = files
    return summary


def _summarize_metrics(rows: list) -> dict:
    agg: dict = {}
    for row in rows:
        key = (row.method, str(row.sweep_value), row.time_step)
        agg.setdefault(key, []).append(row)
    per_group = {}
    for (method, sweep, step), grp in sorted(agg.items()):
        se = np.array([r.squared_error for r in grp])
        per_group[f"{method}|sweep={sweep}|t={step}"] = {
            "rmse": float(np.sqrt(se.mean())),
            "mean_wall_ms": float(np.mean([r.wall_ms for r in grp])),
            "n_rows": len(grp),
        }
    slopes = {}
    methods = {r.method for r in rows}
    for method in sorted(methods):
        pts = {}
        for row in rows:
            if row.method == method and row.sweep_value != "":
                pts.setdefault(float(row.sweep_value), []).append(row)
        if len(pts) >= 2:
            xs = np.log(sorted(pts))
            rmse = np.array(
                [
                    math.sqrt(np.mean([r.squared_error for r in pts[v]]))
                    for v in sorted(pts)
                ]
            )
            wall = np.array(
                [np.mean([r.wall_ms for r in pts[v]]) for v in sorted(pts)]
            )
            with np.errstate(divide="ignore"):
                log_rmse = np.log(rmse)
                log_wall = np.log(wall)
            slopes[method] = {
                "rmse_slope": (
                    float(np.polyfit(xs, log_rmse, 1)[0])
                    if np.all(np.isfinite(log_rmse))
                    else None
                ),
                "wall_slope": (
                    float(np.polyfit(xs, log_wall, 1)[0])
                    if np.all(np.isfinite(log_wall))
                    else None
                ),
            }
    return {"groups": per_group, "loglog_slopes": slopes}


def _summarize_planning(rows: list) -> dict:
    out = {}
    for tag in sorted({r.method for r in rows}):
        grp = [r for r in rows if r.method == tag]
        out[tag] = {
            "trials": len(grp),
            "safe_rate": float(np.mean([r.safe for r in grp])),
            "reach_rate": float(np.mean([r.reached_goal for r in grp])),
            "stop_rate": float(np.mean([r.stopped for r in grp])),
            "mean_dist_to_goal": float(np.mean([r.dist_to_goal for r in grp])),
            "mean_traj_len": float(np.mean([r.traj_len for r in grp])),
            "mean_wall_ms": float(np.mean([r.wall_ms for r in grp])),
        }
    return out


# ----------------------------------------------------------------------
# emission


def emit_plotdata(rows, summary: dict, out_dir, prefix: str) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / f"{prefix}_rows.csv"
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.trial,
                    r.time_step,
                    r.method,
                    repr(r.estimate),
                    repr(r.reference_value),
                    repr(r.squared_error),
                    repr(r.wall_ms),
                    r.n_samples,
                    r.sweep_value,
                ]
            )
    summary_path = out / f"{prefix}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, default=str)
    return {"rows": str(rows_path), "summary": str(summary_path)}


def emit_planning(rows, summary: dict, out_dir, prefix: str) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / f"{prefix}_rows.csv"
    with open(rows_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PLANNING_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.trial,
                    r.method,
                    int(r.safe),
                    int(r.reached_goal),
                    repr(r.dist_to_goal),
                    repr(r.traj_len),
                    repr(r.wall_ms),
                ]
            )
    summary_path = out / f"{prefix}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, default=str)
    return {"rows": str(rows_path), "summary": str(summary_path)}
