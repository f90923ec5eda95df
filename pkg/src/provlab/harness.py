"""Experiment orchestration: bound-verification suites and scaling sweeps.

Every experiment maps (config, seed) to a list of ResultRow. Rows are
sorted by key before writing so the CSV body is independent of worker
scheduling; runtimes go to the JSON summary only.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import certificates as cert
from . import estimation as est
from . import planners as pl
from .environments import EnvSpec, generate, line_state_metric, random_goal_measure_model, random_mdp
from .mdp import MdpModel, PolicyTable, load_model, optimal_policy, solve_exact
from .truncation import verify_truncation_bound

log = logging.getLogger(__name__)

EXPERIMENTS = ("certificates", "regret_worstcase", "fast_rate", "estimation_coverage",
               "adaptive_deviation", "truncation", "scaling_sweep")
WORKERS_ENV = "PROVLAB_WORKERS"


class ConfigError(ValueError):
    pass


def rng_for(experiment: str, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by experiment name and ints."""
    ss = np.random.SeedSequence([zlib.crc32(experiment.encode()), *[int(k) for k in keys]])
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: list
    output: str = "results/out"
    env: dict | str | None = None
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        if not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be integers")
        if isinstance(self.env, str) and not Path(self.env).exists():
            raise ConfigError(f"model file {self.env!r} does not exist")
        if not isinstance(self.parameters, dict):
            raise ConfigError("parameters must be a table/object")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - {"experiment", "seeds", "output", "env", "parameters"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "experiment" not in doc or "seeds" not in doc:
            raise ConfigError("config needs 'experiment' and 'seeds'")
        return cls(**doc)

    def model(self) -> tuple[MdpModel, Any]:
        if isinstance(self.env, str):
            m = load_model(Path(self.env).read_text())
            w = np.zeros(m.n_states)
            w[0] = 1.0
            return m, w
        m, dist = generate(EnvSpec.from_dict(self.env))
        return m, dist.weights


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            doc = tomllib.loads(text)
        else:
            doc = json.loads(text)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError("config must be an object")
    return ExperimentConfig.from_dict(doc)


@dataclass
class ResultRow:
    experiment: str
    instance: str
    bound: float
    measured: float
    holds: bool
    runtime: float = 0.0
    relation: str = "<="  # measured <= bound, measured >= bound, or bound_low <= measured <= bound ("in")
    tol: float = 0.0
    bound_low: float = float("nan")

    def recompute(self) -> bool:
        if self.relation == "<=":
            return self.measured <= self.bound + self.tol
        if self.relation == ">=":
            return self.measured >= self.bound - self.tol
        return self.bound_low - self.tol <= self.measured <= self.bound + self.tol


CSV_FIELDS = ["experiment", "instance", "bound_low", "bound", "measured", "holds", "relation", "tol"]


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_FIELDS)
    for r in sorted(rows, key=lambda r: (r.experiment, r.instance)):
        w.writerow([r.experiment, r.instance, "" if r.relation != "in" else repr(float(r.bound_low)), repr(float(r.bound)), repr(float(r.measured)),
                    "true" if r.holds else "false", r.relation, repr(float(r.tol))])
    return buf.getvalue()


# -- experiments -----------------------------------------------------------

def _certificates(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    p = cfg.parameters
    rng = rng_for("certificates", seed)
    if cfg.env is None:
        model = random_mdp(p.get("n_states", 40), p.get("n_actions", 3), p.get("horizon", 6), seed)
        x0 = int(np.flatnonzero(~model.goal)[0]) if (~model.goal).any() else 0
    else:
        model, w = cfg.model()
        x0 = int(np.argmax(w))
    tables = solve_exact(model)
    lower, upper = random_valid_certificates(model, rng)
    res = cert.certify_sandwich(model, lower, upper, x0)
    v = float(tables.v_star[-1, x0])
    row = ResultRow("certificates", f"seed{seed:06d}/x{x0}", res.upper, v, False, relation="in",
                    tol=cert.CERT_TOL, bound_low=res.lower)
    row.holds = res.status == "ok" and row.recompute()
    return [row]


def random_valid_certificates(model: MdpModel, rng: np.random.Generator):
    """Random sub-/super-solutions: shrink T-iterates downward, inflate upward."""
    B, S = model.horizon, model.n_states
    g = model.goal.astype(float)
    L = np.empty((B + 1, S))
    U = np.empty((B + 1, S))
    L[0] = g * rng.uniform(0, 1, S)
    U[0] = np.maximum(g, np.where(rng.random(S) < 0.2, rng.random(S), 0.0))
    for b in range(B):
        L[b + 1] = cert.bellman_apply(model, L[b]) * rng.uniform(0.5, 1.0, S) ** 2
        U[b + 1] = np.minimum(1.0, cert.bellman_apply(model, U[b]) + (rng.random(S) < 0.2) * rng.exponential(0.02, S))
    return cert.CertificateSequence("lower", L), cert.CertificateSequence("upper", U)


def _regret_worstcase(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    p = cfg.parameters
    eps_grid = p.get("eps_grid", [0.01, 0.05, 0.1])
    if cfg.env is None:
        model = random_mdp(p.get("n_states", 30), p.get("n_actions", 3), p.get("horizon", 5), seed)
        x0 = int(np.flatnonzero(~model.goal)[0]) if (~model.goal).any() else 0
    else:
        model, w = cfg.model()
        x0 = int(np.argmax(w))
    tables = solve_exact(model)
    rows = []
    for i, eps in enumerate(eps_grid):
        sc = pl.perturbed_scores(model, tables, eps, rng_for("regret_worstcase", seed, i))
        rep = pl.measure_regret(model, pl.greedy_policy(sc), x0, sc, tables)
        rows.append(ResultRow("regret_worstcase", f"seed{seed:06d}/eps{eps:g}", rep.bound, rep.regret,
                              bool(rep.holds), tol=pl.BOUND_TOL))
    return rows


def _fast_rate(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    p = cfg.parameters
    env = dict(cfg.env or {"family": "margin_designed", "depth": 6, "width": 40})
    env["seed"] = seed
    model, dist = generate(EnvSpec.from_dict(env))
    tables = solve_exact(model)
    table = pl.fast_rate_experiment(model, p.get("k", 1), p.get("eps_grid", [0.02, 0.04, 0.08, 0.16]),
                                    p.get("trials", 500), seed, dist.weights, tables)
    return [ResultRow("fast_rate", f"seed{seed:06d}/eps{r['epsilon']:g}", r["bound"], r["mean_regret"],
                      r["mean_regret"] <= r["bound"] + pl.BOUND_TOL, tol=pl.BOUND_TOL) for r in table]


def estimation_instance(n_points: int = 200, n_actions: int = 1, frequency: float = 1.0, depth: int = 1,
                        move_prob: float = 0.0, seed: int = 0):
    spec = EnvSpec("lipschitz_line", width=n_points, n_actions=n_actions, frequency=frequency, depth=depth,
                   move_prob=move_prob, seed=seed)
    model, _ = generate(spec)
    tables = solve_exact(model)
    pairs = [(x, a) for x in range(n_points) for a in range(n_actions)]
    dom = est.pair_space(model, pairs, state_dist=line_state_metric(model))
    return model, tables, dom


def _estimation_coverage(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    p = cfg.parameters
    model, tables, dom = estimation_instance(p.get("n_points", 200), p.get("n_actions", 1), p.get("frequency", 1.0))
    rows = []
    for delta in p.get("deltas", [0.05, 0.2]):
        conf = est.CoverageConfig(1, p.get("eta", 0.05), p.get("lip_const", 2.5), p.get("m", 200), delta, dom)
        rep = est.verify_uniform_bound(model, tables, conf, p.get("trials", 500), seed)
        rows.append(ResultRow("estimation_coverage", f"seed{seed:06d}/delta{delta:g}", rep.threshold, rep.coverage,
                              rep.passed, relation=">="))
    return rows


def _adaptive_deviation(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    p = cfg.parameters
    rows = []
    delta = p.get("delta", 0.05)
    for N in p.get("n_functions", [1, 32]):
        for n in p.get("n", [500, 2000]):
            chain, F = deviation_setup(N, seed)
            rep = est.adaptive_deviation_experiment(chain, F, n, 0.0, delta, p.get("trials", 500), seed)
            rows.append(ResultRow("adaptive_deviation", f"seed{seed:06d}/N{N}/n{n}", rep.threshold, rep.coverage,
                                  rep.passed, relation=">="))
    return rows


def deviation_setup(n_functions: int, seed: int, n_states: int = 6):
    """A history-dependent two-kernel chain and N random functions into [0, 1]."""
    rng = rng_for("deviation_setup", seed, n_functions)
    k0 = rng.dirichlet(np.ones(n_states) * 0.5, size=n_states)
    k1 = rng.dirichlet(np.ones(n_states) * 0.5, size=n_states)
    chain = est.AdaptiveChain((k0, k1), np.full(n_states, 1.0 / n_states), switch_at=1.0 / n_states)
    F = rng.uniform(0, 1, size=(n_functions, n_states))
    return chain, F


def _truncation(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    model, dist = random_goal_measure_model(seed)
    rng = rng_for("truncation", seed)
    masses = np.array([x.total_mass for x in model.payloads])
    x0 = int(np.argmax(dist.weights))
    w = float(rng.uniform(masses[x0], masses.max() + 0.5))
    probs = rng.dirichlet(np.ones(model.max_actions), size=(model.horizon + 1, model.n_states))
    probs = np.where(model.action_mask[None], probs, 0.0)
    probs /= probs.sum(axis=2, keepdims=True)
    chk = verify_truncation_bound(model, PolicyTable(probs), x0, w)
    inst = f"seed{seed:06d}/W{w:.3f}"
    return [ResultRow("truncation", inst, chk.v_trunc - chk.delta_w, chk.v_true, chk.holds, relation=">=", tol=1e-12),
            ResultRow("truncation", inst + "/coupled", chk.v_trunc, chk.v_true, chk.coupled_holds, relation=">=", tol=1e-12)]


def _scaling(cfg: ExperimentConfig, seed: int) -> list[ResultRow]:
    table = scaling_sweep(cfg, seed)
    lo, hi = table["slope_range"]
    return [ResultRow("scaling_sweep", f"seed{seed:06d}/{table['axis']}", hi, table["slope"], table["holds"],
                      relation="in", bound_low=lo)]


RUNNERS: dict[str, Callable[[ExperimentConfig, int], list[ResultRow]]] = {
    "certificates": _certificates,
    "regret_worstcase": _regret_worstcase,
    "fast_rate": _fast_rate,
    "estimation_coverage": _estimation_coverage,
    "adaptive_deviation": _adaptive_deviation,
    "truncation": _truncation,
    "scaling_sweep": _scaling,
}


# -- scaling sweeps ---------------------------------------------------------

MIN_AXIS_POINTS = 4
PREDICTED = {"eps_worstcase": 1.0, "eps_margin": None, "n": None}


def scaling_sweep(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    """Run one sweep axis and fit the log-log slope.

    axes: eps_worstcase (log-uniform gaps, predicted slope 1),
          eps_margin (uniform gaps, predicted beta + 1 = 2),
          n (estimation sup-error at eta ~ n^(-1/(d+2)), predicted -1/(d+2)).
    """
    p = cfg.parameters
    seed = cfg.seeds[0] if seed is None else seed
    axis = p.get("axis", "eps_margin")
    values = p.get("values")
    if axis in ("eps_worstcase", "eps_margin"):
        values = values or [0.02, 0.04, 0.08, 0.16]
        if len(values) < MIN_AXIS_POINTS:
            raise ConfigError(f"need at least {MIN_AXIS_POINTS} axis points to fit a slope")
        profile = "log_uniform_gaps" if axis == "eps_worstcase" else "uniform_gaps"
        env = dict(cfg.env or {"family": "margin_designed", "depth": 6, "width": 40})
        env.setdefault("margin_profile", profile)
        env["seed"] = seed
        model, dist = generate(EnvSpec.from_dict(env))
        tables = solve_exact(model)
        rows = pl.fast_rate_experiment(model, p.get("k", 1), values, p.get("trials", 500), seed, dist.weights, tables)
        ys = [r["mean_regret"] for r in rows]
        predicted = 1.0 if axis == "eps_worstcase" else 2.0
        default_range = [0.8, 1.2] if axis == "eps_worstcase" else [1.6, 2.4]
    elif axis == "n":
        values = values or [2_000, 8_000, 32_000, 128_000, 512_000]
        if len(values) < MIN_AXIS_POINTS:
            raise ConfigError(f"need at least {MIN_AXIS_POINTS} axis points to fit a slope")
        rows, ys = estimation_error_vs_n(values, seed, p.get("trials", 20), p.get("eta_scale", 1.0),
                                         p.get("n_points", 400))
        predicted = -1.0 / 3.0
        default_range = [-0.5, -0.2]
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    slope, intercept = pl.loglog_fit(values, ys)
    lo, hi = p.get("slope_range", default_range)
    return {"axis": axis, "values": list(values), "measured": ys, "rows": rows, "slope": slope,
            "intercept": intercept, "predicted": predicted, "slope_range": [lo, hi], "holds": lo <= slope <= hi}


def estimation_error_vs_n(ns, seed: int, trials: int = 20, eta_scale: float = 1.0, n_points: int = 400):
    """Mean true sup-error of the net estimator with eta = c n^(-1/3) and
    m = n / N labels per center on the 1-D line domain (d = 1)."""
    model, tables, dom = estimation_instance(n_points, 1, 1.0)
    target = est.target_values(tables, 1, dom)
    lip_q = est.lipschitz_constant(target, dom)
    policy = optimal_policy(model, tables)
    rows, means = [], []
    for i, n in enumerate(ns):
        eta = eta_scale * n ** (-1.0 / 3.0)
        net = est.build_greedy_net(dom, eta)
        m = max(1, int(n // len(net)))
        errs = []
        for t in range(trials):
            data = est.rollout_labels(model, policy, 1, net.center_ids, m, seed * 7919 + i * 1000 + t, "optimal")
            h = est.fit_net_estimator(dom, data, eta, lip_q, net)
            errs.append(float(np.abs(h.values() - target).max()))
        rows.append({"n": int(n), "eta": eta, "n_centers": len(net), "m": m, "mean_sup_error": float(np.mean(errs))})
        means.append(float(np.mean(errs)))
    return rows, means


# -- driver ----------------------------------------------------------------

def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_seed(args) -> tuple[list[ResultRow], float]:
    cfg, seed = args
    t0 = time.perf_counter()
    rows = RUNNERS[cfg.experiment](cfg, seed)
    dt = time.perf_counter() - t0
    for r in rows:
        r.runtime = dt
    return rows, dt


def execute(cfg: ExperimentConfig) -> list[ResultRow]:
    jobs = [(cfg, s) for s in cfg.seeds]
    n = _workers()
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(n) as pool:
            out = list(pool.map(_run_seed, jobs))
    else:
        out = [_run_seed(j) for j in jobs]
    rows = [r for rs, _ in out for r in rs]
    return sorted(rows, key=lambda r: (r.experiment, r.instance))


def run(cfg: ExperimentConfig) -> int:
    """Run all seeds, write <output>.csv and <output>.json; 0 iff all hold."""
    rows = execute(cfg)
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    csv_path.write_text(rows_to_csv(rows), newline="")
    failed = [r.instance for r in rows if not r.holds]
    summary = {
        "experiment": cfg.experiment,
        "rows": len(rows),
        "failures": failed,
        "all_hold": not failed,
        "runtimes": {r.instance: r.runtime for r in rows},
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2))
    log.info("%s: %d rows, %d failures -> %s", cfg.experiment, len(rows), len(failed), csv_path)
    return 0 if not failed else 1


def sweep(cfg: ExperimentConfig) -> int:
    table = scaling_sweep(cfg)
    out = Path(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    if table["axis"] == "n":
        w.writerow(["n", "eta", "n_centers", "m", "mean_sup_error"])
        for r in table["rows"]:
            w.writerow([r["n"], repr(r["eta"]), r["n_centers"], r["m"], repr(r["mean_sup_error"])])
    else:
        w.writerow(["epsilon", "mean_regret", "std", "trials", "bound"])
        for r in table["rows"]:
            w.writerow([repr(r["epsilon"]), repr(r["mean_regret"]), repr(r["std"]), r["trials"], repr(r["bound"])])
    out.with_suffix(".csv").write_text(buf.getvalue(), newline="")
    summary = {k: table[k] for k in ("axis", "values", "measured", "slope", "predicted", "slope_range", "holds")}
    out.with_suffix(".json").write_text(json.dumps(summary, indent=2))
    return 0 if table["holds"] else 1
