"""Command-line front end: config parsing, experiment runs, artifact emission.

One experiment per invocation.  The config is a single TOML file; unknown
sections or keys are hard errors so a typo cannot silently fall back to a
default.  Every run writes its resolved configuration, the requested CSV
artifacts, and a machine-readable report.json into the output directory.

Exit codes: 0 all metrics pass, 1 a metric failed or a solver raised,
2 the config (or the command line) is unusable.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import acceptance as acc
from . import bsde as bsde_mod
from . import utility as util
from .bsde import BsdeSolution, GeneratorSpec
from .core import (
    ClaimSpec,
    FiniteLevyMeasure,
    IntensitySpec,
    MarketSpec,
    TimeFunction,
    TimeGrid,
    build_grid,
    claim_capped_call,
    claim_constant,
    claim_survival,
    claim_zero,
    validate_model,
)
from .enlargement import azema, joint_compensator_residual
from .market import simulate
from .oracle import (
    build_tree,
    spanning_dimensions,
    tree_bsde,
    tree_conditional_expectation,
    tree_probs_from_model,
    tree_representation,
)

EXPERIMENTS = (
    "simulate", "verify-enlargement", "solve", "optimize",
    "indifference", "random-horizon", "oracle", "acceptance",
)


class ConfigError(Exception):
    pass


# ------------------------------------------------------------------- config
_SCHEMA = {
    "grid": {"T", "n_steps"},
    "market": {"d", "sigma", "phi", "S0", "alpha", "x"},
    "jumps": {"atoms", "weights", "zeta"},
    "default": {"lambda"},
    "claim": {"kind", "parameters", "bound", "measurability"},
    "solver": {"mode", "n_paths", "basis_degree", "seed"},
    "experiment": {"kind", "tolerance_scale"},
}
_CLAIM_KINDS = ("zero", "constant", "survival", "default_indicator", "capped_call")


@dataclass
class ExperimentConfig:
    grid: TimeGrid
    market: MarketSpec
    levy: FiniteLevyMeasure
    intensity: IntensitySpec
    claim: ClaimSpec
    mode: str
    n_paths: int
    basis_degree: int
    seed: int
    kind: str | None
    tolerance_scale: float
    resolved: dict


def _check_keys(raw: dict) -> None:
    for section, content in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in content:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")


def _num(section: dict, name: str, where: str, default=None, required=False):
    if name not in section:
        if required:
            raise ConfigError(f"missing key '{name}' in [{where}]")
        return default
    v = section[name]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{name}' in [{where}] must be a number")
    return v


def _build_market(section: dict, d: int) -> MarketSpec:
    sigma_raw = section.get("sigma", 0.2)
    if isinstance(sigma_raw, (int, float)):
        if d != 1:
            raise ConfigError("scalar sigma needs d = 1; give a d x d matrix")
        sigma = np.array([[float(sigma_raw)]])
    else:
        sigma = np.asarray(sigma_raw, dtype=float)
        if sigma.shape != (d, d):
            raise ConfigError(f"sigma must be a {d}x{d} matrix")
    phi_raw = section.get("phi", 0.0)
    phi = (np.full(d, float(phi_raw)) if isinstance(phi_raw, (int, float))
           else np.asarray(phi_raw, dtype=float))
    if phi.shape != (d,):
        raise ConfigError(f"phi must be a scalar or a length-{d} list")
    s0_raw = section.get("S0", 1.0)
    s0 = (np.full(d, float(s0_raw)) if isinstance(s0_raw, (int, float))
          else np.asarray(s0_raw, dtype=float))
    if s0.shape != (d,):
        raise ConfigError(f"S0 must be a scalar or a length-{d} list")
    if np.any(s0 <= 0.0):
        raise ConfigError("S0 must be positive")
    alpha = _num(section, "alpha", "market", default=1.0)
    if alpha <= 0.0:
        raise ConfigError("alpha must be positive")
    return MarketSpec(
        d=d, sigma=sigma, phi=phi, s0=s0, alpha=float(alpha),
        x=float(_num(section, "x", "market", default=0.0)),
        phi_max=float(np.linalg.norm(phi)),
    )


def _build_levy(section: dict, d: int) -> FiniteLevyMeasure:
    atoms_raw = section.get("atoms", [])
    weights_raw = section.get("weights", [])
    zeta_raw = section.get("zeta", [1.0] * len(weights_raw))
    if not atoms_raw:
        return FiniteLevyMeasure.none(d=d)
    atoms = np.asarray(atoms_raw, dtype=float)
    if atoms.ndim == 1:
        atoms = atoms[:, None]
    if atoms.shape[1] != d:
        raise ConfigError(f"each atom must have {d} components")
    m = atoms.shape[0]
    if len(weights_raw) != m or len(zeta_raw) != m:
        raise ConfigError("atoms, weights, and zeta must have equal length")
    return FiniteLevyMeasure(
        atoms=atoms,
        weights=np.asarray(weights_raw, dtype=float),
        zeta=tuple(TimeFunction.constant(float(z)) for z in zeta_raw),
    )


def _build_intensity(section: dict) -> IntensitySpec:
    lam = section.get("lambda", 0.0)
    if isinstance(lam, (int, float)) and not isinstance(lam, bool):
        return IntensitySpec(TimeFunction.constant(float(lam)))
    if (isinstance(lam, list) and len(lam) == 2
            and all(isinstance(part, list) for part in lam)):
        return IntensitySpec(TimeFunction.piecewise(lam[0], lam[1]))
    raise ConfigError("lambda must be a number or [[knots], [values]]")


def _build_claim(section: dict) -> ClaimSpec:
    kind = section.get("kind", "zero")
    if kind not in _CLAIM_KINDS:
        raise ConfigError(f"claim kind must be one of {_CLAIM_KINDS}")
    params = section.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("claim parameters must be a table")
    meas = section.get("measurability")
    if kind == "survival":
        g1 = float(_num(params, "g1", "claim.parameters", required=True))
        g2 = float(_num(params, "g2", "claim.parameters", required=True))
        return claim_survival(g1, g2, measurability=meas or "G_T")
    if kind == "zero":
        claim = claim_zero()
    elif kind == "constant":
        claim = claim_constant(float(_num(params, "c", "claim.parameters",
                                          required=True)))
    elif kind == "default_indicator":
        claim = claim_survival(0.0, 1.0, measurability="G_T_tau")
    else:
        strike = float(_num(params, "strike", "claim.parameters", required=True))
        cap = float(_num(params, "cap", "claim.parameters", required=True))
        asset = int(_num(params, "asset", "claim.parameters", default=0))
        claim = claim_capped_call(strike, cap, asset)
    if meas is not None and meas != claim.measurability:
        raise ConfigError(
            f"claim kind '{kind}' is {claim.measurability}-measurable; "
            "measurability cannot be overridden"
        )
    return claim


def parse_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    _check_keys(raw)
    grid_sec = raw.get("grid", {})
    T = _num(grid_sec, "T", "grid", required=True)
    n_steps = _num(grid_sec, "n_steps", "grid", required=True)
    if T <= 0.0 or int(n_steps) < 1 or n_steps != int(n_steps):
        raise ConfigError("need T > 0 and integer n_steps >= 1 in [grid]")
    grid = build_grid(float(T), int(n_steps))

    market_sec = raw.get("market", {})
    d = int(_num(market_sec, "d", "market", default=1))
    if d < 1:
        raise ConfigError("d must be at least 1")
    market = _build_market(market_sec, d)
    levy = _build_levy(raw.get("jumps", {}), d)
    intensity = _build_intensity(raw.get("default", {}))
    claim = _build_claim(raw.get("claim", {}))

    solver_sec = raw.get("solver", {})
    mode = solver_sec.get("mode", "lsmc")
    if mode not in ("lsmc", "ode", "tree"):
        raise ConfigError("solver mode must be lsmc, ode, or tree")
    n_paths = int(_num(solver_sec, "n_paths", "solver", default=10_000))
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1")
    basis_degree = int(_num(solver_sec, "basis_degree", "solver", default=2))
    if basis_degree < 1:
        raise ConfigError("basis_degree must be at least 1")
    seed = int(_num(solver_sec, "seed", "solver", default=acc.SEED))
    if seed_override is not None:
        seed = int(seed_override)

    exp_sec = raw.get("experiment", {})
    kind = exp_sec.get("kind")
    if kind is not None and kind not in EXPERIMENTS:
        raise ConfigError(f"experiment kind must be one of {EXPERIMENTS}")
    tolerance_scale = float(_num(exp_sec, "tolerance_scale", "experiment", default=1.0))
    if tolerance_scale <= 0.0:
        raise ConfigError("tolerance_scale must be positive")

    report = validate_model(market, levy, intensity, grid)
    if report.errors:
        raise ConfigError("; ".join(report.errors))

    resolved = {
        "grid": {"T": grid.T, "n_steps": grid.n_steps},
        "market": {
            "d": d, "sigma": np.asarray(market.sigma).tolist(),
            "phi": np.asarray(market.phi).tolist(), "S0": market.s0.tolist(),
            "alpha": market.alpha, "x": market.x,
        },
        "jumps": {
            "atoms": levy.atoms.tolist(), "weights": levy.weights.tolist(),
            "zeta": [z.c for z in levy.zeta],
        },
        "default": {"lambda": raw.get("default", {}).get("lambda", 0.0)},
        "claim": {
            "kind": claim.kind, "parameters": raw.get("claim", {}).get("parameters", {}),
            "measurability": claim.measurability, "bound": claim.bound,
        },
        "solver": {"mode": mode, "n_paths": n_paths,
                   "basis_degree": basis_degree, "seed": seed},
        "experiment": {"kind": kind, "tolerance_scale": tolerance_scale},
    }
    return ExperimentConfig(
        grid=grid, market=market, levy=levy, intensity=intensity, claim=claim,
        mode=mode, n_paths=n_paths, basis_degree=basis_degree, seed=seed,
        kind=kind, tolerance_scale=tolerance_scale, resolved=resolved,
    )


def load_config(path: str, seed_override: int | None = None) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return parse_config(raw, seed_override)


# ------------------------------------------------------------------ writers
def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_paths_csv(path, batch) -> None:
    d = batch.s.shape[2]
    nodes = batch.grid.nodes
    enl = batch.enlargement
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id", "t"] + [f"S_{j + 1}" for j in range(d)]
                   + ["H", "A", "Lambda", "M", "U"])
        for i in range(batch.n_paths):
            for k in range(nodes.size):
                w.writerow(
                    [str(i), _fmt(nodes[k])]
                    + [_fmt(batch.s[i, k, j]) for j in range(d)]
                    + [_fmt(enl.H[i, k]), _fmt(enl.A[k]), _fmt(enl.Lambda[i, k]),
                       _fmt(enl.M[i, k]), _fmt(enl.U[i, k])]
                )


def write_bsde_csv(path, sol, m: int = 0) -> None:
    grid = sol.grid
    n = grid.n_steps
    is_mc = isinstance(sol, BsdeSolution)
    d = sol.z_real.shape[2] if is_mc else 1
    header = (["t", "Y_mean", "Y_se"] + [f"Z_mean_{j + 1}" for j in range(d)]
              + [f"W_{i + 1}_mean" for i in range(m)] + ["W_def_mean", "clamp_hits"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(n + 1):
            if is_mc:
                col = sol.y_real[:, k]
                y_mean, y_se = np.mean(col), np.std(col) / np.sqrt(col.size)
                z = np.mean(sol.z_real[:, k, :], axis=0) if k < n else np.zeros(d)
                w_def = np.mean(sol.w_def_real[:, k]) if k < n else 0.0
                hits = int(sol.clamp_hits[k]) if k < n else 0
            else:
                y_mean, y_se = sol.y_pre[k], 0.0
                z = np.zeros(d)
                w_def = sol.y_post[k] - sol.y_pre[k] if k < n else 0.0
                hits = 0
            w.writerow([_fmt(grid.nodes[k]), _fmt(y_mean), _fmt(y_se)]
                       + [_fmt(v) for v in z] + ["0"] * m
                       + [_fmt(w_def), str(hits)])


def write_tree_csv(path, tree, y_levels, rep) -> None:
    m = tree.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "t", "state", "Y", "K"]
                   + [f"W_{i + 1}" for i in range(m)] + ["W_def", "residual"])
        node_id = 0
        for k in range(tree.n + 1):
            lev = tree.levels[k]
            for i in range(lev.size):
                state = ":".join(
                    [str(int(lev.j[i]))]
                    + [str(int(c)) for c in lev.tally[i]]
                    + [str(int(lev.defaulted[i]))]
                )
                if k < tree.n:
                    tail = ([_fmt(rep.K[k][i])]
                            + [_fmt(rep.W[k][i, j]) for j in range(m)]
                            + [_fmt(rep.W_def[k][i]), _fmt(rep.residual[k][i])])
                else:
                    tail = [""] * (m + 3)
                w.writerow([str(node_id), _fmt(tree.times[k]), state,
                            _fmt(y_levels[k][i])] + tail)
                node_id += 1


def write_optimality_csv(path, rep: util.OptimalityReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "value", "se"])
        for th, v, s in zip(rep.thetas, rep.values, rep.ses):
            w.writerow([_fmt(th), _fmt(v), _fmt(s)])


def write_rprocess_csv(path, rep: util.OptimalityReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mean_R", "se"])
        for t, mean, se in zip(rep.checkpoint_nodes, rep.checkpoint_means,
                               rep.checkpoint_ses):
            w.writerow([_fmt(t), _fmt(mean), _fmt(se)])


# ------------------------------------------------------------------- report
@dataclass
class RunReport:
    kind: str
    seed: int
    metrics: list = field(default_factory=list)       # acceptance.Metric
    artifacts: list = field(default_factory=list)
    seconds: float = 0.0
    pi: float | None = None
    value: float | None = None
    theta_star: float | None = None
    violations: dict | None = None
    criteria: list = field(default_factory=list)      # acceptance runs only

    @property
    def passed(self) -> bool:
        ok = all(m.passed for m in self.metrics)
        return ok and all(c.passed for c in self.criteria)

    def as_dict(self) -> dict:
        metrics = {
            m.name: {"value": m.value, "se": m.se, "tol": m.tol, "pass": m.passed}
            for m in self.metrics
        }
        for c in self.criteria:
            for m in c.metrics:
                metrics[f"{c.name}: {m.name}"] = {
                    "value": m.value, "se": m.se, "tol": m.tol, "pass": m.passed,
                }
            if c.budget is not None:
                metrics[f"{c.name}: runtime_s"] = {
                    "value": c.seconds, "se": None, "tol": c.budget,
                    "pass": c.seconds <= c.budget,
                }
        return {
            "experiment": self.kind,
            "seed": self.seed,
            "wall_time_s": self.seconds,
            "artifacts": sorted(self.artifacts),
            "metrics": metrics,
            "pi": None if self.pi is None else float(self.pi),
            "value": None if self.value is None else float(self.value),
            "theta_star": None if self.theta_star is None else float(self.theta_star),
            "violations": (None if self.violations is None
                           else {k: int(v) for k, v in self.violations.items()}),
            "pass": self.passed,
        }


def emit_report(report: RunReport, fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(report.as_dict(), sort_keys=True, indent=2)
    metrics = report.as_dict()["metrics"]
    lines = []
    for name, m in metrics.items():
        se = 0.0 if m["se"] is None else m["se"]
        tol = "-" if m["tol"] is None else f"{m['tol']:.3g}"
        lines.append(
            f"{name} {m['value']:.10g} ± {se:.3g} [tol {tol}] "
            f"{'PASS' if m['pass'] else 'FAIL'}"
        )
    n_pass = sum(1 for m in metrics.values() if m["pass"])
    lines.append(f"{report.kind}: {n_pass}/{len(metrics)} metrics passed "
                 f"({report.seconds:.1f}s, seed {report.seed})")
    return "\n".join(lines)


# -------------------------------------------------------------- experiments
def _metric(name, value, tol, se=None, exact=False):
    ok = (value == 0.0) if exact and tol == 0.0 else (abs(value) <= tol)
    return acc.Metric(name=name, value=float(value), tol=tol, se=se, passed=bool(ok))


def _gen_spec(cfg: ExperimentConfig, horizon: str = "fixed_T") -> GeneratorSpec:
    return GeneratorSpec(market=cfg.market, levy=cfg.levy,
                         intensity=cfg.intensity, horizon=horizon)


def _simulate_batch(cfg: ExperimentConfig, workers: int):
    return simulate(cfg.market, cfg.levy, cfg.intensity, cfg.grid,
                    n_paths=cfg.n_paths, seed=cfg.seed, workers=workers)


def _run_simulate(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    batch = _simulate_batch(cfg, workers)
    write_paths_csv(out_dir / "paths.csv", batch)
    rep.artifacts.append("paths.csv")
    h_T = batch.enlargement.H[:, -1]
    p_T = 1.0 - float(azema(cfg.intensity, cfg.grid.T))
    se = float(np.std(h_T) / np.sqrt(h_T.size)) if h_T.size > 1 else 0.0
    rep.metrics.append(_metric("default fraction at T - (1 - A_T)",
                               np.mean(h_T) - p_T, 3.0 * se + 1e-15, se=se))
    tau_cap = np.minimum(batch.default.tau[:, None], cfg.grid.nodes[None, :])
    ident = batch.enlargement.Lambda + np.log(azema(cfg.intensity, tau_cap))
    rep.metrics.append(_metric("max |Lambda + log A(tau^t)|",
                               np.max(np.abs(ident)), 1e-12))


def _run_verify_enlargement(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    batch = _simulate_batch(cfg, workers)
    write_paths_csv(out_dir / "paths.csv", batch)
    rep.artifacts.append("paths.csv")

    def w_default(t, x1, x2):
        return np.full(np.shape(t), float(x2 == 1))

    def w_zero(t, x1, x2):
        return np.zeros(np.shape(t))

    tests = [("default counter", w_default), ("zero integrand", w_zero)]
    for i in range(cfg.levy.m):
        atom = cfg.levy.atoms[i].copy()

        def w_atom(t, x1, x2, _a=atom):
            return np.full(np.shape(t), float(x2 == 0 and np.array_equal(x1, _a)))

        tests.append((f"mark {i + 1} counter", w_atom))
    for name, fn in tests:
        r, se = joint_compensator_residual(batch, fn)
        if name == "zero integrand":
            rep.metrics.append(_metric(f"residual[{name}]", r, 0.0, exact=True))
        else:
            rep.metrics.append(_metric(f"residual[{name}]", r, 3.0 * se + 1e-15, se=se))
    u_ident = batch.enlargement.U * batch.enlargement.A[None, :] - (
        cfg.grid.nodes[None, :] < batch.default.tau[:, None])
    rep.metrics.append(_metric("max |U A - 1{t<tau}|", np.max(np.abs(u_ident)), 1e-12))


def _tree_claim_values(cfg, tree):
    if cfg.claim.kind == "zero":
        g1 = g2 = 0.0
    elif cfg.claim.kind == "constant":
        g1 = g2 = cfg.claim.params["c"]
    elif cfg.claim.kind == "survival" and not callable(cfg.claim.params.get("g2")):
        g1, g2 = cfg.claim.params["g1"], cfg.claim.params["g2"]
    else:
        raise ConfigError(
            "tree mode supports zero, constant, and flat-recovery survival claims"
        )
    leaves = tree.levels[tree.n]
    return np.where(leaves.defaulted, float(g2), float(g1))


def _solve(cfg, workers: int, horizon: str = "fixed_T", filtration: str = "G",
           batch=None):
    spec = _gen_spec(cfg, horizon)
    if cfg.mode == "ode":
        return spec, bsde_mod.solve_ode_deterministic(
            spec, cfg.claim, cfg.grid, stopped=(horizon == "stopped_T_tau"))
    if horizon == "stopped_T_tau":
        sol = bsde_mod.solve_random_horizon(
            spec, cfg.claim, cfg.grid, n_paths=cfg.n_paths, seed=cfg.seed,
            basis_degree=cfg.basis_degree, workers=workers, batch=batch)
    else:
        sol = bsde_mod.solve_lsmc(
            spec, cfg.claim, cfg.grid, n_paths=cfg.n_paths, seed=cfg.seed,
            basis_degree=cfg.basis_degree, workers=workers,
            filtration=filtration, batch=batch)
    return spec, sol


def _run_solve(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    if cfg.claim.measurability == "G_T_tau":
        raise ConfigError("use the random-horizon experiment for G_T_tau claims")
    if cfg.mode == "tree":
        p_marks, q = tree_probs_from_model(cfg.levy, cfg.intensity, cfg.grid)
        report = validate_model(cfg.market, cfg.levy, cfg.intensity, cfg.grid)
        if not report.oracle_usable:
            raise ConfigError("serial-event budget >= 1: tree mode unusable here")
        if cfg.market.d != 1:
            raise ConfigError("tree mode needs d = 1")
        phi_steps = np.array([float(cfg.market.phi_at(float(t))[0])
                              for t in cfg.grid.nodes[:-1]])
        tree = build_tree(n=cfg.grid.n_steps, m=cfg.levy.m, dt=cfg.grid.dt,
                          delta=float(np.sqrt(cfg.grid.dt)), mark_probs=p_marks,
                          default_probs=q, phi=phi_steps)
        values = _tree_claim_values(cfg, tree)
        spec = _gen_spec(cfg)

        def gen(t, z, w_marks, w_def, pre):
            return bsde_mod.generator_f(spec, t, z, w_marks, w_def, pre)

        res = tree_bsde(tree, values, gen, cfg.market.alpha)
        write_tree_csv(out_dir / "tree.csv", tree, res.y, res.rep)
        rep.artifacts.append("tree.csv")
        rep.value = util.value_function(res.y0, cfg.market.x, cfg.market.alpha)
        bound = bsde_mod.apriori_bound(spec, cfg.claim, cfg.grid.T)
        rep.metrics.append(_metric("tree |Y0| within a-priori bound",
                                   res.y0, bound + 1e-12))
        return
    spec, sol = _solve(cfg, workers)
    write_bsde_csv(out_dir / "bsde.csv", sol, m=cfg.levy.m)
    rep.artifacts.append("bsde.csv")
    rep.value = util.value_function(sol.y0, cfg.market.x, cfg.market.alpha)
    if cfg.mode == "ode":
        rep.metrics.append(_metric("ode step-halving error bound", sol.error_bound,
                                   1e-8 * cfg.tolerance_scale))
    else:
        bound = bsde_mod.apriori_bound(spec, cfg.claim, cfg.grid.T)
        rep.metrics.append(_metric("lsmc |Y0| within a-priori bound", sol.y0,
                                   bound + 1e-12, se=sol.y0_se))
        move = float(sol.clamp_move.max(initial=0.0))
        rep.metrics.append(_metric("max clamp movement", move,
                                   1e-3 * max(1.0, bound) * cfg.tolerance_scale))


def _run_optimize(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    if cfg.mode != "lsmc":
        raise ConfigError("optimize runs in lsmc mode (grid search needs sampled paths)")
    if cfg.market.d != 1:
        raise ConfigError("the constant-strategy grid search needs d = 1")
    if cfg.claim.measurability == "G_T_tau":
        raise ConfigError("use the random-horizon experiment for G_T_tau claims")
    spec, sol = _solve(cfg, workers)
    report = util.verify_martingale_optimality(sol, spec, x=cfg.market.x)
    write_optimality_csv(out_dir / "optimality.csv", report)
    write_rprocess_csv(out_dir / "rprocess.csv", report)
    rep.artifacts += ["optimality.csv", "rprocess.csv"]
    rep.value = report.r0
    rep.theta_star = report.theta_star
    rep.violations = dict(report.violations)
    rep.metrics.append(_metric("grid-dominance violations",
                               report.violations["dominance"], 0.0, exact=True))
    rep.metrics.append(_metric("checkpoint-constancy violations",
                               report.violations["constancy"], 0.0, exact=True))
    rep.metrics.append(_metric("argmax theta - theta*",
                               report.argmax_theta - report.theta_star,
                               0.05 * cfg.tolerance_scale + 1e-9))


def _run_indifference(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    if cfg.claim.measurability == "G_T_tau":
        raise ConfigError("use the random-horizon experiment for G_T_tau claims")
    if cfg.mode == "tree":
        raise ConfigError("indifference pricing runs in lsmc or ode mode")
    spec, sol_claim = _solve(cfg, workers)
    if cfg.mode == "ode":
        zero_spec = GeneratorSpec(market=cfg.market, levy=cfg.levy,
                                  intensity=IntensitySpec(TimeFunction.constant(0.0)),
                                  horizon="fixed_T")
        sol_zero = bsde_mod.solve_ode_deterministic(zero_spec, claim_zero(), cfg.grid)
    else:
        sol_zero = bsde_mod.solve_lsmc(
            spec, claim_zero(), cfg.grid, n_paths=cfg.n_paths, seed=cfg.seed,
            basis_degree=cfg.basis_degree, workers=workers, filtration="F",
            batch=sol_claim.batch)
    result = util.indifference_price(sol_claim, sol_zero, x=cfg.market.x,
                                     alpha=cfg.market.alpha)
    write_bsde_csv(out_dir / "bsde.csv", sol_claim, m=cfg.levy.m)
    rep.artifacts.append("bsde.csv")
    rep.pi = result.pi
    rep.value = util.value_function(result.y0_claim, cfg.market.x + result.pi,
                                    cfg.market.alpha)
    rep.metrics.append(_metric("indifference identity gap", result.identity_gap,
                               1e-12, se=result.se))


def _run_random_horizon(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    if cfg.claim.measurability != "G_T_tau":
        raise ConfigError("random-horizon needs a claim with measurability G_T_tau")
    if cfg.mode == "tree":
        raise ConfigError("random-horizon runs in lsmc or ode mode")
    spec, sol = _solve(cfg, workers, horizon="stopped_T_tau")
    write_bsde_csv(out_dir / "bsde.csv", sol, m=cfg.levy.m)
    rep.artifacts.append("bsde.csv")
    result = util.random_horizon_value(sol, spec, x=cfg.market.x)
    rep.value = result.value
    rep.metrics.append(_metric("max |rule after default|",
                               result.max_rule_after_default, 0.0, exact=True))
    if isinstance(sol, BsdeSolution):
        H = sol.batch.enlargement.H
        dead_pair = (H[:, 1:] == 1.0) & (H[:, :-1] == 1.0)
        variation = float(np.max(np.where(
            dead_pair, np.abs(np.diff(sol.y_real, axis=1)), 0.0)))
        rep.metrics.append(_metric("max |Y variation after default|",
                                   variation, 0.0, exact=True))
    else:
        rep.metrics.append(_metric("ode step-halving error bound", sol.error_bound,
                                   1e-8 * cfg.tolerance_scale))


def _run_oracle(cfg, out_dir: Path, workers: int, rep: RunReport) -> None:
    report = validate_model(cfg.market, cfg.levy, cfg.intensity, cfg.grid)
    if not report.oracle_usable:
        raise ConfigError("serial-event budget >= 1: the event tree is unusable here")
    if cfg.market.d != 1:
        raise ConfigError("the event tree needs d = 1")
    p_marks, q = tree_probs_from_model(cfg.levy, cfg.intensity, cfg.grid)
    phi_steps = np.array([float(cfg.market.phi_at(float(t))[0])
                          for t in cfg.grid.nodes[:-1]])
    try:
        tree = build_tree(n=cfg.grid.n_steps, m=cfg.levy.m, dt=cfg.grid.dt,
                          delta=float(np.sqrt(cfg.grid.dt)), mark_probs=p_marks,
                          default_probs=q, phi=phi_steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(100):
        payoff = rng.uniform(-1.0, 1.0, tree.n_leaves)
        worst = max(worst, tree_representation(tree, payoff).max_residual)
    dims_ok = all(rank == outcomes - 1
                  for level in spanning_dimensions(tree)
                  for outcomes, rank in level)
    values = _tree_claim_values(cfg, tree)
    claim_rep = tree_representation(tree, values)
    y_levels = [tree_conditional_expectation(tree, values, k)
                for k in range(tree.n + 1)]
    write_tree_csv(out_dir / "tree.csv", tree, y_levels, claim_rep)
    rep.artifacts.append("tree.csv")
    rep.metrics.append(_metric("max representation residual (100 random payoffs)",
                               worst, 1e-10 * cfg.tolerance_scale))
    rep.metrics.append(_metric("spanning dimension deficit", 0.0 if dims_ok else 1.0,
                               0.0, exact=True))


def _run_acceptance(cfg, out_dir: Path, workers: int, rep: RunReport,
                    seed: int) -> None:
    rep.criteria = acc.run_all(seed=seed, workers=workers)


def run(cfg: ExperimentConfig | None, kind: str, out_dir, workers: int = 1,
        seed: int | None = None) -> RunReport:
    """Execute one experiment, write its artifacts, and return the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_seed = seed if seed is not None else (cfg.seed if cfg else acc.SEED)
    rep = RunReport(kind=kind, seed=run_seed)
    t0 = time.perf_counter()
    if cfg is not None:
        (out / "resolved_config.json").write_text(
            json.dumps(cfg.resolved, sort_keys=True, indent=2) + "\n")
        rep.artifacts.append("resolved_config.json")
    runners = {
        "simulate": _run_simulate,
        "verify-enlargement": _run_verify_enlargement,
        "solve": _run_solve,
        "optimize": _run_optimize,
        "indifference": _run_indifference,
        "random-horizon": _run_random_horizon,
        "oracle": _run_oracle,
    }
    if kind == "acceptance":
        _run_acceptance(cfg, out, workers, rep, run_seed)
    else:
        runners[kind](cfg, out, workers, rep)
    rep.seconds = time.perf_counter() - t0
    (out / "report.json").write_text(
        json.dumps(rep.as_dict(), sort_keys=True, indent=2) + "\n")
    return rep


# --------------------------------------------------------------------- main
def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="defaultlab",
        description="Progressive-enlargement default models: simulation, "
                    "BSDE solvers, utility optimization, and acceptance checks.",
    )
    parser.add_argument("command", choices=EXPERIMENTS)
    parser.add_argument("--config", metavar="PATH",
                        help="TOML experiment configuration")
    parser.add_argument("--out-dir", metavar="PATH", default="out")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--format", choices=("json", "text"), default="text")
    args = parser.parse_args(argv)
    if args.workers < 1:
        parser.error("--workers must be at least 1")

    try:
        if args.config is None:
            if args.command != "acceptance":
                raise ConfigError(f"--config is required for {args.command}")
            cfg = None
        else:
            cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        report = run(cfg, args.command, args.out_dir, workers=args.workers,
                     seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, AssertionError, RuntimeError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1
    print(emit_report(report, args.format))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
