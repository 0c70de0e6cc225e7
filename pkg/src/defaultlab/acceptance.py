"""The ten acceptance criteria as callable checks.

Each runner builds its scenario from scratch, computes the pinned quantities,
and returns a CriterionResult with one Metric per checked condition, so the
command line and the test suite share a single source of truth.  Closed-form
targets are evaluated here at full precision rather than copied as rounded
decimals.
"""
from __future__ import annotations

import inspect
import time
from dataclasses import dataclass, field

import numpy as np

from . import bsde as bsde_mod
from . import utility as util
from .core import (
    FiniteLevyMeasure,
    IntensitySpec,
    MarketSpec,
    TimeFunction,
    build_grid,
    claim_survival,
    claim_zero,
)
from .enlargement import (
    azema,
    enlargement_paths,
    joint_compensator_residual,
    sample_default_batch,
)
from .market import simulate
from .oracle import (
    build_tree,
    merton_matched_delta,
    spanning_dimensions,
    tree_bsde,
    tree_dp_optimize,
    tree_representation,
)

SEED = 20260823


@dataclass
class Metric:
    name: str
    value: float
    passed: bool
    tol: float | None = None
    se: float | None = None

    def __post_init__(self):
        self.value = float(self.value)
        self.passed = bool(self.passed)
        self.tol = None if self.tol is None else float(self.tol)
        self.se = None if self.se is None else float(self.se)

    def line(self, criterion: str) -> str:
        parts = [f"{criterion} {self.name} = {self.value:.6g}"]
        if self.se is not None:
            parts.append(f"± {self.se:.2g}")
        if self.tol is not None:
            parts.append(f"[tol {self.tol:.2g}]")
        parts.append("PASS" if self.passed else "FAIL")
        return " ".join(parts)


@dataclass
class CriterionResult:
    name: str
    label: str
    metrics: list = field(default_factory=list)
    seconds: float = 0.0
    budget: float | None = None

    @property
    def passed(self) -> bool:
        ok = all(m.passed for m in self.metrics)
        if self.budget is not None:
            ok = ok and self.seconds <= self.budget
        return ok

    def lines(self) -> list[str]:
        out = [m.line(self.name) for m in self.metrics]
        if self.budget is not None:
            ok = self.seconds <= self.budget
            out.append(
                f"{self.name} runtime = {self.seconds:.1f}s "
                f"[budget {self.budget:.0f}s] {'PASS' if ok else 'FAIL'}"
            )
        return out


def _band(name: str, value: float, se: float, k: float = 3.0) -> Metric:
    return Metric(name=name, value=value, se=se, tol=k * se,
                  passed=abs(value) <= k * se + 1e-15)


def _merton_market(phi=0.2, alpha=1.0):
    return MarketSpec(
        d=1, sigma=np.array([[0.2]]), phi=np.array([phi]), s0=np.array([1.0]),
        alpha=alpha, phi_max=abs(phi),
    )


def _gen(phi, alpha, lam, horizon="fixed_T", levy=None):
    return bsde_mod.GeneratorSpec(
        market=_merton_market(phi, alpha),
        levy=levy if levy is not None else FiniteLevyMeasure.none(d=1),
        intensity=IntensitySpec(TimeFunction.constant(lam)),
        horizon=horizon,
    )


# ------------------------------------------------------------------------ A1
def a1(seed: int = SEED, n_paths: int = 100_000) -> CriterionResult:
    """Enlargement identities at dt = 1/200 with a 10^5-path moment check."""
    t0 = time.perf_counter()
    grid = build_grid(1.0, 200)
    intensity = IntensitySpec(TimeFunction.constant(0.3))
    a_nodes = azema(intensity, grid.nodes)

    chunk = 20_000
    worst_log, worst_u = 0.0, 0.0
    m2_sum = m2_sq = l1_sum = l1_sq = d_sum = d_sq = 0.0
    done = 0
    while done < n_paths:
        n_c = min(chunk, n_paths - done)
        batch = sample_default_batch(intensity, grid, seed, n_c, path_offset=done)
        paths = enlargement_paths(batch, intensity, grid)
        tau_cap = np.minimum(batch.tau[:, None], grid.nodes[None, :])
        ident = paths.Lambda + np.log(azema(intensity, tau_cap))
        worst_log = max(worst_log, float(np.max(np.abs(ident))))
        u_ident = paths.U * a_nodes[None, :] - (grid.nodes[None, :] < batch.tau[:, None])
        worst_u = max(worst_u, float(np.max(np.abs(u_ident))))
        m2 = paths.M[:, -1] ** 2
        l1 = paths.Lambda[:, -1]
        diff = m2 - l1
        m2_sum += m2.sum(); m2_sq += (m2**2).sum()
        l1_sum += l1.sum(); l1_sq += (l1**2).sum()
        d_sum += diff.sum(); d_sq += (diff**2).sum()
        done += n_c

    def mean_se(s, sq):
        mean = s / n_paths
        var = max(sq / n_paths - mean**2, 0.0)
        return mean, float(np.sqrt(var / n_paths))

    m2_mean, m2_se = mean_se(m2_sum, m2_sq)
    l1_mean, l1_se = mean_se(l1_sum, l1_sq)
    d_mean, d_se = mean_se(d_sum, d_sq)
    analytic = 1.0 - np.exp(-0.3)

    res = CriterionResult("A1", "enlargement identities", budget=60.0)
    res.metrics = [
        Metric("max|Lambda + log A(tau^t)|", worst_log, worst_log <= 1e-12, tol=1e-12),
        Metric("max|U A - 1{t<tau}|", worst_u, worst_u <= 1e-12, tol=1e-12),
        _band("mean(M_1^2) - mean(Lambda_1)", d_mean, d_se),
        _band("mean(M_1^2) - analytic", m2_mean - analytic, m2_se),
        _band("mean(Lambda_1) - analytic", l1_mean - analytic, l1_se),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A2
def a2(seed: int = SEED, n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    """Joint-compensator residuals for the three reference test functions."""
    t0 = time.perf_counter()
    grid = build_grid(1.0, 100)
    market = _merton_market(phi=0.1)
    levy = FiniteLevyMeasure(
        atoms=np.array([[1.0]]), weights=np.array([0.5]),
        zeta=(TimeFunction.constant(1.0),),
    )
    intensity = IntensitySpec(TimeFunction.constant(0.3))
    batch = simulate(market, levy, intensity, grid, n_paths=n_paths, seed=seed,
                     workers=workers)

    def w_default(t, x1, x2):
        return np.full(np.shape(t), float(x2 == 1))

    def w_zero(t, x1, x2):
        return np.zeros(np.shape(t))

    def w_atom(t, x1, x2):
        return np.full(np.shape(t), float(x2 == 0 and x1[0] == 1.0))

    res = CriterionResult("A2", "joint-compensator residuals", budget=60.0)
    for name, fn in [("default counter", w_default), ("zero integrand", w_zero),
                     ("mark counter", w_atom)]:
        r, se = joint_compensator_residual(batch, fn)
        if name == "zero integrand":
            res.metrics.append(Metric(f"residual[{name}]", r, r == 0.0, tol=0.0))
        else:
            res.metrics.append(_band(f"residual[{name}]", r, se))
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A3
def a3(seed: int = SEED, n_payoffs: int = 100) -> CriterionResult:
    """Exact representation of random payoffs on the n=8, m=1 event tree."""
    t0 = time.perf_counter()
    tree = build_tree(n=8, m=1, dt=1.0 / 8, delta=0.35, mark_probs=[0.1],
                      default_probs=0.05, phi=0.2)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_payoffs):
        payoff = rng.uniform(-1.0, 1.0, tree.n_leaves)
        rep = tree_representation(tree, payoff)
        worst = max(worst, rep.max_residual)
    dims_ok = all(
        rank == outcomes - 1
        for level_info in spanning_dimensions(tree)
        for outcomes, rank in level_info
    )
    res = CriterionResult("A3", "tree representation", budget=30.0)
    res.metrics = [
        Metric("max representation residual", worst, worst <= 1e-10, tol=1e-10),
        Metric("spanning dim == outcomes-1 (all levels)", float(dims_ok), dims_ok),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A4
def a4(seed: int = SEED, n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    """Merton benchmark: regression solver and exact reduction."""
    t0 = time.perf_counter()
    spec = _gen(phi=0.2, alpha=1.0, lam=0.0)
    grid = build_grid(1.0, 50)
    sol = bsde_mod.solve_lsmc(spec, claim_zero(), grid, n_paths=n_paths,
                              seed=seed, workers=workers)
    ode = bsde_mod.solve_ode_deterministic(spec, claim_zero(), grid)
    ode_err = float(np.max(np.abs(ode.y_pre - (-(1.0 - grid.nodes) * 0.02))))
    res = CriterionResult("A4", "Merton benchmark", budget=120.0)
    res.metrics = [
        Metric("lsmc Y0 - (-0.02)", sol.y0 + 0.02, abs(sol.y0 + 0.02) <= 0.003,
               tol=0.003, se=sol.y0_se),
        Metric("ode max error vs -(T-t) phi^2/(2 alpha)", ode_err,
               ode_err <= 1e-9, tol=1e-9),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A5
def a5(seed: int = SEED, n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    """Defaultable-bond indifference price, both solver modes."""
    t0 = time.perf_counter()
    target = float(np.log(1.0 + (np.e - 1.0) * np.exp(-0.3)))
    spec = _gen(phi=0.0, alpha=1.0, lam=0.3)
    grid = build_grid(1.0, 50)
    bond = claim_survival(1.0, 0.0)

    ode_claim = bsde_mod.solve_ode_deterministic(spec, bond, grid)
    ode_zero = bsde_mod.solve_ode_deterministic(_gen(0.0, 1.0, 0.0), claim_zero(), grid)
    pi_ode = util.indifference_price(ode_claim, ode_zero, x=0.0, alpha=1.0)

    sol_claim = bsde_mod.solve_lsmc(spec, bond, grid, n_paths=n_paths, seed=seed,
                                    workers=workers)
    sol_zero = bsde_mod.solve_lsmc(spec, claim_zero(), grid, n_paths=n_paths,
                                   seed=seed, filtration="F", batch=sol_claim.batch)
    pi_lsmc = util.indifference_price(sol_claim, sol_zero, x=0.0, alpha=1.0)

    res = CriterionResult("A5", "bond indifference price", budget=120.0)
    res.metrics = [
        Metric("ode pi - closed form", pi_ode.pi - target,
               abs(pi_ode.pi - target) <= 1e-6, tol=1e-6),
        Metric("lsmc pi - closed form", pi_lsmc.pi - target,
               abs(pi_lsmc.pi - target) <= 0.01, tol=0.01, se=pi_lsmc.se),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A6
def a6(seed: int = SEED, n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    """Martingale-optimality sweep over the constant-strategy grid."""
    t0 = time.perf_counter()
    spec = _gen(phi=0.2, alpha=1.0, lam=0.0)
    grid = build_grid(1.0, 50)
    sol = bsde_mod.solve_lsmc(spec, claim_zero(), grid, n_paths=n_paths,
                              seed=seed, workers=workers)
    rep = util.verify_martingale_optimality(sol, spec, x=0.0)
    best = float(np.max(rep.values))
    res = CriterionResult("A6", "martingale optimality", budget=180.0)
    res.metrics = [
        Metric("argmax theta - 0.2", rep.argmax_theta - 0.2,
               abs(rep.argmax_theta - 0.2) <= 0.05 + 1e-12, tol=0.05),
        Metric("dominance violations", float(rep.violations["dominance"]),
               rep.violations["dominance"] == 0, tol=0.0),
        Metric("checkpoint constancy violations", float(rep.violations["constancy"]),
               rep.violations["constancy"] == 0, tol=0.0),
        Metric("max E[R_T] - (-0.9802)", best - (-0.9802),
               abs(best - (-0.9802)) <= 0.002, tol=0.002),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A7
def a7() -> CriterionResult:
    """Tree dynamic programming against the tree backward solver."""
    t0 = time.perf_counter()
    n, phi, alpha = 8, 0.2, 1.0
    dt = 1.0 / n
    delta = merton_matched_delta(phi, alpha, dt)
    tree = build_tree(n=n, m=0, dt=dt, delta=delta, phi=phi)

    def merton_gen(t, z, w_marks, w_def, pre):
        return -(z * phi + phi * phi / (2.0 * alpha))

    y0 = tree_bsde(tree, np.zeros(tree.n_leaves), merton_gen, alpha).y0
    dp = tree_dp_optimize(tree, np.zeros(tree.n_leaves), alpha=alpha, x=0.0)
    gap = abs(dp.value - (-np.exp(-(0.0 - y0))))

    hand = build_tree(n=1, m=0, dt=1.0, delta=1.0, phi=0.2)
    hd = tree_dp_optimize(hand, np.zeros(hand.n_leaves), alpha=1.0, x=0.0)
    theta_target = float(np.log(1.5) / 2.0)
    value_target = -0.5 * (np.exp(-1.2 * theta_target) + np.exp(0.8 * theta_target))
    th_err = abs(float(hd.theta[0][0]) - theta_target)
    va_err = abs(hd.value - value_target)

    res = CriterionResult("A7", "DP/BSDE consistency")
    res.metrics = [
        Metric("matched-tree |DP value - BSDE value|", gap, gap <= 1e-6, tol=1e-6),
        Metric("hand case |theta* - ln(1.5)/2|", th_err, th_err <= 1e-9, tol=1e-9),
        Metric("hand case value error", va_err, va_err <= 1e-9, tol=1e-9),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A8
def a8(seed: int = SEED, n_paths: int = 100_000, workers: int = 1) -> CriterionResult:
    """Random-horizon solve of the default indicator."""
    t0 = time.perf_counter()
    target = float(np.log(np.e + (1.0 - np.e) * np.exp(-0.3)))
    spec = _gen(phi=0.0, alpha=1.0, lam=0.3, horizon="stopped_T_tau")
    grid = build_grid(1.0, 50)
    claim = claim_survival(0.0, 1.0, measurability="G_T_tau")

    ode = bsde_mod.solve_ode_deterministic(spec, claim, grid, stopped=True)
    sol = bsde_mod.solve_random_horizon(spec, claim, grid, n_paths=n_paths,
                                        seed=seed, workers=workers)
    H = sol.batch.enlargement.H
    dead_pair = (H[:, 1:] == 1.0) & (H[:, :-1] == 1.0)
    variation = float(np.max(np.where(dead_pair, np.abs(np.diff(sol.y_real, axis=1)), 0.0)))
    rh = util.random_horizon_value(sol, spec, x=0.0)

    res = CriterionResult("A8", "random horizon")
    res.metrics = [
        Metric("ode Y0 - closed form", ode.y0 - target,
               abs(ode.y0 - target) <= 1e-6, tol=1e-6),
        Metric("lsmc Y0 - closed form", sol.y0 - target,
               abs(sol.y0 - target) <= 0.01, tol=0.01, se=sol.y0_se),
        Metric("max |Y variation after default|", variation, variation == 0.0, tol=0.0),
        Metric("max |rule after default|", rh.max_rule_after_default,
               rh.max_rule_after_default == 0.0, tol=0.0),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ------------------------------------------------------------------------ A9
def a9(seed: int = SEED, n_paths: int = 1000) -> CriterionResult:
    """Multiplicative factorization of R^theta in the no-event case."""
    t0 = time.perf_counter()
    spec = _gen(phi=0.2, alpha=1.0, lam=0.0)
    grid = build_grid(1.0, 50)
    batch = simulate(spec.market, spec.levy, spec.intensity, grid,
                     n_paths=n_paths, seed=seed)
    sol = bsde_mod.solve_ode_deterministic(spec, claim_zero(), grid)
    rep = util.factorization_residual(util.constant_strategy(0.5), sol, batch, x=0.0)
    opt = util.optimal_strategy(sol, spec)
    rep_opt = util.factorization_residual(opt, sol, batch, x=0.0)
    a_gap = float(np.max(np.abs(rep_opt.a + 1.0)))
    res = CriterionResult("A9", "factorization identity")
    res.metrics = [
        Metric("max relative residual", rep.max_residual,
               rep.max_residual <= 5.0 * grid.dt, tol=5.0 * grid.dt),
        Metric("max |A^{theta*} + 1|", a_gap, a_gap == 0.0, tol=0.0),
    ]
    res.seconds = time.perf_counter() - t0
    return res


# ----------------------------------------------------------------------- A10
def a10(seed: int = SEED) -> CriterionResult:
    """Bit-reproducibility across worker counts for emitted CSVs."""
    import tempfile
    from pathlib import Path

    from .cli import write_bsde_csv, write_paths_csv

    t0 = time.perf_counter()
    market = _merton_market(phi=0.1)
    levy = FiniteLevyMeasure(
        atoms=np.array([[1.0]]), weights=np.array([0.5]),
        zeta=(TimeFunction.constant(1.0),),
    )
    intensity = IntensitySpec(TimeFunction.constant(0.3))
    grid = build_grid(1.0, 50)
    spec = _gen(phi=0.1, alpha=1.0, lam=0.3)
    bond = claim_survival(1.0, 0.0)

    blobs = {}
    for workers in (1, 3):
        with tempfile.TemporaryDirectory() as tmp:
            batch = simulate(market, levy, intensity, grid, n_paths=2000,
                             seed=seed, workers=workers)
            p = Path(tmp) / "paths.csv"
            write_paths_csv(p, batch)
            sol = bsde_mod.solve_lsmc(spec, bond, grid, n_paths=2000, seed=seed,
                                      workers=workers)
            b = Path(tmp) / "bsde.csv"
            write_bsde_csv(b, sol)
            blobs[workers] = (p.read_bytes(), b.read_bytes())

    paths_same = blobs[1][0] == blobs[3][0]
    bsde_same = blobs[1][1] == blobs[3][1]
    res = CriterionResult("A10", "worker-count reproducibility")
    res.metrics = [
        Metric("paths.csv byte-identical (1 vs 3 workers)", float(paths_same), paths_same),
        Metric("bsde.csv byte-identical (1 vs 3 workers)", float(bsde_same), bsde_same),
    ]
    res.seconds = time.perf_counter() - t0
    return res


ALL = {
    "A1": a1, "A2": a2, "A3": a3, "A4": a4, "A5": a5,
    "A6": a6, "A7": a7, "A8": a8, "A9": a9, "A10": a10,
}


def run_all(seed: int = SEED, workers: int = 1) -> list[CriterionResult]:
    out = []
    for fn in ALL.values():
        params = inspect.signature(fn).parameters
        kwargs = {}
        if "seed" in params:
            kwargs["seed"] = seed
        if "workers" in params:
            kwargs["workers"] = workers
        out.append(fn(**kwargs))
    return out
