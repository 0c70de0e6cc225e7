"""Optimal strategy, value function, R-process diagnostics, and prices.

Everything here sits on top of a solved backward equation: the optimal
feedback rule theta* = Z + phi/alpha, the value -exp(-alpha(x - Y0)), the
R-process R^theta = -exp(-alpha(X^theta - Y)) whose supermartingale/martingale
dichotomy certifies optimality, the multiplicative factorization R^theta =
e^{-alpha(x-Y0)} A^theta E(H^theta) re-checked pathwise, indifference prices
as Y0 differences, and the stopped-horizon value with its localized rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsde import BsdeSolution, DeterministicSolution, GeneratorSpec
from .market import ScenarioBatch, wealth

__all__ = [
    "Strategy",
    "OptimalityReport",
    "FactorizationReport",
    "IndifferenceResult",
    "RandomHorizonResult",
    "constant_strategy",
    "optimal_strategy",
    "value_function",
    "realized_y",
    "r_process",
    "factorization_residual",
    "verify_martingale_optimality",
    "indifference_price",
    "random_horizon_value",
]


@dataclass
class Strategy:
    """A feedback rule theta(t, log_s, h) -> (N, d) with a declared bound."""

    rule: callable
    bound: float
    kind: str = "feedback-from-solution"

    def __call__(self, t, log_s, h):
        return self.rule(t, log_s, h)


def constant_strategy(theta, d: int = 1) -> Strategy:
    """Grid candidate: theta constant in time and state."""
    vec = np.broadcast_to(np.asarray(theta, dtype=float), (d,)).copy()

    def rule(t, log_s, h):
        return np.broadcast_to(vec, (log_s.shape[0], d))

    return Strategy(rule=rule, bound=float(np.max(np.abs(vec))), kind="constant")


def _step_index(t: float, grid) -> int:
    k = int(round(t / grid.dt))
    return min(max(k, 0), grid.n_steps - 1)


def optimal_strategy(solution, spec: GeneratorSpec) -> Strategy:
    """theta*(t, state) = Z(t, state) + phi(t)/alpha; stopped solutions carry
    the pre-default indicator, so the rule is exactly zero after default."""
    alpha = spec.alpha
    grid = solution.grid
    stopped = solution.stopped if isinstance(solution, (BsdeSolution, DeterministicSolution)) else False

    if isinstance(solution, DeterministicSolution):
        z_bound = 0.0

        def rule(t, log_s, h):
            theta = np.broadcast_to(
                spec.market.phi_at(t) / alpha, (log_s.shape[0], spec.market.d)
            ).copy()
            if stopped:
                theta *= (np.asarray(h) == 0.0)[:, None]
            return theta

    else:
        z_bound = float(np.max(np.abs(solution.z_real))) if solution.z_real.size else 0.0

        def rule(t, log_s, h):
            k = _step_index(t, grid)
            theta = solution.z_at(k, log_s, h) + spec.market.phi_at(t) / alpha
            if stopped:
                theta *= (np.asarray(h) == 0.0)[:, None]
            return theta

    bound = z_bound + spec.market.phi_max / alpha + 1e-9
    return Strategy(rule=rule, bound=bound, kind="feedback-from-solution")


def _guard_exponent(e: np.ndarray) -> np.ndarray:
    worst = float(np.max(np.abs(e))) if np.size(e) else 0.0
    if worst > 700.0:
        raise ValueError(
            f"value overflow: |alpha * (x - Y)| = {worst:.3g} > 700"
        )
    return e


def value_function(y0: float, x: float, alpha: float) -> float:
    """U(x) = -exp(-alpha (x - Y0))."""
    return float(-np.exp(_guard_exponent(np.asarray(-alpha * (x - y0)))))


def realized_y(solution, batch: ScenarioBatch) -> np.ndarray:
    """(N, n+1) value realized along the batch paths.

    Monte Carlo solutions carry their own realization (and must be paired with
    the batch they were solved on); deterministic solutions are materialized
    from the pre/at-default curves, with the stopped variant frozen at the
    default-node value.
    """
    if isinstance(solution, BsdeSolution):
        if batch is not solution.batch:
            raise ValueError("wealth and Y must be realized on the same batch")
        return solution.y_real
    H = batch.enlargement.H
    n = batch.grid.n_steps
    N = batch.n_paths
    alive = H == 0.0
    if not solution.stopped:
        return np.where(alive, solution.y_pre[None, :], solution.y_post[None, :])
    dstep = batch.default.default_step
    frozen = np.zeros(N)
    hit = dstep >= 0
    frozen[hit] = solution.y_post[dstep[hit]]
    return np.where(alive, solution.y_pre[None, :], frozen[:, None])


def r_process(strategy, solution, batch: ScenarioBatch, x: float) -> np.ndarray:
    """R^theta_k = -exp(-alpha (X^theta_k - Y_k)) pathwise; terminal value is
    -exp(-alpha(X_T - xi)) identically because Y_T = xi by construction."""
    alpha = batch.market.alpha
    X = wealth(strategy, batch, x).X
    Y = realized_y(solution, batch)
    return -np.exp(_guard_exponent(-alpha * (X - Y)))


@dataclass
class FactorizationReport:
    """Pathwise check of R^theta = e^{-alpha(x-Y0)} A^theta E(H^theta)."""

    max_residual: float
    r: np.ndarray
    a: np.ndarray
    e: np.ndarray


def factorization_residual(strategy, solution, batch: ScenarioBatch, x: float) -> FactorizationReport:
    """Discretize both factors and compare with R^theta node by node.

    A^theta_k = -exp(+(alpha^2/2) sum |theta - Z - phi/alpha|^2 dt) and
    E(H^theta) is the stochastic exponential of -alpha(theta - Z) . B plus the
    compensated jump part; with claims that put no load on the auxiliary marks
    (W_i = 0) only the default factor e^{alpha W_def} and its compensator
    survive.  The residual is O(dt) (Euler error of the closed-form pieces);
    an E(H) value <= 0 would contradict e^{alpha W} > 0 and aborts.
    """
    grid = batch.grid
    alpha = batch.market.alpha
    dt = grid.dt
    N, n = batch.n_paths, grid.n_steps
    log_s = np.log(batch.s)
    H = batch.enlargement.H
    dLam = np.diff(batch.enlargement.Lambda, axis=1)

    R = r_process(strategy, solution, batch, x)
    if isinstance(solution, BsdeSolution):
        Z = solution.z_real
        W = solution.w_def_real
    else:
        Z = np.zeros((N, n, batch.market.d))
        w_nodes = solution.y_post - solution.y_pre
        W = np.broadcast_to(w_nodes[:-1][None, :], (N, n)).copy()
        if solution.stopped:
            W *= H[:, :-1] == 0.0

    log_a = np.zeros((N, n + 1))
    log_e = np.zeros((N, n + 1))
    for k in range(n):
        t_k = float(grid.nodes[k])
        theta_k = np.broadcast_to(
            np.asarray(strategy(t_k, log_s[:, k, :], H[:, k]), dtype=float),
            (N, batch.market.d),
        )
        phi_k = batch.market.phi_at(t_k)
        gap_opt = theta_k - Z[:, k, :] - phi_k / alpha
        gap_z = theta_k - Z[:, k, :]
        log_a[:, k + 1] = log_a[:, k] + 0.5 * alpha**2 * np.sum(gap_opt**2, axis=1) * dt
        dH = H[:, k + 1] - H[:, k]
        log_e[:, k + 1] = (
            log_e[:, k]
            - alpha * np.sum(gap_z * batch.dB[:, k, :], axis=1)
            - 0.5 * alpha**2 * np.sum(gap_z**2, axis=1) * dt
            - np.expm1(alpha * W[:, k]) * dLam[:, k]
            + alpha * W[:, k] * dH
        )
    A = -np.exp(log_a)
    E = np.exp(log_e)
    if np.any(E <= 0.0):
        raise ValueError("stochastic exponential crossed zero — broken jump factor")
    approx = np.exp(-alpha * (x - float(solution.y0))) * A * E
    resid = np.max(np.abs(R - approx) / np.abs(R))
    return FactorizationReport(max_residual=float(resid), r=R, a=A, e=E)


@dataclass
class OptimalityReport:
    """Grid-search and martingale diagnostics for the MOP chain."""

    thetas: np.ndarray
    values: np.ndarray
    ses: np.ndarray
    r0: float
    argmax_theta: float
    theta_star: float
    checkpoint_nodes: np.ndarray
    checkpoint_means: np.ndarray
    checkpoint_ses: np.ndarray
    violations: dict
    n_paths: int

    @property
    def total_violations(self) -> int:
        return int(sum(self.violations.values()))


def verify_martingale_optimality(
    solution: BsdeSolution,
    spec: GeneratorSpec,
    thetas=None,
    x: float = 0.0,
    n_checkpoints: int = 5,
) -> OptimalityReport:
    """Brute-force the constant-strategy grid and re-read the MOP chain.

    For each candidate theta: E[R^theta_T] estimated on the solution's own
    batch (common random numbers across candidates).  Dominance violations
    count candidates with E[R^theta_T] > U + 3 SE; constancy violations count
    checkpoints where mean(R^{theta*}_t) leaves the 3-SE band around R_0 = U.
    """
    if thetas is None:
        thetas = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.05), 10)
    thetas = np.asarray(thetas, dtype=float)
    batch = solution.batch
    grid = solution.grid
    alpha = spec.alpha
    N, n = batch.n_paths, grid.n_steps

    if batch.market.d != 1:
        raise ValueError("the constant-strategy grid search is one-dimensional")
    xi = solution.y_real[:, n]
    dBhat_total = batch.dBhat.sum(axis=1)[:, 0]
    values = np.empty(thetas.size)
    ses = np.empty(thetas.size)
    for i, th in enumerate(thetas):
        r_T = -np.exp(_guard_exponent(-alpha * (x + th * dBhat_total - xi)))
        values[i] = float(np.mean(r_T))
        ses[i] = float(np.std(r_T, ddof=1) / np.sqrt(N))

    r0 = value_function(solution.y0, x, alpha)
    dominance = int(np.sum(values > r0 + 3.0 * ses))
    argmax_theta = float(thetas[int(np.argmax(values))])

    # realized theta* summary (constant for the claims this report targets)
    phi0 = spec.market.phi_at(0.0)
    theta_star = float(np.mean(solution.z_real[:, 0, :]) + phi0[0] / alpha)

    opt = optimal_strategy(solution, spec)
    R = r_process(opt, solution, batch, x)
    nodes = np.unique(np.linspace(0, n, n_checkpoints).astype(int))
    means = R[:, nodes].mean(axis=0)
    c_ses = R[:, nodes].std(axis=0, ddof=1) / np.sqrt(N)
    constancy = int(np.sum(np.abs(means - r0) > 3.0 * c_ses + 1e-12))

    return OptimalityReport(
        thetas=thetas, values=values, ses=ses, r0=r0,
        argmax_theta=argmax_theta, theta_star=theta_star,
        checkpoint_nodes=grid.nodes[nodes], checkpoint_means=means,
        checkpoint_ses=c_ses, violations={"dominance": dominance, "constancy": constancy},
        n_paths=N,
    )


@dataclass
class IndifferenceResult:
    pi: float
    se: float
    y0_claim: float
    y0_zero: float
    identity_gap: float


def indifference_price(solution_claim, solution_zero, x: float = 0.0, alpha: float = 1.0) -> IndifferenceResult:
    """pi = Y0^xi - Y0^0 from a claim solve (filtration G) and a zero solve
    (the reference no-default F-problem); the definitional identity
    U^0(x) = U^xi(x + pi) then holds exactly by construction and is re-checked
    to machine precision."""
    y0_claim = float(solution_claim.y0)
    y0_zero = float(solution_zero.y0)
    pi = y0_claim - y0_zero
    se = float(np.hypot(getattr(solution_claim, "y0_se", 0.0),
                        getattr(solution_zero, "y0_se", 0.0)))
    u0 = value_function(y0_zero, x, alpha)
    u_claim_shifted = value_function(y0_claim, x + pi, alpha)
    gap = abs(u0 - u_claim_shifted)
    if gap > 1e-12 * max(1.0, abs(u0)):
        raise AssertionError(
            f"indifference identity violated: |U^0(x) - U^xi(x+pi)| = {gap:.3g}"
        )
    return IndifferenceResult(pi=pi, se=se, y0_claim=y0_claim, y0_zero=y0_zero,
                              identity_gap=gap)


@dataclass
class RandomHorizonResult:
    value: float
    y0: float
    strategy: Strategy
    max_rule_after_default: float


def random_horizon_value(solution, spec: GeneratorSpec, x: float = 0.0) -> RandomHorizonResult:
    """Value -exp(-alpha(x - Y0)) of the stopped problem plus the localized
    rule 1_{pre-default}(Z + phi/alpha); asserts the rule vanishes after
    default on every simulated path (exactly, not statistically)."""
    if not solution.stopped:
        raise ValueError("random_horizon_value needs a stopped-horizon solution")
    strat = optimal_strategy(solution, spec)
    worst = 0.0
    if isinstance(solution, BsdeSolution):
        batch = solution.batch
        H = batch.enlargement.H
        log_s = np.log(batch.s)
        for k in range(solution.grid.n_steps):
            dead = H[:, k] == 1.0
            if not np.any(dead):
                continue
            vals = strat(float(solution.grid.nodes[k]), log_s[:, k, :], H[:, k])
            worst = max(worst, float(np.max(np.abs(np.asarray(vals)[dead]))))
    if worst != 0.0:
        raise AssertionError(
            f"stopped rule leaks after default: max |theta| = {worst:.3g}"
        )
    val = value_function(solution.y0, x, spec.alpha)
    return RandomHorizonResult(value=val, y0=float(solution.y0), strategy=strat,
                               max_rule_after_default=worst)
