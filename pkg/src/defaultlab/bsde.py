"""Generator and solvers for the exponential-utility backward equation.

Three routes, kept deliberately independent so they can cross-check each other:

* ``solve_lsmc`` — regression Monte Carlo with a two-layer decomposition:
  the post-default problem is solved first on the full sample (the default
  term of the driver is absent there), then the pre-default problem with the
  default integrand W_def read off as the difference of the two fitted value
  functions.  Explicit backward Euler in the driver, fitted values clamped to
  an a-priori bound.
* ``solve_ode_deterministic`` — exact scalar reduction when the claim does not
  load on prices and all coefficients are deterministic; classical RK4 with
  Richardson error control.
* ``solve_random_horizon`` — the stopped variant: the driver carries the
  pre-default indicator, the value freezes at the default-time payoff, and the
  post-default integrands vanish identically.

Claims in scope never load on the auxiliary jump marks (prices are continuous
and payoffs are functions of (S, H, tau)), so the mark integrands W_i are
identically zero and the mark sum of the driver is inert; the regression basis
therefore omits the jump tally.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ClaimSpec, FiniteLevyMeasure, IntensitySpec, MarketSpec, TimeGrid
from .market import ScenarioBatch, simulate

__all__ = [
    "GeneratorSpec",
    "BsdeSolution",
    "DeterministicSolution",
    "generator_f",
    "apriori_bound",
    "solve_lsmc",
    "solve_ode_deterministic",
    "solve_random_horizon",
]

_HORIZONS = ("fixed_T", "stopped_T_tau")


@dataclass(frozen=True)
class GeneratorSpec:
    """Driver data: market (phi, alpha), jump measure (zeta w per atom),
    default intensity lambda, and the horizon flag (fixed vs stopped)."""

    market: MarketSpec
    levy: FiniteLevyMeasure
    intensity: IntensitySpec
    horizon: str = "fixed_T"

    def __post_init__(self):
        if self.horizon not in _HORIZONS:
            raise ValueError(f"horizon must be one of {_HORIZONS}")

    @property
    def alpha(self) -> float:
        return self.market.alpha


def generator_f(spec: GeneratorSpec, t: float, z, w_marks, w_def, pre_default=True):
    """Driver value, broadcasting over a leading sample axis.

    f = -(z'phi + |phi|^2/(2 alpha))
        + (1/alpha) sum_i (e^{alpha w_i} - 1 - alpha w_i) zeta_i(t) w_i^meas
        + (1/alpha) (e^{alpha w_def} - 1 - alpha w_def) lambda(t) 1{pre-default}

    Exponent inputs with |alpha * w| > 700 are rejected (they would overflow
    double precision; bounded solutions live inside the a-priori clamp).
    """
    alpha = spec.alpha
    phi = spec.market.phi_at(t)
    z = np.asarray(z, dtype=float)
    if z.ndim >= 1 and z.shape[-1] != spec.market.d:
        if spec.market.d == 1:
            z = z[..., None]
        else:
            raise ValueError("z must have one component per asset")
    w_def = np.asarray(w_def, dtype=float)
    w_marks = np.asarray(w_marks, dtype=float)
    worst = max(
        float(np.max(np.abs(alpha * w_def))) if w_def.size else 0.0,
        float(np.max(np.abs(alpha * w_marks))) if w_marks.size else 0.0,
    )
    if worst > 700.0:
        raise ValueError(
            f"generator overflow: |alpha*w| = {worst:.3g} > 700; "
            "inputs must stay inside the a-priori clamp"
        )
    out = -(z @ phi + float(phi @ phi) / (2.0 * alpha))
    if spec.levy.m and w_marks.size:
        for i in range(spec.levy.m):
            wi = w_marks[..., i]
            out = out + (np.exp(alpha * wi) - 1.0 - alpha * wi) / alpha * spec.levy.rate(i, t)
    lam_t = float(spec.intensity.lam(t))
    if lam_t != 0.0:
        comp = (np.exp(alpha * w_def) - 1.0 - alpha * w_def) / alpha * lam_t
        out = out + comp * np.asarray(pre_default, dtype=float)
    return out


def apriori_bound(spec: GeneratorSpec, claim: ClaimSpec, T: float) -> float:
    """Clamp bound ||xi||_inf + T phi_max^2 / (2 alpha) for fitted values."""
    return claim.bound + T * spec.market.phi_max**2 / (2.0 * spec.alpha)


# ---------------------------------------------------------------- regression
def _features(log_s: np.ndarray, degree: int) -> np.ndarray:
    """Polynomial basis in log-prices up to the given degree (with cross terms)."""
    n, d = log_s.shape
    cols = [np.ones(n)]
    if degree >= 1:
        cols.extend(log_s[:, i] for i in range(d))
    if degree >= 2:
        for i in range(d):
            for j in range(i, d):
                cols.append(log_s[:, i] * log_s[:, j])
    return np.column_stack(cols)


@dataclass
class _Fit:
    """One fitted regression: normalization plus coefficients in that frame."""

    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray
    coef: np.ndarray  # (p_kept, n_rhs)
    cond: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xn = (X - self.mean) / self.std
        return Xn[:, self.keep] @ self.coef


def _fit(X: np.ndarray, y: np.ndarray) -> _Fit:
    """Least squares with per-column standardization and drop of constant
    columns (the intercept is re-centered instead of dropped)."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    mean[0], std[0] = 0.0, 1.0  # intercept column untouched
    std = np.where(std < 1e-12, 1.0, std)
    Xn = (X - mean) / std
    keep = np.ones(X.shape[1], dtype=bool)
    keep[1:] = X[:, 1:].std(axis=0) >= 1e-12
    y2 = y if y.ndim == 2 else y[:, None]
    coef, _, rank, sv = np.linalg.lstsq(Xn[:, keep], y2, rcond=None)
    if rank < int(keep.sum()):
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        raise ValueError(f"regression design matrix rank-deficient (cond={cond:.3g})")
    cond = float(sv[0] / max(sv[-1], 1e-300))
    if coef.shape[1] == 1 and y.ndim == 1:
        coef = coef  # keep 2-d; predict returns (n, 1) -> squeeze by caller
    return _Fit(mean=mean, std=std, keep=keep, coef=coef, cond=cond)


@dataclass
class BsdeSolution:
    """Monte Carlo solution: fitted per-step value/integrand functions plus the
    realized (Y, Z, W_def) arrays along the simulated paths.

    y_real[:, k] is the path value at node k (post-default paths carry the
    post-default — or frozen, for stopped solutions — value), z_real[:, k, :]
    the fitted diffusion integrand, w_def_real[:, k] the default integrand
    used by the driver at step k (zero once default has happened).  W_i are
    identically zero for claims in scope and are not stored.
    """

    grid: TimeGrid
    batch: ScenarioBatch
    y0: float
    y0_se: float
    y_real: np.ndarray
    z_real: np.ndarray
    w_def_real: np.ndarray
    clamp_bound: float
    clamp_hits: np.ndarray
    clamp_move: np.ndarray  # per-step max distance the clamp moved a fitted value
    cond_max: float
    stopped: bool
    fits_pre: list = field(default_factory=list, repr=False)
    fits_post: list = field(default_factory=list, repr=False)
    basis_degree: int = 2
    warnings: list = field(default_factory=list)

    def z_at(self, k: int, log_s: np.ndarray, h: np.ndarray) -> np.ndarray:
        """Fitted diffusion integrand at step k for states (log_s, h)."""
        N, d = log_s.shape
        out = np.zeros((N, d))
        X = _features(log_s, self.basis_degree)
        pre = np.asarray(h) == 0.0
        fit_pre = self.fits_pre[k]["z"] if k < len(self.fits_pre) else None
        fit_post = self.fits_post[k]["z"] if k < len(self.fits_post) else None
        if np.any(pre) and fit_pre is not None:
            out[pre] = fit_pre.predict(X[pre])
        if np.any(~pre) and fit_post is not None:
            out[~pre] = fit_post.predict(X[~pre])
        return out


def _check_fixed_horizon_claim(claim: ClaimSpec) -> None:
    if claim.kind == "survival" and callable(claim.params.get("g2")):
        raise ValueError(
            "fixed-horizon regression solves payoffs of the form g(S_T, H_T); "
            "recovery depending on the default time needs the deterministic or "
            "stopped solver"
        )
    if claim.kind == "custom":
        s = np.full((3, 1), 1.0)
        h = np.ones(3)
        a = claim.evaluate(s, h, np.array([0.3, 0.5, 0.9]))
        b = claim.evaluate(s, h, np.array([1.0, 1.0, 1.0]))
        if not np.allclose(a, b, atol=1e-12):
            raise ValueError(
                "fixed-horizon regression solves payoffs of the form g(S_T, H_T); "
                "this claim loads on the default time"
            )


def solve_lsmc(
    spec: GeneratorSpec,
    claim: ClaimSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    basis_degree: int = 2,
    workers: int = 1,
    filtration: str = "G",
    batch: ScenarioBatch | None = None,
) -> BsdeSolution:
    """Two-layer regression Monte Carlo for the fixed-horizon problem.

    filtration="G" solves the full problem with the default layer;
    filtration="F" solves the reference no-default problem (default term of
    the driver dropped, single layer) used for indifference pricing.
    """
    if spec.horizon != "fixed_T":
        raise ValueError("solve_lsmc handles the fixed horizon; use solve_random_horizon")
    if filtration not in ("G", "F"):
        raise ValueError("filtration must be 'G' or 'F'")
    _check_fixed_horizon_claim(claim)
    if batch is None:
        batch = simulate(spec.market, spec.levy, spec.intensity, grid,
                         n_paths=n_paths, seed=seed, workers=workers)
    N, n, d = batch.dB.shape
    dt = grid.dt
    bound = apriori_bound(spec, claim, grid.T)
    log_s = np.log(batch.s)
    tau_cap = np.minimum(batch.default.tau, grid.T)

    clamp_hits = np.zeros(n, dtype=np.int64)
    clamp_move = np.zeros(n)
    cond_max = 0.0
    warnings: list[str] = []

    def clamp(vals, k):
        excess = np.abs(vals) - bound
        clamp_hits[k] += int(np.count_nonzero(excess > 0.0))
        if vals.size:
            clamp_move[k] = max(clamp_move[k], float(np.max(excess, initial=0.0)))
        return np.clip(vals, -bound, bound)

    # ---- post-default layer (or the only layer in F-mode) ----
    h_terminal = np.zeros(N) if filtration == "F" else np.ones(N)
    y_post = np.empty((N, n + 1))
    y_post[:, n] = claim.evaluate(batch.s[:, n, :], h_terminal, tau_cap)
    fits_post: list[dict] = []
    z_post = np.zeros((N, n, d))
    for k in range(n - 1, -1, -1):
        X = _features(log_s[:, k, :], basis_degree)
        fit_z = _fit(X, y_post[:, k + 1, None] * batch.dB[:, k, :] / dt)
        z_hat = fit_z.predict(X)
        f_k = generator_f(spec, float(grid.nodes[k]), z_hat,
                          np.zeros((N, spec.levy.m)), np.zeros(N), pre_default=False)
        fit_y = _fit(X, y_post[:, k + 1] + f_k * dt)
        y_post[:, k] = clamp(fit_y.predict(X)[:, 0], k)
        z_post[:, k, :] = z_hat
        cond_max = max(cond_max, fit_z.cond, fit_y.cond)
        fits_post.insert(0, {"z": fit_z, "y": fit_y})

    if filtration == "F":
        # the step-0 regression collapses to a mean; its SE comes from the target
        y0 = float(np.mean(y_post[:, 0]))
        target0 = y_post[:, 1] + generator_f(
            spec, 0.0, z_post[:, 0, :], np.zeros((N, spec.levy.m)),
            np.zeros(N), False,
        ) * dt
        y0_se = float(np.std(target0, ddof=1) / np.sqrt(N))
        worst_move = float(clamp_move.max(initial=0.0))
        if worst_move > 0.01 * max(1.0, bound):
            warnings.append(
                f"clamp moved fitted values by up to {worst_move:.3g} "
                f"(bound {bound:.3g}): solution rides the a-priori rail"
            )
        return BsdeSolution(
            grid=grid, batch=batch, y0=y0, y0_se=y0_se, y_real=y_post,
            z_real=z_post, w_def_real=np.zeros((N, n)), clamp_bound=bound,
            clamp_hits=clamp_hits, clamp_move=clamp_move,
            cond_max=cond_max, stopped=False,
            fits_pre=fits_post, fits_post=fits_post, basis_degree=basis_degree,
            warnings=warnings,
        )

    # ---- pre-default layer ----
    H = batch.enlargement.H  # 1 from the first node at/past tau
    alive = H == 0.0
    y_pre = np.full((N, n + 1), np.nan)
    y_pre[alive[:, n], n] = claim.evaluate(
        batch.s[alive[:, n], n, :], np.zeros(int(alive[:, n].sum())), tau_cap[alive[:, n]]
    )
    fits_pre: list[dict] = []
    w_def_real = np.zeros((N, n))
    z_real = z_post.copy()
    target0 = None
    for k in range(n - 1, -1, -1):
        sel = alive[:, k]
        ns = int(sel.sum())
        if ns == 0:
            fits_pre.insert(0, {"z": None, "y": None})
            continue
        nxt = alive[:, k + 1]
        v_next = np.where(nxt, y_pre[:, k + 1], y_post[:, k + 1])[sel]
        X = _features(log_s[sel, k, :], basis_degree)
        fit_z = _fit(X, v_next[:, None] * batch.dB[sel, k, :] / dt)
        z_hat = fit_z.predict(X)
        # default integrand from the two level-(k+1) value functions at S_{k+1}
        if k + 1 == n:
            y_pre_next = claim.evaluate(
                batch.s[sel, k + 1, :], np.zeros(ns), np.full(ns, grid.T)
            )
        else:
            Xn = _features(log_s[sel, k + 1, :], basis_degree)
            y_pre_next = np.clip(
                fits_pre[0]["y"].predict(Xn)[:, 0], -bound, bound
            ) if fits_pre[0]["y"] is not None else y_post[sel, k + 1]
        w_def = y_post[sel, k + 1] - y_pre_next
        f_k = generator_f(spec, float(grid.nodes[k]), z_hat,
                          np.zeros((ns, spec.levy.m)), w_def, pre_default=True)
        fit_y = _fit(X, v_next + f_k * dt)
        y_pre[sel, k] = clamp(fit_y.predict(X)[:, 0], k)
        z_real[sel, k, :] = z_hat
        w_def_real[sel, k] = w_def
        cond_max = max(cond_max, fit_z.cond, fit_y.cond)
        fits_pre.insert(0, {"z": fit_z, "y": fit_y})
        if k == 0:
            target0 = v_next + f_k * dt

    y_real = np.where(alive, y_pre, y_post)
    y0 = float(y_real[0, 0])
    y0_se = float(np.std(target0, ddof=1) / np.sqrt(N)) if target0 is not None else 0.0
    worst_move = float(clamp_move.max(initial=0.0))
    if worst_move > 0.01 * max(1.0, bound):
        warnings.append(
            f"clamp moved fitted values by up to {worst_move:.3g} "
            f"(bound {bound:.3g}): solution rides the a-priori rail"
        )
    return BsdeSolution(
        grid=grid, batch=batch, y0=y0, y0_se=y0_se, y_real=y_real, z_real=z_real,
        w_def_real=w_def_real, clamp_bound=bound, clamp_hits=clamp_hits,
        clamp_move=clamp_move, cond_max=cond_max, stopped=False,
        fits_pre=fits_pre, fits_post=fits_post,
        basis_degree=basis_degree, warnings=warnings,
    )


# ------------------------------------------------------------- ODE reduction
@dataclass
class DeterministicSolution:
    """Exact reduction for price-independent claims: pre-default value y_pre on
    the grid, at-default value y_post(t) (the value the solution jumps to if
    default happens at t), and a Richardson error bound for the integrator."""

    grid: TimeGrid
    y_pre: np.ndarray
    y_post: np.ndarray
    error_bound: float
    stopped: bool

    @property
    def y0(self) -> float:
        return float(self.y_pre[0])

    @property
    def y0_se(self) -> float:
        return 0.0


def _claim_split(claim: ClaimSpec):
    if claim.kind == "zero":
        return 0.0, (lambda t: np.zeros(np.shape(t)))
    if claim.kind == "constant":
        c = claim.params["c"]
        return c, (lambda t: np.full(np.shape(t), c))
    if claim.kind == "survival":
        g1 = claim.params["g1"]
        g2 = claim.params["g2"]
        g2_fn = g2 if callable(g2) else (lambda t, _c=g2: np.full(np.shape(t), _c))
        return g1, g2_fn
    raise ValueError(
        "claim not of admissible form: the deterministic reduction needs a "
        "price-independent payoff (survival/constant/zero)"
    )


def _rk4_backward(rhs, y_T: float, grid: TimeGrid, substeps: int) -> np.ndarray:
    """Classical RK4 from T down to 0, substeps per grid step; returns nodes."""
    n = grid.n_steps
    h = -grid.dt / substeps
    y = np.empty(n + 1)
    y[n] = y_T
    val = y_T
    for k in range(n - 1, -1, -1):
        t = float(grid.nodes[k + 1])
        for _ in range(substeps):
            k1 = rhs(t, val)
            k2 = rhs(t + 0.5 * h, val + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, val + 0.5 * h * k2)
            k4 = rhs(t + h, val + h * k3)
            val = val + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        y[k] = val
    return y


def solve_ode_deterministic(
    spec: GeneratorSpec, claim: ClaimSpec, grid: TimeGrid, stopped: bool = False
) -> DeterministicSolution:
    """Scalar backward reduction for deterministic coefficients and claims
    g1 1{tau > T} + g2(tau ^ T) 1{tau <= T}.

    Pre-default:  y' = |phi|^2/(2 alpha) - (lambda/alpha)(e^{alpha w} - 1),
    with w(t) = y_post(t) - y_pre(t).  Fixed horizon: y_post(t) = g2(t) -
    int_t^T |phi|^2/(2 alpha) (the post-default problem keeps the trading
    drift); stopped: y_post(t) = g2(t) (the value freezes at default).
    """
    g1, g2_fn = _claim_split(claim)
    alpha = spec.alpha
    lam = spec.intensity.lam

    def y_post_at(t):
        base = np.asarray(g2_fn(t), dtype=float)
        if stopped:
            return base
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        tail = np.array([spec.market.phi_sq_integral(ti, grid.T) for ti in t_arr])
        tail = tail.reshape(np.shape(base)) if np.shape(base) else float(tail[0])
        return base - tail / (2.0 * alpha)

    def rhs(t, y):
        w = float(y_post_at(t)) - y
        phi = spec.market.phi_at(t)
        drift = float(phi @ phi) / (2.0 * alpha)
        return drift - float(lam(t)) / alpha * np.expm1(alpha * w)

    y_coarse = _rk4_backward(rhs, g1, grid, substeps=4)
    y_fine = _rk4_backward(rhs, g1, grid, substeps=8)
    error = float(np.max(np.abs(y_fine - y_coarse))) / 15.0
    y_post_nodes = np.asarray(y_post_at(grid.nodes), dtype=float)
    return DeterministicSolution(
        grid=grid, y_pre=y_fine, y_post=y_post_nodes, error_bound=error, stopped=stopped
    )


# ------------------------------------------------------------ stopped solver
def solve_random_horizon(
    spec: GeneratorSpec,
    claim: ClaimSpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    basis_degree: int = 2,
    workers: int = 1,
    batch: ScenarioBatch | None = None,
) -> BsdeSolution:
    """Stopped-horizon regression solve: driver 1{pre-default} f, value frozen
    at the default-time payoff, integrands zero after default.

    The claim must be tagged G_T_tau and may load on tau; the post-default
    value function is the explicit frozen payoff g(S_{default node}, 1, tau).
    """
    if spec.horizon != "stopped_T_tau":
        raise ValueError("solve_random_horizon needs a stopped-horizon generator")
    if claim.measurability != "G_T_tau":
        raise ValueError(
            "claim fails the measurability check: the stopped solver needs a "
            "G_T_tau-tagged payoff depending on (S_{tau ^ T}, H_T, tau ^ T)"
        )
    if batch is None:
        batch = simulate(spec.market, spec.levy, spec.intensity, grid,
                         n_paths=n_paths, seed=seed, workers=workers)
    N, n, d = batch.dB.shape
    dt = grid.dt
    bound = apriori_bound(spec, claim, grid.T)
    log_s = np.log(batch.s)
    H = batch.enlargement.H
    alive = H == 0.0
    tau = batch.default.tau
    dstep = batch.default.default_step

    # frozen value at default: payoff at the default node with exact tau
    frozen = np.zeros(N)
    hit = dstep >= 0
    if np.any(hit):
        s_at_default = batch.s[hit, dstep[hit], :]
        frozen[hit] = claim.evaluate(s_at_default, np.ones(int(hit.sum())), tau[hit])

    clamp_hits = np.zeros(n, dtype=np.int64)
    clamp_move = np.zeros(n)
    cond_max = 0.0
    warnings: list[str] = []
    y_pre = np.full((N, n + 1), np.nan)
    y_pre[alive[:, n], n] = claim.evaluate(
        batch.s[alive[:, n], n, :],
        np.zeros(int(alive[:, n].sum())),
        np.full(int(alive[:, n].sum()), grid.T),
    )
    fits_pre: list[dict] = []
    z_real = np.zeros((N, n, d))
    w_def_real = np.zeros((N, n))
    target0 = None
    for k in range(n - 1, -1, -1):
        sel = alive[:, k]
        ns = int(sel.sum())
        if ns == 0:
            fits_pre.insert(0, {"z": None, "y": None})
            continue
        nxt = alive[:, k + 1]
        v_next = np.where(nxt, y_pre[:, k + 1], frozen)[sel]
        X = _features(log_s[sel, k, :], basis_degree)
        fit_z = _fit(X, v_next[:, None] * batch.dB[sel, k, :] / dt)
        z_hat = fit_z.predict(X)
        t_next = float(grid.nodes[k + 1])
        y_post_next = claim.evaluate(
            batch.s[sel, k + 1, :], np.ones(ns), np.full(ns, t_next)
        )
        if k + 1 == n:
            y_pre_next = claim.evaluate(
                batch.s[sel, n, :], np.zeros(ns), np.full(ns, grid.T)
            )
        else:
            Xn = _features(log_s[sel, k + 1, :], basis_degree)
            y_pre_next = np.clip(
                fits_pre[0]["y"].predict(Xn)[:, 0], -bound, bound
            ) if fits_pre[0]["y"] is not None else y_post_next
        w_def = y_post_next - y_pre_next
        f_k = generator_f(spec, float(grid.nodes[k]), z_hat,
                          np.zeros((ns, spec.levy.m)), w_def, pre_default=True)
        fit_y = _fit(X, v_next + f_k * dt)
        vals = fit_y.predict(X)[:, 0]
        excess = np.abs(vals) - bound
        clamp_hits[k] += int(np.count_nonzero(excess > 0.0))
        if vals.size:
            clamp_move[k] = max(clamp_move[k], float(np.max(excess, initial=0.0)))
        y_pre[sel, k] = np.clip(vals, -bound, bound)
        z_real[sel, k, :] = z_hat
        w_def_real[sel, k] = w_def
        cond_max = max(cond_max, fit_z.cond, fit_y.cond)
        fits_pre.insert(0, {"z": fit_z, "y": fit_y})
        if k == 0:
            target0 = v_next + f_k * dt

    y_real = np.where(alive, y_pre, frozen[:, None])
    y0 = float(y_real[0, 0])
    y0_se = float(np.std(target0, ddof=1) / np.sqrt(N)) if target0 is not None else 0.0
    worst_move = float(clamp_move.max(initial=0.0))
    if worst_move > 0.01 * max(1.0, bound):
        warnings.append(
            f"clamp moved fitted values by up to {worst_move:.3g} "
            f"(bound {bound:.3g}): solution rides the a-priori rail"
        )
    return BsdeSolution(
        grid=grid, batch=batch, y0=y0, y0_se=y0_se, y_real=y_real, z_real=z_real,
        w_def_real=w_def_real, clamp_bound=bound, clamp_hits=clamp_hits,
        clamp_move=clamp_move, cond_max=cond_max, stopped=True,
        fits_pre=fits_pre, fits_post=[],
        basis_degree=basis_degree, warnings=warnings,
    )
