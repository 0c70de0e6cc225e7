"""Model specifications, time grids, deterministic randomness, and validation.

Everything downstream (simulation, tree oracle, BSDE solvers) consumes the
immutable spec objects defined here.  All coefficient functions of time are
deterministic; structured kinds (constant / affine / piecewise-constant) carry
exact integrals and exact inverse cumulative integrals so that hazard
quadrature never pollutes identity checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "TimeFunction",
    "TimeGrid",
    "FiniteLevyMeasure",
    "IntensitySpec",
    "MarketSpec",
    "ClaimSpec",
    "ValidationReport",
    "build_grid",
    "derive_stream",
    "validate_model",
    "claim_zero",
    "claim_constant",
    "claim_survival",
    "claim_default_indicator",
    "claim_capped_call",
]


def _adaptive_simpson(fn, a, b, tol=1e-10, depth=28):
    """Adaptive composite Simpson quadrature with absolute tolerance."""

    def simpson(fa, fm, fb, a_, b_):
        return (b_ - a_) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a_, b_, fa, fm, fb, whole, d):
        m = 0.5 * (a_ + b_)
        lm, rm = 0.5 * (a_ + m), 0.5 * (m + b_)
        flm, frm = fn(lm), fn(rm)
        left = simpson(fa, flm, fm, a_, m)
        right = simpson(fm, frm, fb, m, b_)
        if d <= 0 or abs(left + right - whole) < 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return recurse(a_, m, fa, flm, fm, left, d - 1) + recurse(
            m, b_, fm, frm, fb, right, d - 1
        )

    if a == b:
        return 0.0
    fa, fb = fn(a), fn(b)
    m = 0.5 * (a + b)
    fm = fn(m)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), depth)


@dataclass(frozen=True)
class TimeFunction:
    """Deterministic scalar function of time t >= 0.

    Kinds:
      * ``constant``:  c
      * ``affine``:    a + b*t
      * ``piecewise``: right-continuous constant segments; the last value
        extends beyond the last knot
      * ``callable``:  arbitrary fn(t); integrals use adaptive Simpson with
        absolute tolerance 1e-10

    ``integral`` is closed-form (exact) for the first three kinds, which is
    what keeps the -log A identities below machine-precision tight.
    """

    kind: str
    c: float = 0.0
    a: float = 0.0
    b: float = 0.0
    knots: np.ndarray | None = None
    values: np.ndarray | None = None
    fn: Callable[[float], float] | None = None
    bound: float | None = None  # declared sup over the horizon of use

    # -- constructors ------------------------------------------------------
    @staticmethod
    def constant(c: float) -> "TimeFunction":
        return TimeFunction(kind="constant", c=float(c), bound=abs(float(c)))

    @staticmethod
    def affine(a: float, b: float) -> "TimeFunction":
        return TimeFunction(kind="affine", a=float(a), b=float(b))

    @staticmethod
    def piecewise(knots: Sequence[float], values: Sequence[float]) -> "TimeFunction":
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if k.ndim != 1 or v.ndim != 1 or k.size != v.size or k.size == 0:
            raise ValueError("piecewise needs equal-length 1-d knots and values")
        if k[0] != 0.0 or np.any(np.diff(k) <= 0.0):
            raise ValueError("knots must start at 0 and increase strictly")
        return TimeFunction(
            kind="piecewise", knots=k, values=v, bound=float(np.max(np.abs(v)))
        )

    @staticmethod
    def from_callable(fn: Callable[[float], float], bound: float) -> "TimeFunction":
        return TimeFunction(kind="callable", fn=fn, bound=float(bound))

    # -- evaluation --------------------------------------------------------
    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.c)
        elif self.kind == "affine":
            out = self.a + self.b * t
        elif self.kind == "piecewise":
            idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, None)
            out = self.values[idx]
        else:
            out = np.vectorize(self.fn, otypes=[float])(t)
        return out if out.ndim else float(out)

    def cumulative(self, t: float) -> float:
        """Integral from 0 to t (t may exceed the last knot)."""
        return self.integral(0.0, t)

    def cumulative_at(self, t) -> np.ndarray:
        """Vectorized integral from 0 to each entry of t (any array shape).

        Uses the same closed forms as ``integral`` so that scalar and batched
        evaluations agree bit-for-bit for structured kinds.
        """
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return self.c * t
        if self.kind == "affine":
            return self.a * t + 0.5 * self.b * t * t
        if self.kind == "piecewise":
            seg = np.diff(self.knots)
            cum_knots = np.concatenate([[0.0], np.cumsum(self.values[:-1] * seg)])
            idx = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, None)
            return cum_knots[idx] + self.values[idx] * (t - self.knots[idx])
        return np.vectorize(lambda s: self.integral(0.0, s), otypes=[float])(t)

    def integral(self, lo: float, hi: float) -> float:
        if hi < lo:
            return -self.integral(hi, lo)
        if self.kind == "constant":
            return self.c * (hi - lo)
        if self.kind == "affine":
            return self.a * (hi - lo) + 0.5 * self.b * (hi * hi - lo * lo)
        if self.kind == "piecewise":
            edges = np.concatenate([self.knots, [np.inf]])
            total = 0.0
            for i, v in enumerate(self.values):
                seg_lo = max(lo, edges[i])
                seg_hi = min(hi, edges[i + 1])
                if seg_hi > seg_lo:
                    total += v * (seg_hi - seg_lo)
            return total
        return _adaptive_simpson(self.fn, lo, hi)

    def inverse_cumulative(self, theta: float) -> float:
        """Smallest t with integral(0, t) >= theta; inf when never reached.

        Exact for constant/affine/piecewise kinds; bracketing root find for
        callables (the function is assumed nonnegative so the cumulative is
        nondecreasing).
        """
        if theta <= 0.0:
            return 0.0
        if self.kind == "constant":
            return theta / self.c if self.c > 0.0 else math.inf
        if self.kind == "affine":
            # solve a*t + b*t^2/2 = theta on the range where a + b*t >= 0
            a, b = self.a, self.b
            if b == 0.0:
                return theta / a if a > 0.0 else math.inf
            if b > 0.0:
                return (-a + math.sqrt(a * a + 2.0 * b * theta)) / b
            t_zero = a / -b  # hazard hits zero here; cumulative caps
            cap = a * t_zero + 0.5 * b * t_zero * t_zero
            if theta >= cap:
                return math.inf
            return (-a + math.sqrt(a * a + 2.0 * b * theta)) / b
        if self.kind == "piecewise":
            acc = 0.0
            edges = np.concatenate([self.knots, [np.inf]])
            for i, v in enumerate(self.values):
                seg = edges[i + 1] - edges[i]
                gain = v * seg if np.isfinite(seg) else (math.inf if v > 0 else 0.0)
                if acc + gain >= theta:
                    if v <= 0.0:
                        return math.inf
                    return float(edges[i] + (theta - acc) / v)
                acc += gain
            return math.inf
        # callable: expand the bracket geometrically, then bisect via brentq
        from scipy.optimize import brentq

        hi = 1.0
        while self.cumulative(hi) < theta:
            hi *= 2.0
            if hi > 1e9:
                return math.inf
        return float(brentq(lambda t: self.cumulative(t) - theta, 0.0, hi, xtol=1e-14))

    def sup_on(self, lo: float, hi: float) -> float:
        """Exact sup of |f| on [lo, hi] for structured kinds, declared bound otherwise."""
        if self.kind == "constant":
            return abs(self.c)
        if self.kind == "affine":
            return max(abs(self.a + self.b * lo), abs(self.a + self.b * hi))
        if self.kind == "piecewise":
            return float(np.max(np.abs(self.values)))
        if self.bound is None:
            raise ValueError("callable TimeFunction requires a declared bound")
        return self.bound


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with n_steps steps; nodes t_k = k*dt."""

    T: float
    n_steps: int
    dt: float
    nodes: np.ndarray

    def __post_init__(self):
        if self.T <= 0.0 or self.n_steps < 1:
            raise ValueError("grid needs T > 0 and n_steps >= 1")


def build_grid(T: float, n_steps: int) -> TimeGrid:
    if T <= 0.0:
        raise ValueError("horizon T must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    dt = T / n_steps
    nodes = np.linspace(0.0, T, n_steps + 1)
    return TimeGrid(T=float(T), n_steps=int(n_steps), dt=dt, nodes=nodes)


def derive_stream(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based per-path stream: (seed, path_index) keys a Philox generator.

    Identical keys give identical draw sequences; distinct path indices give
    statistically independent streams.  This is what makes simulation output
    independent of chunking and worker count.
    """
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), path_index]))


@dataclass(frozen=True)
class FiniteLevyMeasure:
    """Finite jump measure of the auxiliary process: atoms x_i with weights w_i
    and bounded time densities zeta_i(t); step intensity of atom i is
    zeta_i(t) * w_i."""

    atoms: np.ndarray  # (m, d), every row nonzero
    weights: np.ndarray  # (m,), positive
    zeta: tuple  # m TimeFunctions

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "zeta", tuple(self.zeta))
        if self.m:
            if np.any(np.all(atoms == 0.0, axis=1)):
                raise ValueError("every atom must be nonzero")
            if np.any(self.weights <= 0.0):
                raise ValueError("every weight must be positive")
        if len(self.zeta) != self.m:
            raise ValueError("need one zeta per atom")

    @property
    def m(self) -> int:
        return 0 if self.atoms.size == 0 else self.atoms.shape[0]

    @staticmethod
    def none(d: int = 1) -> "FiniteLevyMeasure":
        return FiniteLevyMeasure(
            atoms=np.zeros((0, d)), weights=np.zeros(0), zeta=()
        )

    def rate(self, i: int, t) -> float:
        """Intensity of atom i at time t: zeta_i(t) * w_i."""
        return self.zeta[i](t) * self.weights[i]

    def rate_integral(self, i: int, lo: float, hi: float) -> float:
        return self.zeta[i].integral(lo, hi) * self.weights[i]

    def rate_sup(self, lo: float, hi: float) -> float:
        return sum(self.zeta[i].sup_on(lo, hi) * self.weights[i] for i in range(self.m))


@dataclass(frozen=True)
class IntensitySpec:
    """Deterministic default intensity 0 <= lambda(t) <= lam_max."""

    rate: TimeFunction

    def lam(self, t):
        return self.rate(t)

    def cumulative(self, t: float) -> float:
        return self.rate.cumulative(t)

    def integral(self, lo: float, hi: float) -> float:
        return self.rate.integral(lo, hi)

    def inverse_cumulative(self, theta: float) -> float:
        return self.rate.inverse_cumulative(theta)

    def lam_max(self, lo: float, hi: float) -> float:
        return self.rate.sup_on(lo, hi)


@dataclass(frozen=True)
class MarketSpec:
    """Market coefficients: d assets, volatility sigma(t) (d x d, invertible),
    market price of risk phi(t), initial prices S0, risk aversion alpha,
    initial wealth x.  The risk-free rate is zero."""

    d: int
    sigma: np.ndarray | Callable[[float], np.ndarray]
    phi: np.ndarray | Callable[[float], np.ndarray]
    s0: np.ndarray
    alpha: float
    x: float = 0.0
    phi_max: float | None = None  # declared bound on |phi(t)|; computed for constants

    def __post_init__(self):
        object.__setattr__(self, "s0", np.atleast_1d(np.asarray(self.s0, dtype=float)))
        if not callable(self.sigma):
            object.__setattr__(
                self, "sigma", np.asarray(self.sigma, dtype=float).reshape(self.d, self.d)
            )
        if not callable(self.phi):
            phi = np.asarray(self.phi, dtype=float).reshape(self.d)
            object.__setattr__(self, "phi", phi)
            if self.phi_max is None:
                object.__setattr__(self, "phi_max", float(np.linalg.norm(phi)))
        if self.alpha <= 0.0:
            raise ValueError("risk aversion alpha must be positive")
        if np.any(self.s0 <= 0.0):
            raise ValueError("every initial price must be positive")
        if self.s0.shape != (self.d,):
            raise ValueError("S0 must have one entry per asset")
        if callable(self.phi) and self.phi_max is None:
            raise ValueError("callable phi requires a declared phi_max")

    def sigma_at(self, t: float) -> np.ndarray:
        return self.sigma(t) if callable(self.sigma) else self.sigma

    def phi_at(self, t: float) -> np.ndarray:
        return self.phi(t) if callable(self.phi) else self.phi

    def phi_sq_integral(self, lo: float, hi: float) -> float:
        """Integral of |phi(t)|^2, exact for constant phi."""
        if not callable(self.phi):
            return float(self.phi @ self.phi) * (hi - lo)
        return _adaptive_simpson(
            lambda t: float(np.dot(self.phi_at(t), self.phi_at(t))), lo, hi
        )


_MEASURABILITY = ("F_T", "G_T", "G_T_tau")


@dataclass(frozen=True)
class ClaimSpec:
    """Bounded terminal payoff g(S_T, H_T, tau ^ T) with a declared sup bound.

    The bound is enforced on every evaluated sample; a violation aborts rather
    than clips, so downstream clamp logic stays honest.  ``kind``/``params``
    describe the payoff structurally for solvers that need more than a black
    box (the ODE reduction, the random-horizon freeze).
    """

    payoff: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    bound: float
    measurability: str = "G_T"
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bound < 0.0 or not np.isfinite(self.bound):
            raise ValueError("claim bound must be finite and nonnegative")
        if self.measurability not in _MEASURABILITY:
            raise ValueError(f"measurability must be one of {_MEASURABILITY}")

    def evaluate(self, s_T: np.ndarray, h_T: np.ndarray, tau_capped: np.ndarray):
        val = np.asarray(
            self.payoff(np.asarray(s_T, dtype=float), np.asarray(h_T), np.asarray(tau_capped)),
            dtype=float,
        )
        worst = float(np.max(np.abs(val))) if val.size else 0.0
        if worst > self.bound * (1.0 + 1e-12) + 1e-15:
            raise ValueError(
                f"payoff sample {worst:.6g} exceeds the declared bound {self.bound:.6g}"
            )
        return val


def claim_zero() -> ClaimSpec:
    return ClaimSpec(
        payoff=lambda s, h, t: np.zeros(np.shape(h)), bound=0.0,
        measurability="F_T", kind="zero",
    )


def claim_constant(c: float) -> ClaimSpec:
    return ClaimSpec(
        payoff=lambda s, h, t: np.full(np.shape(h), float(c)), bound=abs(float(c)),
        measurability="F_T", kind="constant", params={"c": float(c)},
    )


def claim_survival(
    g1: float, g2, measurability: str = "G_T", bound: float | None = None
) -> ClaimSpec:
    """g1 on survival, g2 on default; g2 may be a constant or a function of tau ^ T
    (a callable g2 requires an explicit declared bound)."""
    if callable(g2):
        if bound is None:
            raise ValueError("callable recovery g2 requires a declared bound")
        g2_fn, g2_bound = g2, float(bound)
    else:
        g2_fn = lambda t, _c=float(g2): np.full(np.shape(t), _c)  # noqa: E731
        g2_bound = abs(float(g2))

    def payoff(s, h, t):
        h = np.asarray(h, dtype=float)
        return g1 * (1.0 - h) + np.asarray(g2_fn(t), dtype=float) * h

    return ClaimSpec(
        payoff=payoff,
        bound=max(abs(float(g1)), g2_bound),
        measurability=measurability,
        kind="survival",
        params={"g1": float(g1), "g2": g2 if callable(g2) else float(g2)},
    )


def claim_default_indicator() -> ClaimSpec:
    """1 if default happens by T -- the standard stopped-horizon test claim."""
    return claim_survival(0.0, 1.0, measurability="G_T_tau")


def claim_capped_call(strike: float, cap: float, asset: int = 0) -> ClaimSpec:
    """min((S_T^asset - K)^+, cap): a bounded smooth-ish claim on the price."""

    def payoff(s, h, t):
        s = np.atleast_2d(s)
        return np.minimum(np.maximum(s[:, asset] - strike, 0.0), cap)

    return ClaimSpec(
        payoff=payoff, bound=float(cap), measurability="F_T",
        kind="call", params={"strike": float(strike), "cap": float(cap), "asset": asset},
    )


@dataclass
class ValidationReport:
    """Outcome of validate_model: hard violations, warnings, and the serial-event
    budget (lam_max + sum_i zeta_max_i w_i) * dt that gates oracle use."""

    errors: list
    warnings: list
    budget: float
    oracle_usable: bool

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_model(
    market: MarketSpec,
    levy: FiniteLevyMeasure,
    intensity: IntensitySpec,
    grid: TimeGrid,
) -> ValidationReport:
    """Check every declared coefficient bound on the grid nodes and report the
    serial-event budget.  Budget >= 1 is a warning for Monte Carlo use and an
    error for oracle (event-tree) use."""
    errors: list[str] = []
    warnings: list[str] = []

    for t in grid.nodes:
        sig = market.sigma_at(float(t))
        if sig.shape != (market.d, market.d):
            errors.append(f"sigma({t:g}) has shape {sig.shape}, want ({market.d},{market.d})")
            break
        if abs(np.linalg.det(sig)) < 1e-300:
            errors.append(f"singular volatility at t={t:g}")
            break

    phi_vals = np.array([np.linalg.norm(market.phi_at(float(t))) for t in grid.nodes])
    if market.phi_max is None or not np.isfinite(market.phi_max):
        errors.append("phi bound missing or infinite")
    elif np.any(phi_vals > market.phi_max * (1.0 + 1e-12)):
        errors.append("phi exceeds its declared bound on the grid")

    lam_vals = np.asarray(intensity.lam(grid.nodes), dtype=float)
    lam_max = intensity.lam_max(0.0, grid.T)
    if not np.isfinite(lam_max):
        errors.append("intensity bound is not finite")
    if np.any(lam_vals < 0.0):
        errors.append("negative intensity on the grid")
    elif np.any(lam_vals > lam_max * (1.0 + 1e-12) + 1e-300):
        errors.append("intensity exceeds its declared bound on the grid")

    if levy.m and levy.atoms.shape[1] != market.d:
        errors.append("atom dimension does not match the market dimension")
    zeta_mass = 0.0
    for i in range(levy.m):
        zi = np.asarray(levy.zeta[i](grid.nodes), dtype=float)
        zi_max = levy.zeta[i].sup_on(0.0, grid.T)
        if np.any(zi < 0.0):
            errors.append(f"negative jump density for atom {i}")
        elif np.any(zi > zi_max * (1.0 + 1e-12) + 1e-300):
            errors.append(f"jump density for atom {i} exceeds its declared bound")
        zeta_mass += zi_max * levy.weights[i]

    budget = (lam_max + zeta_mass) * grid.dt
    oracle_usable = bool(budget < 1.0) and not errors
    if budget >= 1.0:
        warnings.append(
            f"serial-event budget {budget:.6g} >= 1: Monte Carlo only, oracle unusable"
        )
    return ValidationReport(
        errors=errors, warnings=warnings, budget=float(budget), oracle_usable=oracle_usable
    )


def ensure_valid(report: ValidationReport) -> None:
    """Raise with the collected messages when a validation report has errors."""
    if report.errors:
        raise ValueError("; ".join(report.errors))
