"""Default times by hazard-threshold inversion and the derived filtration objects.

The random time tau is always generated by drawing a unit-exponential threshold
Theta and inverting the integrated hazard: tau = inf{t : int_0^t lambda >= Theta}.
For deterministic lambda this makes the survival process A_t = exp(-int_0^t lambda),
the stopped compensator Lambda_k = int_0^{tau ^ t_k} lambda, the default
martingale M = H - Lambda, and its stochastic exponential U all exact up to a
single rounding of exp/log, which is what the machine-precision identity checks
in the test-suite rely on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import IntensitySpec, TimeGrid, derive_stream

__all__ = [
    "DefaultRecord",
    "EnlargementPaths",
    "azema",
    "sample_default",
    "sample_default_batch",
    "enlargement_paths",
    "joint_compensator_residual",
]


@dataclass(frozen=True)
class DefaultRecord:
    """Sampled default data for a batch of paths (single path = length-1 arrays).

    tau is the exact continuous default time (inf when the hazard never reaches
    the threshold); default_step is the first grid node index with t_k >= tau,
    or -1 when tau > T.
    """

    tau: np.ndarray
    theta: np.ndarray
    default_step: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.tau.shape[0]

    def defaulted(self, T: float) -> np.ndarray:
        return self.tau <= T


@dataclass(frozen=True)
class EnlargementPaths:
    """Grid-sampled filtration objects for a batch of paths.

    A is deterministic (shared across paths, shape (n+1,)); Lambda, H, M, U
    have shape (n_paths, n+1).  Identities held exactly by construction:
    M = H - Lambda, Lambda frozen after default, U = exp(Lambda) pre-default
    and 0 from the first node at or past tau.
    """

    A: np.ndarray
    Lambda: np.ndarray
    H: np.ndarray
    M: np.ndarray
    U: np.ndarray


def azema(intensity: IntensitySpec, t) -> float | np.ndarray:
    """Survival probability A_t = exp(-int_0^t lambda(s) ds); scalar or array t."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("azema needs t >= 0")
    out = np.exp(-intensity.rate.cumulative_at(t_arr))
    return out if out.ndim else float(out)


def _default_step_of(tau: np.ndarray, grid: TimeGrid) -> np.ndarray:
    step = np.searchsorted(grid.nodes, tau, side="left")
    return np.where(tau <= grid.T, step, -1).astype(np.int64)


def sample_default(
    intensity: IntensitySpec, grid: TimeGrid, stream: np.random.Generator
) -> DefaultRecord:
    """Draw one default time: Theta ~ Exp(1), tau = inverse integrated hazard.

    Drawing Theta is the first draw on a path stream; the market simulator
    keeps the same convention so a given (seed, path_index) always produces
    the same tau with or without the rest of the scenario.
    """
    theta = float(stream.standard_exponential())
    tau = intensity.inverse_cumulative(theta)
    tau_arr = np.array([tau])
    return DefaultRecord(
        tau=tau_arr, theta=np.array([theta]), default_step=_default_step_of(tau_arr, grid)
    )


def sample_default_batch(
    intensity: IntensitySpec,
    grid: TimeGrid,
    seed: int,
    n_paths: int,
    path_offset: int = 0,
) -> DefaultRecord:
    """Batch of Cox samples from per-path streams keyed by absolute path index."""
    theta = np.empty(n_paths)
    for i in range(n_paths):
        theta[i] = derive_stream(seed, path_offset + i).standard_exponential()
    tau = np.array([intensity.inverse_cumulative(th) for th in theta])
    return DefaultRecord(
        tau=tau, theta=theta, default_step=_default_step_of(tau, grid)
    )


def enlargement_paths(
    default: DefaultRecord, intensity: IntensitySpec, grid: TimeGrid
) -> EnlargementPaths:
    """Grid paths of (A, Lambda, H, M, U) for a sampled default batch.

    Lambda_k = int_0^{tau ^ t_k} lambda via the same quadrature as ``azema``,
    so Lambda_k + log A(tau ^ t_k) vanishes to rounding.  U is the discrete
    stochastic exponential of -M: the continuous part contributes exp(Lambda)
    and the default jump kills the path, U_k = exp(Lambda_k) * 1{t_k < tau}.
    """
    expected_step = _default_step_of(default.tau, grid)
    if not np.array_equal(expected_step, default.default_step):
        raise ValueError("grid mismatch: default record was sampled on a different grid")

    tau_capped = np.minimum(default.tau[:, None], grid.nodes[None, :])
    Lambda = intensity.rate.cumulative_at(tau_capped)
    H = (grid.nodes[None, :] >= default.tau[:, None]).astype(float)
    A = np.exp(-intensity.rate.cumulative_at(grid.nodes))
    return EnlargementPaths(
        A=A, Lambda=Lambda, H=H, M=H - Lambda, U=np.exp(Lambda) * (1.0 - H)
    )


def joint_compensator_residual(batch, testfn) -> tuple[float, float]:
    """Monte Carlo residual E[W * mu] - E[W * nu] for the joint jump measure of
    (X, H), with its standard error.

    ``testfn(t, x1, x2)`` must be vectorized in t; x1 is the jump-size vector of
    an X-jump (zeros for the default coordinate) and x2 is 1 exactly on the
    default jump.  The mu-side sums W over realized jump events and the default
    event; the nu-side integrates W against zeta(t, x_i) w_i dt for each atom
    and against the stopped hazard lambda dt for the default coordinate.

    ``batch`` is a simulated scenario batch (see market.simulate): it carries
    jump events with exact times, the default record, and the enlargement paths
    whose Lambda increments provide the exact stopped hazard masses.
    """
    grid = batch.grid
    levy = batch.levy
    n_paths = batch.n_paths
    d = levy.atoms.shape[1] if levy.m else batch.s.shape[2]
    zero_vec = np.zeros(d)

    mu = np.zeros(n_paths)
    if batch.event_path.size:
        w_ev = np.empty(batch.event_path.size)
        for i in range(levy.m):
            sel = batch.event_atom == i
            if np.any(sel):
                w_ev[sel] = np.asarray(
                    testfn(batch.event_time[sel], levy.atoms[i], 0), dtype=float
                )
        if not np.all(np.isfinite(w_ev)):
            raise ValueError("unbounded test-function sample on a jump event")
        np.add.at(mu, batch.event_path, w_ev)
    hit = batch.default.defaulted(grid.T)
    if np.any(hit):
        w_def = np.asarray(
            testfn(batch.default.tau[hit], zero_vec, 1), dtype=float
        )
        if not np.all(np.isfinite(w_def)):
            raise ValueError("unbounded test-function sample at default")
        mu[hit] += w_def

    # nu-side: deterministic mark part, pathwise stopped default part
    t_mid = 0.5 * (grid.nodes[:-1] + grid.nodes[1:])
    nu_marks = 0.0
    for i in range(levy.m):
        masses = np.array(
            [levy.rate_integral(i, grid.nodes[k], grid.nodes[k + 1]) for k in range(grid.n_steps)]
        )
        nu_marks += float(
            np.sum(np.asarray(testfn(t_mid, levy.atoms[i], 0), dtype=float) * masses)
        )
    dLambda = np.diff(batch.enlargement.Lambda, axis=1)  # exact stopped hazard masses
    w_mid = np.asarray(testfn(t_mid, zero_vec, 1), dtype=float)
    nu = nu_marks + dLambda @ w_mid

    diff = mu - nu
    resid = float(np.mean(diff))
    se = float(np.std(diff, ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else 0.0
    return resid, se
