"""Scenario simulation: prices, auxiliary jumps, default, wealth, measure change.

Per-path randomness comes from ``derive_stream(seed, path_index)`` with a fixed
draw order (threshold, Brownian increments, jump counts, event-time uniforms),
so a path's scenario depends only on its absolute index — chunking and worker
count cannot change any output byte.

Events are serialized: at most one elementary event per step.  Multiple jump
arrivals within a step keep only the earliest, and jump arrivals in the step
containing the default time are dropped; per-step counts are drawn from the
exact Poisson law first, so this thinning is the only (O(dt)-probability)
distortion.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    FiniteLevyMeasure,
    IntensitySpec,
    MarketSpec,
    TimeGrid,
    derive_stream,
    ensure_valid,
    validate_model,
)
from .enlargement import DefaultRecord, EnlargementPaths, _default_step_of, enlargement_paths

__all__ = ["ScenarioBatch", "WealthPath", "simulate", "wealth", "girsanov_weight"]

_CHUNK = 20_000


@dataclass(frozen=True)
class ScenarioBatch:
    """A batch of simulated scenarios (path axis first).

    dB/dBhat: (N, n, d) Brownian and drift-adjusted increments,
    dBhat_k = dB_k + phi(t_k) dt.  s: (N, n+1, d) prices from exact log-Euler.
    Jump events are ragged arrays (event_path/step/atom/time) sorted by path
    then step.  default/enlargement carry the sampled tau data and the derived
    (A, Lambda, H, M, U) paths.
    """

    grid: TimeGrid
    market: MarketSpec
    levy: FiniteLevyMeasure
    intensity: IntensitySpec
    dB: np.ndarray
    dBhat: np.ndarray
    s: np.ndarray
    event_path: np.ndarray
    event_step: np.ndarray
    event_atom: np.ndarray
    event_time: np.ndarray
    default: DefaultRecord
    enlargement: EnlargementPaths
    seed: int
    path_offset: int

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    def log_s(self, k: int | None = None) -> np.ndarray:
        return np.log(self.s if k is None else self.s[:, k, :])


def _step_jump_masses(levy: FiniteLevyMeasure, grid: TimeGrid) -> np.ndarray:
    """(n, m) exact integrated jump intensity per step and atom."""
    masses = np.empty((grid.n_steps, levy.m))
    for i in range(levy.m):
        for k in range(grid.n_steps):
            masses[k, i] = levy.rate_integral(i, grid.nodes[k], grid.nodes[k + 1])
    return masses


def _simulate_chunk(
    market: MarketSpec,
    levy: FiniteLevyMeasure,
    intensity: IntensitySpec,
    grid: TimeGrid,
    seed: int,
    start: int,
    count: int,
    step_masses: np.ndarray,
):
    n, d, m = grid.n_steps, market.d, levy.m
    dt = grid.dt
    sqrt_dt = np.sqrt(dt)
    any_jumps = m > 0 and np.any(step_masses > 0.0)

    theta = np.empty(count)
    dB = np.empty((count, n, d))
    ev_path, ev_step, ev_atom, ev_time = [], [], [], []

    for i in range(count):
        g = derive_stream(seed, start + i)
        theta[i] = g.standard_exponential()
        dB[i] = g.standard_normal(n * d).reshape(n, d) * sqrt_dt
        if any_jumps:
            counts = g.poisson(lam=step_masses)
            for k in np.nonzero(counts.sum(axis=1))[0]:
                c_k = counts[k]
                total = int(c_k.sum())
                u = g.uniform(size=total)
                atoms_k = np.repeat(np.arange(m), c_k)
                first = int(np.argmin(u))
                ev_path.append(i)
                ev_step.append(int(k))
                ev_atom.append(int(atoms_k[first]))
                ev_time.append(grid.nodes[k] + u[first] * dt)

    tau = np.array([intensity.inverse_cumulative(th) for th in theta])
    default = DefaultRecord(
        tau=tau, theta=theta, default_step=_default_step_of(tau, grid)
    )

    ev_path = np.asarray(ev_path, dtype=np.int64)
    ev_step = np.asarray(ev_step, dtype=np.int64)
    ev_atom = np.asarray(ev_atom, dtype=np.int64)
    ev_time = np.asarray(ev_time, dtype=float)
    if ev_path.size:
        # drop jump events in the step that contains tau (serial-event rule)
        containing = np.where(default.default_step[ev_path] >= 1,
                              default.default_step[ev_path] - 1, -2)
        keep = ev_step != containing
        ev_path, ev_step = ev_path[keep], ev_step[keep]
        ev_atom, ev_time = ev_atom[keep], ev_time[keep]

    # exact log-Euler price path
    log_s = np.empty((count, n + 1, d))
    log_s[:, 0, :] = np.log(market.s0)
    for k in range(n):
        t_k = float(grid.nodes[k])
        sig = market.sigma_at(t_k)
        phi = market.phi_at(t_k)
        dBhat_k = dB[:, k, :] + phi * dt
        log_s[:, k + 1, :] = (
            log_s[:, k, :] + dBhat_k @ sig.T - 0.5 * np.diag(sig @ sig.T) * dt
        )
    return dB, np.exp(log_s), ev_path, ev_step, ev_atom, ev_time, default


def simulate(
    market: MarketSpec,
    levy: FiniteLevyMeasure,
    intensity: IntensitySpec,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    path_offset: int = 0,
    workers: int = 1,
) -> ScenarioBatch:
    """Simulate n_paths scenarios; identical output for any worker count."""
    if n_paths <= 0:
        raise ValueError("n_paths must be positive")
    ensure_valid(validate_model(market, levy, intensity, grid))

    step_masses = _step_jump_masses(levy, grid)
    starts = list(range(0, n_paths, _CHUNK))
    jobs = [
        (market, levy, intensity, grid, seed, path_offset + s,
         min(_CHUNK, n_paths - s), step_masses)
        for s in starts
    ]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _simulate_chunk(*a), jobs))
    else:
        parts = [_simulate_chunk(*a) for a in jobs]

    dB = np.concatenate([p[0] for p in parts])
    s = np.concatenate([p[1] for p in parts])
    ev_path = np.concatenate(
        [p[2] + off for p, off in zip(parts, starts)]
    ) if parts else np.zeros(0, dtype=np.int64)
    ev_step = np.concatenate([p[3] for p in parts])
    ev_atom = np.concatenate([p[4] for p in parts])
    ev_time = np.concatenate([p[5] for p in parts])
    default = DefaultRecord(
        tau=np.concatenate([p[6].tau for p in parts]),
        theta=np.concatenate([p[6].theta for p in parts]),
        default_step=np.concatenate([p[6].default_step for p in parts]),
    )

    n, dt = grid.n_steps, grid.dt
    phi_steps = np.stack([market.phi_at(float(t)) for t in grid.nodes[:-1]])
    dBhat = dB + phi_steps[None, :, :] * dt
    enl = enlargement_paths(default, intensity, grid)
    return ScenarioBatch(
        grid=grid, market=market, levy=levy, intensity=intensity,
        dB=dB, dBhat=dBhat, s=s,
        event_path=ev_path, event_step=ev_step, event_atom=ev_atom, event_time=ev_time,
        default=default, enlargement=enl, seed=seed, path_offset=path_offset,
    )


@dataclass(frozen=True)
class WealthPath:
    """Forward-Euler wealth against the drift-adjusted Brownian motion."""

    x0: float
    X: np.ndarray  # (N, n+1)


def wealth(strategy, batch: ScenarioBatch, x: float) -> WealthPath:
    """X_{k+1} = X_k + theta(t_k, state_k)' dBhat_k with a hard bound check.

    ``strategy`` is any callable (t, log_s (N,d), h (N,)) -> (N, d) carrying a
    ``bound`` attribute; samples beyond the bound abort the run.
    """
    N, n, d = batch.dBhat.shape
    X = np.empty((N, n + 1))
    X[:, 0] = x
    log_s = np.log(batch.s)
    H = batch.enlargement.H
    bound = getattr(strategy, "bound", np.inf)
    for k in range(n):
        theta_k = np.asarray(strategy(float(batch.grid.nodes[k]), log_s[:, k, :], H[:, k]))
        theta_k = np.broadcast_to(theta_k, (N, d))
        worst = float(np.max(np.abs(theta_k))) if theta_k.size else 0.0
        if worst > bound * (1.0 + 1e-12) + 1e-15:
            raise ValueError(
                f"strategy sample {worst:.6g} exceeds its declared bound {bound:.6g}"
            )
        X[:, k + 1] = X[:, k] + np.sum(theta_k * batch.dBhat[:, k, :], axis=1)
    return WealthPath(x0=float(x), X=X)


def girsanov_weight(batch: ScenarioBatch) -> np.ndarray:
    """Discrete density exp(-sum phi' dB - 1/2 sum |phi|^2 dt) per path."""
    dt = batch.grid.dt
    phi_steps = np.stack([batch.market.phi_at(float(t)) for t in batch.grid.nodes[:-1]])
    lin = np.einsum("nkd,kd->n", batch.dB, phi_steps)
    quad = 0.5 * float(np.sum(phi_steps * phi_steps)) * dt
    return np.exp(-lin - quad)
