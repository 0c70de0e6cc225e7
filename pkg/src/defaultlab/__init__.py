"""defaultlab: a numerical laboratory for defaultable markets.

Modules:
  core        -- model specs, time grids, per-path random streams, validation
  enlargement -- Cox default times, survival process, compensator, default martingale
  market      -- price/jump/default simulation, wealth, measure-change weights
  oracle      -- exact event trees: conditional expectations, representations, DP
  bsde        -- generator, regression Monte Carlo, ODE reduction, stopped variant
  utility     -- optimal strategies, value functions, optimality and identity checks
  acceptance  -- the ten pinned acceptance checks shared by tests and the cli
  cli         -- config-driven experiments, reports, artifact emission
"""

__version__ = "0.1.0"
