"""Picking alpha and beta by marginal likelihood.

Each cell of a grid over (alpha, beta) gets a particle estimate of
log p(y | alpha, beta). Cells where sigma blows up simply score -inf.
The best pairs line up along alpha*beta close to 1, where the
multiplier m has mean one and sigma only grows through the local errors.
"""

import numpy as np

from discvar import GridSpec, RunSpec, search
from discvar._streams import OBSERVATIONS, stream
from discvar.config import load_preset
from discvar.hyperparam_search import heatmap_matrix

cfg = load_preset("pendulum-quantify-ci")
tune = cfg.tune()
obs = cfg.observations(stream(cfg.seed, OBSERVATIONS))
spec = RunSpec(cfg.system, obs, cfg.grid, cfg.op, tuple(cfg.x0), theta=tuple(cfg.theta),
               init_prior=cfg.init_prior(), seed=cfg.seed)
grid = GridSpec(tune["alphas"], tune["betas"], k_eval=tune["k_eval"])
print(f"evaluating {len(grid.pairs())} cells with {grid.k_eval} particles each ...")
result = search(grid, spec)

print("\ntop of the leaderboard")
print(" alpha    beta   alpha*beta   loglik")
for c in result.top(8):
    print(f"{c.alpha:6g}  {c.beta:6g}  {c.alpha * c.beta:9.3f}  {c.loglik:9.2f}")

alphas, betas, ll = heatmap_matrix(result.cells)
best_beta = betas[np.argmax(np.where(np.isfinite(ll), ll, -np.inf), axis=1)]
print("\nbest beta for each alpha (the ridge):")
for a, b in zip(alphas, best_beta):
    print(f"  alpha={a:5g}  beta={b:.4f}  alpha*beta={a * b:.2f}")
print(f"\n{np.mean(~np.isfinite(ll)):.0%} of cells failed (sigma overflow)")
