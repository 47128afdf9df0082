"""How large is the Euler error on a pendulum, and does the filter know?

We observe a pendulum (length 3) through noisy measurements, integrate it
with Euler at h = 0.05, and let the particle filter infer how far the
numerical trajectory drifts from the truth. The exact error is known here
because we can integrate with a very fine RK4 grid, so we can check how
often the 95% band actually covers it.
"""

import numpy as np

from discvar import FilterConfig, credible_band, exact_errors, run_filter, sigma_summary
from discvar._streams import OBSERVATIONS, stream
from discvar.config import load_preset

cfg = load_preset("pendulum-quantify-ci")
obs = cfg.observations(stream(cfg.seed, OBSERVATIONS))
prior = cfg.prior()
print(f"{len(obs)} observations, Euler step {cfg.grid.h}, prior alpha={prior.alpha:g} beta={prior.beta:g}")

res = run_filter(cfg.system, cfg.theta, obs, cfg.grid, prior, cfg.init_prior(), cfg.op,
                 FilterConfig(cfg.particles, seed=cfg.seed), cfg.x0)
print(f"log marginal likelihood: {res.log_marginal:.3f}")

# exact error from a fine reference solution
exact = exact_errors(cfg.theta, cfg.x0, cfg.grid, cfg.system)
summary = sigma_summary(res.sigma)
rng = np.random.default_rng(1)
for c, name in enumerate(["angle", "angular velocity"]):
    lo, hi = credible_band(res.sigma, c, rng=rng)
    inside = (exact[:, c] >= lo) & (exact[:, c] <= hi)
    print(f"\n{name}: band covers the exact error at {inside.mean():.0%} of times")
    print("   t   |exact err|  median sigma   95% band")
    for i in range(0, len(obs), 8):
        print(f"{obs.times[i]:5.1f}  {abs(exact[i, c]):10.4f}  {summary['q500'][i, c]:12.4f}"
              f"   [{lo[i]:+.3f}, {hi[i]:+.3f}]")
