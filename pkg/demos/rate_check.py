"""Does sigma shrink at the solver's rate as h goes to zero?

With beta = h^2 and alpha = 1/beta the multiplier stays close to one and
sigma accumulates only the Euler local errors, so E||sigma(1)||^2 should
fall like h^2. Starting sigma at a nonzero h-scaled value caps the rate.
"""

from discvar import InitialSigmaPrior, PENDULUM, rate_check

h_list = [0.1, 0.05, 0.025, 0.0125]
for label, init in (("sigma0 = 0", InitialSigmaPrior()),
                    ("sigma0 ~ h^0.5", InitialSigmaPrior(mode="scaled", c0=1.0, exponent=0.5))):
    rep = rate_check(PENDULUM, [3.0], [1.0, 0.0], h_list, init=init, mc_samples=2000, seed=0)
    print(f"\n{label}: fitted slope {rep.slope:.3f} (expected {rep.expected_slope:g})")
    for h, e, se in rep.rows():
        print(f"  h={h:<7g} E||sigma||^2 = {e:.3e} +/- {se:.1e}")
