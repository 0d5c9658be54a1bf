"""Checking the sampler against its own prior.

Independent prior-then-data draws and a chain that alternates a Gibbs
sweep with fresh data both target the same joint law.  Their means agree
for every monitored statistic when all conditional updates are right.
A smaller run than the test suite's, so the z-scores are noisier.
"""
from psc.diagnostics import geweke_test
from psc.priors import PriorConfig

res = geweke_test(PriorConfig(theta_scale=1.0), k=1, m=3, c=2, n=20, T=5,
                  draws=5000, iterations=5000, seed=1)
print(res.table())
print("all |z| <= 3:", res.passed())
